#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "scl/tape.hpp"
#include "scl/tensor.hpp"

namespace scl {

inline constexpr Real kLayerNormEps = 1e-5f;

/// out[b,o] = sum_i x[b,i] * w[i,o] + bias[o]
Var linear(Var x, Var w, Var bias);

/// Independent linear map per group: x[B,m,I], w[m,I,O], bias[m,O] -> [B,m,O].
Var grouped_linear(Var x, Var w, Var bias);

/// 3x3 cross-correlation with zero padding 1. x[B,C,H,W], k[F,C,3,3], bias[F].
/// Output spatial size is floor((H-1)/stride)+1.
Var conv2d(Var x, Var kernel, Var bias, int stride);

Var relu(Var x);
Var add(Var a, Var b);
Var scale(Var x, Real factor);
Var sum(Var x);

/// Normalizes over the last axis, then applies gamma/beta.
Var layer_norm(Var x, Var gamma, Var beta, Real eps = kLayerNormEps);

Var reshape(Var x, Shape shape);

/// [B,D] -> [B,m,D/m]; throws DimensionError if m does not divide D.
Var split_groups(Var x, std::size_t m);
/// [B,m,G] -> [B,m*G]
Var concat_groups(Var x);

/// Selects rows along axis 0: out[i] = x[index[i]]. Gradients scatter-add back.
Var gather_rows(Var x, std::vector<std::size_t> index);

/// [B,M,N] -> [B,N,M]
Var swap_last_axes(Var x);

/// Mean over rows of -log softmax(scores)[target]. scores[B,K].
Var softmax_cross_entropy(Var scores, std::span<const int> targets);

/// Row-wise softmax of a [B,K] tensor (no gradient).
Tensor softmax(const Tensor& scores);

}  // namespace scl
