#include "scl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "scl/errors.hpp"

namespace scl {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
using VecMap = Eigen::Map<RowVec>;
using ConstVecMap = Eigen::Map<const RowVec>;

MatMap as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
    return MatMap(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMatMap as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
    return ConstMatMap(t.ptr(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_same_tape(Var a, Var b) {
    if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

[[noreturn]] void dim_error(const char* op, const Shape& a, const Shape& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Pulls out the pieces of an im2col lowering for one conv geometry.
struct ConvGeom {
    std::size_t batch, channels, height, width, filters, out_h, out_w;
    int stride;
    std::size_t patch() const { return channels * 9; }
    std::size_t positions() const { return out_h * out_w; }
};

// col[(b*positions + p), c*9 + ky*3 + kx]
void im2col(const Real* x, const ConvGeom& g, Real* col) {
    const std::size_t patch = g.patch();
    for (std::size_t b = 0; b < g.batch; ++b) {
        const Real* img = x + b * g.channels * g.height * g.width;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                Real* row = col + ((b * g.out_h + oy) * g.out_w + ox) * patch;
                const long iy0 = static_cast<long>(oy) * g.stride - 1;
                const long ix0 = static_cast<long>(ox) * g.stride - 1;
                for (std::size_t c = 0; c < g.channels; ++c) {
                    const Real* plane = img + c * g.height * g.width;
                    for (long ky = 0; ky < 3; ++ky) {
                        const long iy = iy0 + ky;
                        const bool row_ok = iy >= 0 && iy < static_cast<long>(g.height);
                        for (long kx = 0; kx < 3; ++kx) {
                            const long ix = ix0 + kx;
                            *row++ = (row_ok && ix >= 0 && ix < static_cast<long>(g.width))
                                         ? plane[iy * static_cast<long>(g.width) + ix]
                                         : 0.0f;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const Real* col, const ConvGeom& g, Real* dx) {
    const std::size_t patch = g.patch();
    for (std::size_t b = 0; b < g.batch; ++b) {
        Real* img = dx + b * g.channels * g.height * g.width;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                const Real* row = col + ((b * g.out_h + oy) * g.out_w + ox) * patch;
                const long iy0 = static_cast<long>(oy) * g.stride - 1;
                const long ix0 = static_cast<long>(ox) * g.stride - 1;
                for (std::size_t c = 0; c < g.channels; ++c) {
                    Real* plane = img + c * g.height * g.width;
                    for (long ky = 0; ky < 3; ++ky) {
                        const long iy = iy0 + ky;
                        const bool row_ok = iy >= 0 && iy < static_cast<long>(g.height);
                        for (long kx = 0; kx < 3; ++kx, ++row) {
                            const long ix = ix0 + kx;
                            if (row_ok && ix >= 0 && ix < static_cast<long>(g.width))
                                plane[iy * static_cast<long>(g.width) + ix] += *row;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Var linear(Var x, Var w, Var bias) {
    require_same_tape(x, w);
    require_same_tape(x, bias);
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0]) dim_error("linear", xs, ws);
    if (bias.shape().size() != 1 || bias.shape()[0] != ws[1]) dim_error("linear bias", ws, bias.shape());
    const std::size_t B = xs[0], I = xs[1], O = ws[1];

    Tensor out({B, O});
    auto Y = as_mat(out, B, O);
    Y.noalias() = as_mat(x.value(), B, I) * as_mat(w.value(), I, O);
    Y.rowwise() += ConstVecMap(bias.value().ptr(), static_cast<Eigen::Index>(O));

    Tape& tape = x.tape();
    const std::size_t xi = x.id(), wi = w.id(), bi = bias.id();
    return tape.record(std::move(out), {xi, wi, bi}, [=](Tape& t, const Tensor& gy) {
        auto G = as_mat(gy, B, O);
        if (t.requires_grad(xi)) {
            Tensor gx({B, I});
            as_mat(gx, B, I).noalias() = G * as_mat(t.value(wi), I, O).transpose();
            t.accumulate(xi, std::move(gx));
        }
        if (Tensor* gw = t.grad_buffer(wi)) as_mat(*gw, I, O).noalias() += as_mat(t.value(xi), B, I).transpose() * G;
        if (Tensor* gb = t.grad_buffer(bi)) VecMap(gb->ptr(), static_cast<Eigen::Index>(O)) += G.colwise().sum();
    });
}

Var grouped_linear(Var x, Var w, Var bias) {
    require_same_tape(x, w);
    require_same_tape(x, bias);
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 3 || ws.size() != 3 || xs[1] != ws[0] || xs[2] != ws[1]) dim_error("grouped_linear", xs, ws);
    const Shape& bs = bias.shape();
    if (bs.size() != 2 || bs[0] != ws[0] || bs[1] != ws[2]) dim_error("grouped_linear bias", ws, bs);
    const std::size_t B = xs[0], M = xs[1], I = xs[2], O = ws[2];
    const auto sB = static_cast<Eigen::Index>(B), sI = static_cast<Eigen::Index>(I),
               sO = static_cast<Eigen::Index>(O);
    using Stride = Eigen::OuterStride<>;
    using StridedConst = Eigen::Map<const RowMat, 0, Stride>;
    using Strided = Eigen::Map<RowMat, 0, Stride>;
    const auto x_stride = Stride(static_cast<Eigen::Index>(M * I));
    const auto y_stride = Stride(static_cast<Eigen::Index>(M * O));

    Tensor out({B, M, O});
    for (std::size_t g = 0; g < M; ++g) {
        StridedConst X(x.value().ptr() + g * I, sB, sI, x_stride);
        Strided Y(out.ptr() + g * O, sB, sO, y_stride);
        ConstMatMap W(w.value().ptr() + g * I * O, sI, sO);
        Y.noalias() = X * W;
        Y.rowwise() += ConstVecMap(bias.value().ptr() + g * O, sO);
    }

    Tape& tape = x.tape();
    const std::size_t xi = x.id(), wi = w.id(), bi = bias.id();
    return tape.record(std::move(out), {xi, wi, bi}, [=](Tape& t, const Tensor& gy) {
        Tensor* gx = t.grad_buffer(xi);
        Tensor* gw = t.grad_buffer(wi);
        Tensor* gb = t.grad_buffer(bi);
        for (std::size_t g = 0; g < M; ++g) {
            StridedConst G(gy.ptr() + g * O, sB, sO, y_stride);
            if (gx) {
                Strided GX(gx->ptr() + g * I, sB, sI, x_stride);
                GX.noalias() += G * ConstMatMap(t.value(wi).ptr() + g * I * O, sI, sO).transpose();
            }
            if (gw) {
                StridedConst X(t.value(xi).ptr() + g * I, sB, sI, x_stride);
                MatMap(gw->ptr() + g * I * O, sI, sO).noalias() += X.transpose() * G;
            }
            if (gb) VecMap(gb->ptr() + g * O, sO) += G.colwise().sum();
        }
    });
}

Var conv2d(Var x, Var kernel, Var bias, int stride) {
    require_same_tape(x, kernel);
    require_same_tape(x, bias);
    const Shape& xs = x.shape();
    const Shape& ks = kernel.shape();
    if (stride != 1 && stride != 2) throw DimensionError("conv2d: stride must be 1 or 2");
    if (xs.size() != 4 || ks.size() != 4 || ks[2] != 3 || ks[3] != 3 || xs[1] != ks[1]) dim_error("conv2d", xs, ks);
    if (bias.shape().size() != 1 || bias.shape()[0] != ks[0]) dim_error("conv2d bias", ks, bias.shape());

    ConvGeom g{xs[0], xs[1], xs[2], xs[3], ks[0], 0, 0, stride};
    g.out_h = (g.height - 1) / static_cast<std::size_t>(stride) + 1;
    g.out_w = (g.width - 1) / static_cast<std::size_t>(stride) + 1;
    const std::size_t rows = g.batch * g.positions();
    const std::size_t patch = g.patch();

    auto col = std::make_shared<Tensor>(Shape{rows, patch});
    im2col(x.value().ptr(), g, col->ptr());

    // [rows, F] in position-major order, then permuted to [B,F,H',W'].
    RowMat prod = as_mat(*col, rows, patch) * as_mat(kernel.value(), g.filters, patch).transpose();
    Tensor out({g.batch, g.filters, g.out_h, g.out_w});
    const Real* bptr = bias.value().ptr();
    const std::size_t P = g.positions();
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t f = 0; f < g.filters; ++f) {
            Real* dst = out.ptr() + (b * g.filters + f) * P;
            const Real* src = prod.data() + b * P * g.filters + f;
            for (std::size_t p = 0; p < P; ++p) dst[p] = src[p * g.filters] + bptr[f];
        }

    Tape& tape = x.tape();
    const std::size_t xi = x.id(), ki = kernel.id(), bi = bias.id();
    return tape.record(std::move(out), {xi, ki, bi}, [=](Tape& t, const Tensor& gy) {
        RowMat G(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(g.filters));
        for (std::size_t b = 0; b < g.batch; ++b)
            for (std::size_t f = 0; f < g.filters; ++f) {
                const Real* src = gy.ptr() + (b * g.filters + f) * P;
                Real* dst = G.data() + b * P * g.filters + f;
                for (std::size_t p = 0; p < P; ++p) dst[p * g.filters] = src[p];
            }
        if (Tensor* gk = t.grad_buffer(ki)) as_mat(*gk, g.filters, patch).noalias() += G.transpose() * as_mat(*col, rows, patch);
        if (Tensor* gb = t.grad_buffer(bi)) VecMap(gb->ptr(), static_cast<Eigen::Index>(g.filters)) += G.colwise().sum();
        if (t.requires_grad(xi)) {
            RowMat dcol = G * as_mat(t.value(ki), g.filters, patch);
            Tensor gx(t.value(xi).shape());
            col2im(dcol.data(), g, gx.ptr());
            t.accumulate(xi, std::move(gx));
        }
    });
}

Var relu(Var x) {
    Tensor out = x.value();
    for (Real& v : out.data()) v = v > 0.0f ? v : 0.0f;
    const std::size_t xi = x.id();
    return x.tape().record(std::move(out), {xi}, [xi](Tape& t, const Tensor& gy) {
        Tensor gx(gy.shape());
        const Real* in = t.value(xi).ptr();
        const Real* g = gy.ptr();
        Real* dst = gx.ptr();
        for (std::size_t i = 0, n = gy.numel(); i < n; ++i) dst[i] = in[i] > Real(0) ? g[i] : Real(0);
        t.accumulate(xi, std::move(gx));
    });
}

Var add(Var a, Var b) {
    require_same_tape(a, b);
    if (a.shape() != b.shape()) dim_error("add", a.shape(), b.shape());
    Tensor out = a.value();
    const Real* bp = b.value().ptr();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bp[i];
    const std::size_t ai = a.id(), bi = b.id();
    return a.tape().record(std::move(out), {ai, bi}, [ai, bi](Tape& t, const Tensor& gy) {
        t.accumulate(ai, gy);
        t.accumulate(bi, gy);
    });
}

Var scale(Var x, Real factor) {
    Tensor out = x.value();
    for (Real& v : out.data()) v *= factor;
    const std::size_t xi = x.id();
    return x.tape().record(std::move(out), {xi}, [xi, factor](Tape& t, const Tensor& gy) {
        Tensor* gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < gy.numel(); ++i) (*gx)[i] += factor * gy[i];
    });
}

Var sum(Var x) {
    double s = 0.0;
    for (Real v : x.value().data()) s += v;
    const std::size_t xi = x.id();
    return x.tape().record(Tensor({1}, static_cast<Real>(s)), {xi}, [xi](Tape& t, const Tensor& gy) {
        Tensor* gx = t.grad_buffer(xi);
        for (Real& v : gx->data()) v += gy[0];
    });
}

Var layer_norm(Var x, Var gamma, Var beta, Real eps) {
    require_same_tape(x, gamma);
    require_same_tape(x, beta);
    const Shape& xs = x.shape();
    if (xs.empty()) throw DimensionError("layer_norm on a rank-0 tensor");
    const std::size_t D = xs.back();
    if (gamma.shape() != Shape{D}) dim_error("layer_norm gamma", xs, gamma.shape());
    if (beta.shape() != Shape{D}) dim_error("layer_norm beta", xs, beta.shape());
    const std::size_t rows = x.value().numel() / D;

    auto xhat = std::make_shared<Tensor>(xs);
    auto inv_std = std::make_shared<std::vector<Real>>(rows);
    Tensor out(xs);
    const Real* in = x.value().ptr();
    const Real* gp = gamma.value().ptr();
    const Real* bp = beta.value().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = in + r * D;
        double mean = 0.0;
        for (std::size_t d = 0; d < D; ++d) mean += row[d];
        mean /= static_cast<double>(D);
        double var = 0.0;
        for (std::size_t d = 0; d < D; ++d) var += (row[d] - mean) * (row[d] - mean);
        var /= static_cast<double>(D);
        const Real istd = static_cast<Real>(1.0 / std::sqrt(var + eps));
        (*inv_std)[r] = istd;
        Real* xh = xhat->ptr() + r * D;
        Real* o = out.ptr() + r * D;
        for (std::size_t d = 0; d < D; ++d) {
            xh[d] = static_cast<Real>(row[d] - mean) * istd;
            o[d] = xh[d] * gp[d] + bp[d];
        }
    }

    const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
    return x.tape().record(std::move(out), {xi, gi, bi}, [=](Tape& t, const Tensor& gy) {
        Tensor* gx = t.grad_buffer(xi);
        Tensor* gg = t.grad_buffer(gi);
        Tensor* gb = t.grad_buffer(bi);
        const Real* gam = t.value(gi).ptr();
        std::vector<Real> dxh(D);
        for (std::size_t r = 0; r < rows; ++r) {
            const Real* g = gy.ptr() + r * D;
            const Real* xh = xhat->ptr() + r * D;
            if (gg)
                for (std::size_t d = 0; d < D; ++d) (*gg)[d] += g[d] * xh[d];
            if (gb)
                for (std::size_t d = 0; d < D; ++d) (*gb)[d] += g[d];
            if (!gx) continue;
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t d = 0; d < D; ++d) {
                dxh[d] = g[d] * gam[d];
                mean_d += dxh[d];
                mean_dx += static_cast<double>(dxh[d]) * xh[d];
            }
            mean_d /= static_cast<double>(D);
            mean_dx /= static_cast<double>(D);
            Real* dst = gx->ptr() + r * D;
            const Real istd = (*inv_std)[r];
            for (std::size_t d = 0; d < D; ++d)
                dst[d] += istd * static_cast<Real>(dxh[d] - mean_d - xh[d] * mean_dx);
        }
    });
}

Var reshape(Var x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    const std::size_t xi = x.id();
    return x.tape().record(std::move(out), {xi}, [xi](Tape& t, const Tensor& gy) { t.accumulate(xi, gy); });
}

Var split_groups(Var x, std::size_t m) {
    const Shape& xs = x.shape();
    if (xs.size() != 2) throw DimensionError("split_groups expects [B,D], got " + shape_str(xs));
    if (m == 0 || xs[1] % m != 0)
        throw DimensionError("split_groups: " + std::to_string(m) + " groups do not divide width " +
                             std::to_string(xs[1]));
    return reshape(x, {xs[0], m, xs[1] / m});
}

Var concat_groups(Var x) {
    const Shape& xs = x.shape();
    if (xs.size() != 3) throw DimensionError("concat_groups expects [B,m,G], got " + shape_str(xs));
    return reshape(x, {xs[0], xs[1] * xs[2]});
}

Var gather_rows(Var x, std::vector<std::size_t> index) {
    const Shape& xs = x.shape();
    if (xs.empty()) throw DimensionError("gather_rows on a rank-0 tensor");
    const std::size_t row = x.value().numel() / xs[0];
    Shape os = xs;
    os[0] = index.size();
    Tensor out(os);
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= xs[0]) throw DomainError("gather_rows: index " + std::to_string(index[i]) + " out of range");
        std::copy_n(x.value().ptr() + index[i] * row, row, out.ptr() + i * row);
    }
    const std::size_t xi = x.id();
    return x.tape().record(std::move(out), {xi}, [xi, row, index = std::move(index)](Tape& t, const Tensor& gy) {
        Tensor* gx = t.grad_buffer(xi);
        for (std::size_t i = 0; i < index.size(); ++i) {
            Real* dst = gx->ptr() + index[i] * row;
            const Real* src = gy.ptr() + i * row;
            for (std::size_t k = 0; k < row; ++k) dst[k] += src[k];
        }
    });
}

Var swap_last_axes(Var x) {
    const Shape& xs = x.shape();
    if (xs.size() != 3) throw DimensionError("swap_last_axes expects rank 3, got " + shape_str(xs));
    const std::size_t B = xs[0], M = xs[1], N = xs[2];
    Tensor out({B, N, M});
    for (std::size_t b = 0; b < B; ++b) {
        const Real* src = x.value().ptr() + b * M * N;
        Real* dst = out.ptr() + b * M * N;
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < N; ++j) dst[j * M + i] = src[i * N + j];
    }
    const std::size_t xi = x.id();
    return x.tape().record(std::move(out), {xi}, [=](Tape& t, const Tensor& gy) {
        Tensor* gx = t.grad_buffer(xi);
        for (std::size_t b = 0; b < B; ++b) {
            const Real* src = gy.ptr() + b * M * N;
            Real* dst = gx->ptr() + b * M * N;
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t j = 0; j < N; ++j) dst[i * N + j] += src[j * M + i];
        }
    });
}

Tensor softmax(const Tensor& scores) {
    if (scores.rank() != 2) throw DimensionError("softmax expects [B,K], got " + shape_str(scores.shape()));
    const std::size_t B = scores.dim(0), K = scores.dim(1);
    Tensor out(scores.shape());
    for (std::size_t b = 0; b < B; ++b) {
        const Real* s = scores.ptr() + b * K;
        Real* o = out.ptr() + b * K;
        const Real mx = *std::max_element(s, s + K);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(s[k] - mx));
        for (std::size_t k = 0; k < K; ++k) o[k] = static_cast<Real>(std::exp(static_cast<double>(s[k] - mx)) / z);
    }
    return out;
}

Var softmax_cross_entropy(Var scores, std::span<const int> targets) {
    const Shape& ss = scores.shape();
    if (ss.size() != 2) throw DimensionError("softmax_cross_entropy expects [B,K], got " + shape_str(ss));
    const std::size_t B = ss[0], K = ss[1];
    if (targets.size() != B)
        throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                             std::to_string(B));
    for (int tgt : targets)
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= K)
            throw DomainError("softmax_cross_entropy: target " + std::to_string(tgt) + " outside [0," +
                              std::to_string(K) + ")");

    Tensor probs = softmax(scores.value());
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const Real* s = scores.value().ptr() + b * K;
        const Real mx = *std::max_element(s, s + K);
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(s[k] - mx));
        loss += std::log(z) + mx - s[targets[b]];
    }
    loss /= static_cast<double>(B);

    std::vector<int> tg(targets.begin(), targets.end());
    const std::size_t si = scores.id();
    return scores.tape().record(
        Tensor({1}, static_cast<Real>(loss)), {si},
        [si, B, K, probs = std::move(probs), tg = std::move(tg)](Tape& t, const Tensor& gy) {
            Tensor* gs = t.grad_buffer(si);
            const Real w = gy[0] / static_cast<Real>(B);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t k = 0; k < K; ++k) {
                    const Real onehot = static_cast<int>(k) == tg[b] ? 1.0f : 0.0f;
                    (*gs)[b * K + k] += w * (probs[b * K + k] - onehot);
                }
        });
}

}  // namespace scl
