#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "scl/ops.hpp"
#include "scl/parameter.hpp"
#include "scl/rng.hpp"

namespace scl {

/// He-uniform fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);

    Var operator()(Tape& tape, Var x) const;
    std::size_t in_features() const { return weight_->value.dim(0); }
    std::size_t out_features() const { return weight_->value.dim(1); }
    Parameter& weight() const { return *weight_; }
    Parameter& bias() const { return *bias_; }

private:
    Parameter* weight_ = nullptr;  // [in, out]
    Parameter* bias_ = nullptr;    // [out]
};

/// `groups` independent linear maps of identical shape, stored as one [groups,in,out] tensor.
class GroupedLinear {
public:
    GroupedLinear() = default;
    GroupedLinear(ParameterStore& store, const std::string& name, std::size_t groups, std::size_t in,
                  std::size_t out, Rng& rng);

    /// x[B,groups,in] -> [B,groups,out]
    Var operator()(Tape& tape, Var x) const;
    Parameter& weight() const { return *weight_; }
    Parameter& bias() const { return *bias_; }

private:
    Parameter* weight_ = nullptr;
    Parameter* bias_ = nullptr;
};

class Conv3x3 {
public:
    Conv3x3() = default;
    Conv3x3(ParameterStore& store, const std::string& name, std::size_t in_channels, std::size_t out_channels,
            int stride, Rng& rng);

    Var operator()(Tape& tape, Var x) const;
    Parameter& weight() const { return *weight_; }
    Parameter& bias() const { return *bias_; }

private:
    Parameter* weight_ = nullptr;  // [F,C,3,3]
    Parameter* bias_ = nullptr;
    int stride_ = 1;
};

/// FR(x) = x + Lin2(LayerNorm(ReLU(Lin1(x)))), all widths equal.
class FRBlock {
public:
    FRBlock() = default;
    FRBlock(ParameterStore& store, const std::string& name, std::size_t width, Rng& rng);

    Var operator()(Tape& tape, Var x) const;
    std::size_t width() const { return lin1_.in_features(); }
    const Linear& lin1() const { return lin1_; }
    const Linear& lin2() const { return lin2_; }

private:
    Linear lin1_, lin2_;
    Parameter* gamma_ = nullptr;
    Parameter* beta_ = nullptr;
};

/// Linear layers with ReLU between them (none after the last).
/// With groups > 1 and shared == false every group gets its own weights.
class Mlp {
public:
    Mlp() = default;
    Mlp(ParameterStore& store, const std::string& name, std::vector<std::size_t> widths, Rng& rng);
    Mlp(ParameterStore& store, const std::string& name, std::vector<std::size_t> widths, std::size_t groups,
        Rng& rng);

    /// Shared: x[R,in] -> [R,out]. Grouped: x[B,groups,in] -> [B,groups,out].
    Var operator()(Tape& tape, Var x) const;

    bool grouped() const { return groups_ > 0; }
    std::size_t in_features() const { return widths_.front(); }
    std::size_t out_features() const { return widths_.back(); }
    const std::vector<Linear>& layers() const { return shared_; }
    const std::vector<GroupedLinear>& grouped_layers() const { return per_group_; }

private:
    std::vector<std::size_t> widths_;
    std::size_t groups_ = 0;
    std::vector<Linear> shared_;
    std::vector<GroupedLinear> per_group_;
};

/// Split x[B,D] into m groups, apply `net` to every group, merge to [B, m*out].
/// A shared net is applied once to a [B*m, D/m] view; a grouped net gets [B,m,D/m].
Var scatter(Tape& tape, Var x, std::size_t m, const Mlp& net);

}  // namespace scl
