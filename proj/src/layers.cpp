#include "scl/layers.hpp"

#include <cmath>

#include "scl/errors.hpp"

namespace scl {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const Real bound = static_cast<Real>(std::sqrt(6.0 / static_cast<double>(fan_in)));
    for (Real& v : t.data()) v = rng.uniform_float(-bound, bound);
    return t;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight_(&store.add(name + ".weight", he_uniform({in, out}, in, rng))),
      bias_(&store.add(name + ".bias", Tensor({out}))) {}

Var Linear::operator()(Tape& tape, Var x) const {
    return linear(x, tape.parameter(*weight_), tape.parameter(*bias_));
}

GroupedLinear::GroupedLinear(ParameterStore& store, const std::string& name, std::size_t groups, std::size_t in,
                             std::size_t out, Rng& rng)
    : weight_(&store.add(name + ".weight", he_uniform({groups, in, out}, in, rng))),
      bias_(&store.add(name + ".bias", Tensor({groups, out}))) {}

Var GroupedLinear::operator()(Tape& tape, Var x) const {
    return grouped_linear(x, tape.parameter(*weight_), tape.parameter(*bias_));
}

Conv3x3::Conv3x3(ParameterStore& store, const std::string& name, std::size_t in_channels,
                 std::size_t out_channels, int stride, Rng& rng)
    : weight_(&store.add(name + ".weight", he_uniform({out_channels, in_channels, 3, 3}, in_channels * 9, rng))),
      bias_(&store.add(name + ".bias", Tensor({out_channels}))),
      stride_(stride) {}

Var Conv3x3::operator()(Tape& tape, Var x) const {
    return conv2d(x, tape.parameter(*weight_), tape.parameter(*bias_), stride_);
}

FRBlock::FRBlock(ParameterStore& store, const std::string& name, std::size_t width, Rng& rng)
    : lin1_(store, name + ".lin1", width, width, rng),
      lin2_(store, name + ".lin2", width, width, rng),
      gamma_(&store.add(name + ".norm.gamma", Tensor({width}, 1.0f))),
      beta_(&store.add(name + ".norm.beta", Tensor({width}))) {}

Var FRBlock::operator()(Tape& tape, Var x) const {
    if (x.shape().size() != 2 || x.shape()[1] != width())
        throw DimensionError("FR block of width " + std::to_string(width()) + " got input " + shape_str(x.shape()));
    Var h = relu(lin1_(tape, x));
    h = layer_norm(h, tape.parameter(*gamma_), tape.parameter(*beta_));
    return add(x, lin2_(tape, h));
}

Mlp::Mlp(ParameterStore& store, const std::string& name, std::vector<std::size_t> widths, Rng& rng)
    : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw ConfigError("MLP needs at least an input and an output width");
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i)
        shared_.emplace_back(store, name + ".fc" + std::to_string(i + 1), widths_[i], widths_[i + 1], rng);
}

Mlp::Mlp(ParameterStore& store, const std::string& name, std::vector<std::size_t> widths, std::size_t groups,
         Rng& rng)
    : widths_(std::move(widths)), groups_(groups) {
    if (widths_.size() < 2) throw ConfigError("MLP needs at least an input and an output width");
    if (groups == 0) throw ConfigError("grouped MLP needs at least one group");
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i)
        per_group_.emplace_back(store, name + ".fc" + std::to_string(i + 1), groups, widths_[i], widths_[i + 1],
                                rng);
}

Var Mlp::operator()(Tape& tape, Var x) const {
    const std::size_t n = grouped() ? per_group_.size() : shared_.size();
    for (std::size_t i = 0; i < n; ++i) {
        x = grouped() ? per_group_[i](tape, x) : shared_[i](tape, x);
        if (i + 1 < n) x = relu(x);
    }
    return x;
}

Var scatter(Tape& tape, Var x, std::size_t m, const Mlp& net) {
    Var groups = split_groups(x, m);  // [B,m,D/m]
    const std::size_t B = groups.shape()[0], G = groups.shape()[2];
    if (G != net.in_features())
        throw DimensionError("scatter: group width " + std::to_string(G) + " but network expects " +
                             std::to_string(net.in_features()));
    if (net.grouped()) return concat_groups(net(tape, groups));
    Var out = net(tape, reshape(groups, {B * m, G}));
    return reshape(out, {B, m * net.out_features()});
}

}  // namespace scl
