#include "scl/tape.hpp"

#include <algorithm>

#include "scl/errors.hpp"

namespace scl {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }
Tensor Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    return {this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.requires_grad = grad_enabled_;
    return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
    Node& n = nodes_.emplace_back();
    n.value = p.value;
    n.requires_grad = grad_enabled_;
    if (grad_enabled_) n.param = &p;
    return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool needs = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) {
        if (i >= nodes_.size()) throw ContractError("op input refers to a node not yet recorded");
        return nodes_[i].requires_grad;
    });
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    return {this, nodes_.size() - 1};
}

Tensor Tape::grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
}

Tensor* Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return &n.grad;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
    Tensor* buf = grad_buffer(id);
    if (!buf) return;
    if (buf->numel() != g.numel())
        throw DimensionError("gradient of shape " + shape_str(g.shape()) + " for node of shape " +
                             shape_str(buf->shape()));
    Real* dst = buf->ptr();
    const Real* src = g.ptr();
    for (std::size_t i = 0, n = g.numel(); i < n; ++i) dst[i] += src[i];
}

void Tape::accumulate(std::size_t id, Tensor&& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (n.grad.empty() && g.numel() == n.value.numel()) {
        n.grad = std::move(g).reshaped(n.value.shape());
        return;
    }
    accumulate(id, static_cast<const Tensor&>(g));
}

void Tape::backward(Var loss) {
    const Tensor& v = value(loss.id());
    if (v.numel() != 1) throw ContractError("backward() needs a scalar loss, got shape " + shape_str(v.shape()));
    backward(loss, Tensor(v.shape(), 1.0f));
}

void Tape::backward(Var out, const Tensor& seed) {
    if (&out.tape() != this) throw ContractError("backward() called with a Var from another tape");
    if (backward_done_) throw ContractError("backward() may only run once per tape");
    if (seed.shape() != value(out.id()).shape())
        throw DimensionError("seed shape " + shape_str(seed.shape()) + " does not match output " +
                             shape_str(value(out.id()).shape()));
    backward_done_ = true;
    accumulate(out.id(), seed);
    for (std::size_t i = out.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty()) continue;
        if (n.backward) n.backward(*this, n.grad);
        if (n.param) {
            Tensor& pg = n.param->grad;
            if (pg.shape() != n.value.shape()) pg = Tensor(n.value.shape());
            for (std::size_t k = 0; k < pg.numel(); ++k) pg[k] += n.grad[k];
        }
    }
}

}  // namespace scl
