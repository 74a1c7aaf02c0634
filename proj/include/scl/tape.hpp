#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "scl/parameter.hpp"
#include "scl/tensor.hpp"

namespace scl {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    /// Gradient after backward(); an all-zero tensor if nothing flowed here.
    Tensor grad() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Define-by-run reverse-mode tape. Rebuilt for every forward pass.
///
/// Nodes are appended in execution order, so the recording is topologically
/// sorted by construction and backward() is a single reverse sweep.
class Tape {
public:
    /// Receives the gradient of the node's output; pushes gradients to inputs
    /// through accumulate().
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

    Tape() = default;
    /// With gradients disabled, leaves and parameters are recorded as constants.
    explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var leaf(Tensor value);
    /// The parameter's gradient accumulates into Parameter::grad on backward().
    Var parameter(Parameter& p);

    /// Records an op output. `backward` is dropped when no input needs a gradient.
    Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    /// Seeds d(loss)/d(loss) = 1; loss must hold exactly one element.
    void backward(Var loss);
    /// Seeds an arbitrary output cotangent of the same shape as `out`.
    void backward(Var out, const Tensor& seed);

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    Tensor grad(std::size_t id) const;

    /// Adds `g` into the gradient buffer of node `id` (no-op if it needs no gradient).
    void accumulate(std::size_t id, const Tensor& g);
    /// As above, but adopts the buffer when node `id` has no gradient yet.
    void accumulate(std::size_t id, Tensor&& g);
    /// Mutable gradient buffer of node `id`, zero-allocated on first access.
    /// Returns nullptr when the node needs no gradient.
    Tensor* grad_buffer(std::size_t id);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    std::deque<Node> nodes_;
    bool backward_done_ = false;
    bool grad_enabled_ = true;
};

}  // namespace scl
