#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "scl/tensor.hpp"

namespace scl {

/// A named trainable tensor and its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    void zero_grad() { grad = Tensor(value.shape()); }
};

/// Owns the parameters of a model. Addresses are stable for the store's lifetime.
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) = default;
    ParameterStore& operator=(ParameterStore&&) = default;

    /// Throws ContractError when the name is already taken.
    Parameter& add(std::string name, Tensor init);

    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;

    std::size_t size() const noexcept { return params_.size(); }
    std::size_t scalar_count() const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad();

private:
    std::deque<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace scl
