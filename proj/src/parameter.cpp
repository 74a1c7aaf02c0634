#include "scl/parameter.hpp"

#include "scl/errors.hpp"

namespace scl {

Parameter& ParameterStore::add(std::string name, Tensor init) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_.emplace(name, params_.size());
    Parameter& p = params_.emplace_back();
    p.name = std::move(name);
    p.value = std::move(init);
    p.zero_grad();
    return p;
}

Parameter* ParameterStore::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

}  // namespace scl
