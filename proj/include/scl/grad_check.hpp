#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "scl/parameter.hpp"
#include "scl/tape.hpp"

namespace scl {

struct GradCheckOptions {
    double step = 1e-3;
    double tolerance = 1e-3;
    // Denominator floor: max(abs_floor, rel_floor * largest |analytic| in the tensor).
    double abs_floor = 1e-4;
    double rel_floor = 1e-2;
    // One-sided slopes differing by more than this fraction, with the analytic
    // value matching one of them, mark a kink.
    double kink_fraction = 0.1;
    // 0 checks every coordinate; otherwise a seeded random sample of this size.
    std::size_t sample = 0;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    std::string label;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    std::vector<std::size_t> kinks;  // coordinates skipped as non-differentiable
    bool finite = true;
    double tolerance = 0.0;

    bool passed() const { return finite && checked > 0 && max_rel_error <= tolerance; }
    std::string summary() const;
};

/// Checks d/dx of f at x. A non-scalar output is reduced with a fixed random
/// projection so every output element contributes.
GradCheckReport grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                           const GradCheckOptions& opts = {});

/// Checks the gradient of a scalar loss with respect to one parameter.
/// `loss` must build a fresh tape each call and return the scalar loss node.
GradCheckReport grad_check_parameter(const std::function<Var(Tape&)>& loss, Parameter& param,
                                     ParameterStore& store, const GradCheckOptions& opts = {});

/// Core central-difference sweep over a mutable coordinate buffer.
GradCheckReport check_coordinates(std::span<Real> coords, std::span<const Real> analytic,
                                  const std::function<double()>& evaluate, const GradCheckOptions& opts);

}  // namespace scl
