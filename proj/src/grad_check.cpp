#include "scl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "scl/errors.hpp"
#include "scl/rng.hpp"

namespace scl {

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    os << (label.empty() ? "grad_check" : label) << ": max_rel_err=" << max_rel_error << " (tol " << tolerance
       << ") checked=" << checked << " kinks_skipped=" << kinks.size();
    if (!finite) os << " NON-FINITE";
    return os.str();
}

GradCheckReport check_coordinates(std::span<Real> coords, std::span<const Real> analytic,
                                  const std::function<double()>& evaluate, const GradCheckOptions& opts) {
    if (coords.size() != analytic.size()) throw DimensionError("grad_check: gradient size mismatch");
    GradCheckReport report;
    report.tolerance = opts.tolerance;

    std::vector<std::size_t> order(coords.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (opts.sample > 0 && opts.sample < coords.size()) {
        Rng rng(opts.seed);
        rng.shuffle(order);
        order.resize(opts.sample);
        std::sort(order.begin(), order.end());
    }

    double scale = 0.0;
    for (Real a : analytic) scale = std::max(scale, static_cast<double>(std::fabs(a)));
    const double floor = std::max(opts.abs_floor, opts.rel_floor * scale);

    const double base = evaluate();
    if (!std::isfinite(base)) {
        report.finite = false;
        return report;
    }
    for (std::size_t idx : order) {
        const Real orig = coords[idx];
        coords[idx] = static_cast<Real>(orig + opts.step);
        const double up = evaluate();
        coords[idx] = static_cast<Real>(orig - opts.step);
        const double down = evaluate();
        coords[idx] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            report.finite = false;
            return report;
        }
        const double fwd = (up - base) / opts.step;
        const double bwd = (base - down) / opts.step;
        const double central = (up - down) / (2.0 * opts.step);
        const double a = analytic[idx];
        auto rel = [&](double n) { return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), floor}); };
        // A kink inside [x-h, x+h] makes the one-sided slopes disagree while the
        // analytic gradient still matches the side that did not cross it.
        const bool slopes_split =
            std::fabs(fwd - bwd) > opts.kink_fraction * std::max({std::fabs(fwd), std::fabs(bwd), floor});
        if (slopes_split && std::min(rel(fwd), rel(bwd)) <= opts.tolerance) {
            report.kinks.push_back(idx);
            continue;
        }
        const double err = rel(central);
        ++report.checked;
        if (err > report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = idx;
        }
    }
    return report;
}

GradCheckReport grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, const GradCheckOptions& opts) {
    Tensor analytic;
    Tensor projection;
    {
        Tape tape;
        Var in = tape.leaf(x);
        Var out = f(tape, in);
        if (!out.value().all_finite()) {
            GradCheckReport r;
            r.finite = false;
            r.tolerance = opts.tolerance;
            return r;
        }
        projection = Tensor(out.shape(), 1.0f);
        if (out.value().numel() > 1) {
            Rng rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
            for (Real& w : projection.data()) w = rng.uniform_float(-1.0f, 1.0f);
        }
        tape.backward(out, projection);
        analytic = in.grad();
    }

    Tensor probe = x;
    auto evaluate = [&]() {
        Tape tape;
        Var out = f(tape, tape.constant(probe));
        double s = 0.0;
        const Tensor& v = out.value();
        for (std::size_t i = 0; i < v.numel(); ++i) s += static_cast<double>(projection[i]) * v[i];
        return s;
    };
    return check_coordinates(probe.data(), analytic.data(), evaluate, opts);
}

GradCheckReport grad_check_parameter(const std::function<Var(Tape&)>& loss, Parameter& param, ParameterStore& store,
                                     const GradCheckOptions& opts) {
    store.zero_grad();
    {
        Tape tape;
        Var l = loss(tape);
        tape.backward(l);
    }
    Tensor analytic = param.grad;
    auto evaluate = [&]() {
        Tape tape;
        return static_cast<double>(loss(tape).value().item());
    };
    GradCheckReport r = check_coordinates(param.value.data(), analytic.data(), evaluate, opts);
    r.label = param.name;
    return r;
}

}  // namespace scl
