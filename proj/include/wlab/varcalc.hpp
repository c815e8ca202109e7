#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "wlab/errors.hpp"
#include "wlab/measure.hpp"
#include "wlab/parallel.hpp"

namespace wlab {

struct MeasureFunctional {
    std::function<double(const DiscreteMeasure&)> eval;
    std::string name;
};

/// Slopes per step plus the Richardson-extrapolated value. `order` is the
/// leading error order of the base stencil.
struct FdEstimate {
    std::vector<double> steps;
    std::vector<double> slopes;
    double slope = 0.0;       // at the smallest step
    double richardson = 0.0;
    int order = 2;
};

inline const std::vector<double>& default_fd_steps() {
    static const std::vector<double> steps{1e-2, 5e-3, 2.5e-3};
    return steps;
}

namespace detail {

inline double checked_eval(const MeasureFunctional& f, const DiscreteMeasure& m) {
    const double v = f.eval(m);
    if (!std::isfinite(v)) throw EvalError("functional '" + f.name + "' returned a non-finite value");
    return v;
}

inline void check_steps(const std::vector<double>& steps) {
    require(!steps.empty(), "at least one finite-difference step is required");
    for (double h : steps) require(h > 0.0 && std::isfinite(h), "finite-difference steps must be positive");
}

// Repeated Richardson: level k removes the h^(order + stride (k-1)) term.
inline double richardson(const std::vector<double>& steps, std::vector<double> vals, int order, int stride) {
    for (std::size_t lvl = 1; lvl < vals.size(); ++lvl) {
        const int p = order + stride * (static_cast<int>(lvl) - 1);
        for (std::size_t i = 0; i + lvl < steps.size(); ++i) {
            const double r = std::pow(steps[i] / steps[i + lvl], p);
            vals[i] = (r * vals[i + 1] - vals[i]) / (r - 1.0);
        }
        vals.pop_back();
    }
    return vals.front();
}

inline FdEstimate finish(const std::vector<double>& steps, std::vector<double> slopes, int order, int stride = 1) {
    FdEstimate e;
    e.steps = steps;
    e.order = order;
    std::size_t smallest = 0;
    for (std::size_t i = 1; i < steps.size(); ++i)
        if (steps[i] < steps[smallest]) smallest = i;
    e.slope = slopes[smallest];
    e.slopes = std::move(slopes);
    e.richardson = richardson(e.steps, e.slopes, order, stride);
    return e;
}

}  // namespace detail

/// d/dt F((1-t) mu + t nu) at t = 0. The mixture only exists for t >= 0, so
/// the stencil is the one-sided three-point rule (-3F(0) + 4F(h) - F(2h)) / 2h.
inline FdEstimate var_derivative_fd(const MeasureFunctional& F, const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                    const std::vector<double>& steps = default_fd_steps()) {
    require(mu.dim() == nu.dim(), "measures have different dimensions");
    detail::check_steps(steps);
    for (double h : steps) require(2.0 * h <= 1.0, "mixture steps must satisfy 2h <= 1");
    const double f0 = detail::checked_eval(F, mu);
    std::vector<double> slopes(steps.size());
    parallel_for(steps.size(), [&](std::size_t i) {
        const double h = steps[i];
        const double f1 = detail::checked_eval(F, mixture(mu, nu, h));
        const double f2 = detail::checked_eval(F, mixture(mu, nu, 2.0 * h));
        slopes[i] = (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h);
    });
    return detail::finish(steps, std::move(slopes), 2);
}

/// d/de F((id + e v)#mu) at e = 0 by central differences; equals int <d_mu F, v> dmu.
template <class Field>
FdEstimate lions_derivative_fd(const MeasureFunctional& F, const DiscreteMeasure& mu, Field&& v,
                               const std::vector<double>& steps = default_fd_steps()) {
    detail::check_steps(steps);
    std::vector<Vec> shift;
    shift.reserve(mu.size());
    for (const auto& x : mu.points()) {
        Vec vx = v(x);
        require(vx.size() == mu.dim() && vx.allFinite(), "vector field must be finite with the measure's dimension");
        shift.push_back(std::move(vx));
    }
    auto moved = [&](double e) {
        std::vector<Vec> pts(mu.points());
        for (std::size_t i = 0; i < pts.size(); ++i) pts[i] += e * shift[i];
        return DiscreteMeasure(std::move(pts), mu.weights());
    };
    std::vector<double> slopes(steps.size());
    parallel_for(steps.size(), [&](std::size_t i) {
        const double h = steps[i];
        slopes[i] = (detail::checked_eval(F, moved(h)) - detail::checked_eval(F, moved(-h))) / (2.0 * h);
    });
    // central differences carry only even powers
    auto e = detail::finish(steps, std::move(slopes), 2, 2);
    return e;
}

/// d2/dt1 dt2 F(mu + t1 (nu1 - mu) + t2 (nu2 - mu)) at 0, tensor product of
/// one-sided three-point stencils; equals the double integral of the second
/// variation against (nu1 - mu) x (nu2 - mu).
inline FdEstimate second_var_fd(const MeasureFunctional& F, const DiscreteMeasure& mu, const DiscreteMeasure& nu1,
                                const DiscreteMeasure& nu2, const std::vector<double>& steps = default_fd_steps()) {
    require(mu.dim() == nu1.dim() && mu.dim() == nu2.dim(), "measures have different dimensions");
    detail::check_steps(steps);
    for (double h : steps) require(4.0 * h <= 1.0, "mixture steps must satisfy 4h <= 1");
    static constexpr double c[3] = {-1.5, 2.0, -0.5};
    auto at = [&](double t1, double t2) {
        if (t1 == 0.0 && t2 == 0.0) return detail::checked_eval(F, mu);
        return detail::checked_eval(F, combine({{&mu, 1.0 - t1 - t2}, {&nu1, t1}, {&nu2, t2}}));
    };
    std::vector<double> slopes(steps.size());
    parallel_for(steps.size(), [&](std::size_t i) {
        const double h = steps[i];
        double s = 0.0;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) s += c[a] * c[b] * at(a * h, b * h);
        slopes[i] = s / (h * h);
    });
    return detail::finish(steps, std::move(slopes), 2);
}

/// Observed convergence order from successive errors against a reference value.
inline std::vector<double> observed_orders(const FdEstimate& e, double reference) {
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < e.slopes.size(); ++i) {
        const double a = std::abs(e.slopes[i] - reference), b = std::abs(e.slopes[i + 1] - reference);
        out.push_back(a > 0.0 && b > 0.0 ? std::log(a / b) / std::log(e.steps[i] / e.steps[i + 1]) : 0.0);
    }
    return out;
}

}  // namespace wlab
