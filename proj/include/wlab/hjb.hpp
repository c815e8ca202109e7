#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "wlab/cylindrical.hpp"
#include "wlab/derivs.hpp"
#include "wlab/errors.hpp"
#include "wlab/filter.hpp"
#include "wlab/model.hpp"
#include "wlab/parallel.hpp"
#include "wlab/transport.hpp"

namespace wlab {

struct BoxMinimum {
    Vec arg;
    double value = 0.0;
    double grid_value = 0.0;  // best value on the grid alone
    std::size_t evaluations = 0;
};

namespace detail {

inline Vec clamp_box(Vec g, const Vec& lo, const Vec& hi) {
    for (Eigen::Index k = 0; k < g.size(); ++k) g[k] = std::clamp(g[k], lo[k], hi[k]);
    return g;
}

// Nelder-Mead with every vertex projected onto the box.
inline std::pair<Vec, double> nelder_mead_box(const std::function<double(const Vec&)>& f, Vec x0, const Vec& lo,
                                              const Vec& hi, double step, std::size_t& evals, int max_iter = 400,
                                              double tol = 1e-12) {
    const auto m = x0.size();
    std::vector<Vec> s;
    std::vector<double> fv;
    auto eval = [&](const Vec& x) {
        ++evals;
        return f(x);
    };
    s.push_back(x0);
    fv.push_back(eval(x0));
    for (Eigen::Index k = 0; k < m; ++k) {
        Vec x = x0;
        x[k] += (x0[k] + step <= hi[k]) ? step : -step;
        x = clamp_box(x, lo, hi);
        s.push_back(x);
        fv.push_back(eval(x));
    }
    std::vector<std::size_t> idx(s.size());
    for (int it = 0; it < max_iter; ++it) {
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = idx.front(), worst = idx.back(), second = idx[idx.size() - 2];
        if (std::abs(fv[worst] - fv[best]) <= tol * (1.0 + std::abs(fv[best]))) {
            double diam = 0.0;
            for (const auto& v : s) diam = std::max(diam, (v - s[best]).lpNorm<Eigen::Infinity>());
            if (diam <= 1e-9) break;
        }
        Vec c = Vec::Zero(m);
        for (std::size_t i : idx)
            if (i != worst) c += s[i];
        c /= static_cast<double>(m);
        const Vec xr = clamp_box(c + (c - s[worst]), lo, hi);
        const double fr = eval(xr);
        if (fr < fv[best]) {
            const Vec xe = clamp_box(c + 2.0 * (c - s[worst]), lo, hi);
            const double fe = eval(xe);
            if (fe < fr) {
                s[worst] = xe;
                fv[worst] = fe;
            } else {
                s[worst] = xr;
                fv[worst] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            s[worst] = xr;
            fv[worst] = fr;
            continue;
        }
        const Vec xc = clamp_box(c + 0.5 * (s[worst] - c), lo, hi);
        const double fc = eval(xc);
        if (fc < fv[worst]) {
            s[worst] = xc;
            fv[worst] = fc;
            continue;
        }
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i == best) continue;
            s[i] = s[best] + 0.5 * (s[i] - s[best]);
            fv[i] = eval(s[i]);
        }
    }
    const auto b = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
    return {s[b], fv[b]};
}

}  // namespace detail

/// Minimum of f over the box [lo, hi]: per_axis^m grid, then Nelder-Mead from the grid argmin.
/// Ties on the grid go to the lowest index.
inline BoxMinimum minimize_over_box(const std::function<double(const Vec&)>& f, const Vec& lo, const Vec& hi,
                                    int per_axis = 17, bool refine = true) {
    require(lo.size() == hi.size(), "control box bounds differ in length");
    for (Eigen::Index k = 0; k < lo.size(); ++k) require(lo[k] <= hi[k], "control box has lo > hi");
    require(per_axis >= 2, "grid needs at least two points per axis");
    const auto m = lo.size();
    BoxMinimum out;
    if (m == 0) {
        out.arg = Vec::Zero(0);
        out.value = out.grid_value = f(out.arg);
        out.evaluations = 1;
        return out;
    }
    std::size_t total = 1;
    for (Eigen::Index k = 0; k < m; ++k) total *= static_cast<std::size_t>(per_axis);
    require(total <= 2'000'000, "control grid too large");
    auto point = [&](std::size_t idx) {
        Vec g(m);
        for (Eigen::Index k = 0; k < m; ++k) {
            const auto i = idx % static_cast<std::size_t>(per_axis);
            idx /= static_cast<std::size_t>(per_axis);
            g[k] = lo[k] + (hi[k] - lo[k]) * static_cast<double>(i) / (per_axis - 1);
        }
        return g;
    };
    std::vector<double> vals(total);
    parallel_for(total, [&](std::size_t i) { vals[i] = f(point(i)); });
    std::size_t best = 0;
    for (std::size_t i = 1; i < total; ++i)
        if (vals[i] < vals[best]) best = i;
    out.arg = point(best);
    out.value = out.grid_value = vals[best];
    out.evaluations = total;
    if (!std::isfinite(out.value)) throw NumericalError("objective is not finite on the control grid");
    if (!refine) return out;
    const double step = 0.5 * (hi - lo).maxCoeff() / (per_axis - 1);
    if (step <= 0.0) return out;
    auto [x, v] = detail::nelder_mead_box(f, out.arg, lo, hi, step, out.evaluations);
    if (v < out.value) {
        out.arg = x;
        out.value = v;
    }
    return out;
}

struct HjbResidual {
    double residual = 0.0;      // u - inf_g {L + A^g u}
    double second_order = 0.0;  // control-free part of A^g u
    double inf_value = 0.0;     // inf_g {L(mu, g) + first-order part}
    Vec argmin;
};

/// HJB residual at mu from a value and a derivative bundle on supp mu x supp mu.
/// Subsolution test: residual <= 0; supersolution: residual >= 0.
inline HjbResidual hjb_residual(const FilterModel& model, const RunningCost& cost, double u_value,
                                const DerivativeBundle& db, const DiscreteMeasure& mu, int per_axis = 17,
                                bool refine = true) {
    db.require_complete();
    require(db.x.size() == mu.size() && db.y.size() == mu.size(), "derivatives must be sampled on supp mu x supp mu");
    require(mu.dim() == model.dim_x, "measure dimension differs from the model");
    HjbResidual r;
    r.second_order = generator_second_order(model, db, mu);
    const auto best = minimize_over_box(
        [&](const Vec& g) { return cost(mu, g) + generator_first_order(model, g, db, mu); }, model.control_lo,
        model.control_hi, per_axis, refine);
    r.inf_value = best.value;
    r.argmin = best.arg;
    r.residual = u_value - r.second_order - r.inf_value;
    return r;
}

/// Residual for a cylindrical candidate u, with derivatives from the chain rule.
inline HjbResidual hjb_residual(const FilterModel& model, const RunningCost& cost, const CylindricalFn& u,
                                const DiscreteMeasure& mu, int per_axis = 17, bool refine = true) {
    return hjb_residual(model, cost, u(mu), cylindrical_derivatives(u, mu, mu.points(), mu.points()), mu, per_axis,
                        refine);
}

struct LipReport {
    std::size_t pairs = 0;
    std::size_t violations = 0;
    double worst_ratio = 0.0;  // max |L(mu)-L(nu)| / W1
};

/// Checks |L(mu,g) - L(nu,g)| <= lip * W1(mu,nu) + 1e-9 on the given pairs and controls.
inline LipReport validate_lip1(const RunningCost& cost, const std::vector<std::pair<DiscreteMeasure, DiscreteMeasure>>& pairs,
                               const std::vector<Vec>& controls) {
    LipReport r;
    std::vector<double> ratio(pairs.size(), 0.0);
    std::vector<std::size_t> bad(pairs.size(), 0);
    parallel_for(pairs.size(), [&](std::size_t i) {
        const auto& [mu, nu] = pairs[i];
        const double w1 = wasserstein_distance(mu, nu, 1);
        for (const auto& g : controls) {
            const double diff = std::abs(cost(mu, g) - cost(nu, g));
            if (diff > cost.lipschitz * w1 + 1e-9) ++bad[i];
            if (w1 > 0.0) ratio[i] = std::max(ratio[i], diff / w1);
        }
    });
    r.pairs = pairs.size();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        r.violations += bad[i];
        r.worst_ratio = std::max(r.worst_ratio, ratio[i]);
    }
    return r;
}

/// Sampled Lipschitz quotient of l(., g) in x over random point pairs in [-R, R]^d.
inline double sampled_lipschitz(const RunningCost& cost, int dim, const std::vector<Vec>& controls,
                                std::size_t samples = 2000, double R = 5.0, std::uint64_t seed = 0) {
    Rng rng = make_rng(seed, 7);
    std::uniform_real_distribution<double> u(-R, R);
    double worst = 0.0;
    for (const auto& g : controls)
        for (std::size_t s = 0; s < samples; ++s) {
            Vec x(dim), y(dim);
            for (int k = 0; k < dim; ++k) {
                x[k] = u(rng);
                y[k] = (s % 2 == 0) ? x[k] + 1e-3 * (u(rng) / R) : u(rng);
            }
            const double dist = (x - y).norm();
            if (dist > 0.0) worst = std::max(worst, std::abs(cost.ell(x, g) - cost.ell(y, g)) / dist);
        }
    return worst;
}

struct ValueEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
    double horizon_T = 0.0;
    double truncation_bias_bound = 0.0;  // exp(-T) * sup |L|
    std::vector<double> per_path;
};

namespace detail {

inline ValueEstimate summarize(std::vector<double> v, double T, double bound) {
    ValueEstimate e;
    e.n_paths = v.size();
    e.horizon_T = T;
    e.truncation_bias_bound = std::exp(-T) * bound;
    for (double x : v) e.value += x;
    e.value /= static_cast<double>(v.size());
    double s2 = 0.0;
    for (double x : v) s2 += (x - e.value) * (x - e.value);
    e.std_error = v.size() > 1 ? std::sqrt(s2 / static_cast<double>(v.size() - 1) / static_cast<double>(v.size())) : 0.0;
    e.per_path = std::move(v);
    return e;
}

// One path of int_0^T e^{-t} L(pi_t, g_t) dt with L frozen on each step; the discount is integrated exactly.
// Policy time is shifted by t0. Optionally stops early at step k_stop and hands back pi there.
inline double discounted_path(const FilterModel& model, const RunningCost& cost, const Policy& policy,
                              const InitialLaw& law, double T, double dt, std::size_t N, std::uint64_t seed, double t0,
                              ParticleCloud* stop_cloud = nullptr) {
    double acc = 0.0;
    const std::size_t K = step_count(T, dt);
    closed_loop(
        model, law, policy, T, dt, N, seed,
        [&](std::size_t k, double, const ParticleCloud& c, const Vec& g, const Vec&) {
            if (k == K) {
                if (stop_cloud) *stop_cloud = c;
                return;
            }
            const double a = static_cast<double>(k) * dt, b = static_cast<double>(k + 1) * dt;
            acc += cost(c, g) * (std::exp(-a) - std::exp(-b));
        },
        t0);
    return acc;
}

inline ValueEstimate value_mc_raw(const FilterModel& model, const RunningCost& cost, const Policy& policy,
                                  const InitialLaw& law, double T, double dt, std::size_t N, std::size_t n_paths,
                                  std::uint64_t seed, double t0 = 0.0) {
    require(n_paths >= 1, "need at least one path");
    std::vector<double> v(n_paths);
    parallel_for(n_paths, [&](std::size_t p) {
        v[p] = discounted_path(model, cost, policy, law, T, dt, N, stream_seed(seed, p), t0);
    });
    return summarize(std::move(v), T, cost.bound);
}

}  // namespace detail

/// Monte-Carlo of E int_0^T e^{-t} L(pi_t, g_t) dt along closed-loop filter paths.
inline ValueEstimate value_mc(const FilterModel& model, const RunningCost& cost, const Policy& policy,
                              const InitialLaw& law, double T, double dt, std::size_t N, std::size_t n_paths,
                              std::uint64_t seed) {
    require(T >= 1.0, "value horizon T must be at least 1");
    return detail::value_mc_raw(model, cost, policy, law, T, dt, N, n_paths, seed);
}

struct DppResult {
    double lhs = 0.0;
    double rhs = 0.0;
    double gap = 0.0;  // lhs - rhs
    double std_error = 0.0;
    double truncation_bias = 0.0;
    std::vector<double> lhs_per_policy, rhs_per_policy, lhs_se, rhs_se;
    bool within(double k = 3.0) const { return std::abs(gap) <= k * std_error + truncation_bias; }
};

/// Both sides of the dynamic programming identity at horizon T. The right side runs each policy to tau,
/// then restarts n_inner fresh paths from pi_tau with the same (time-shifted) policy over [tau, T].
inline DppResult dpp_check(const FilterModel& model, const RunningCost& cost, const std::vector<Policy>& policies,
                           const InitialLaw& law, double tau, double T, double dt, std::size_t N, std::size_t n_paths,
                           std::uint64_t seed, std::size_t n_inner = 4) {
    require(!policies.empty(), "policy set is empty");
    require(tau > 0.0 && tau < T, "need 0 < tau < T");
    require(n_paths >= 2 && n_inner >= 1, "need at least two outer paths and one inner path");
    const std::size_t Kt = step_count(tau, dt);
    const double tau_grid = static_cast<double>(Kt) * dt;
    const double rest = T - tau_grid;
    step_count(rest, dt);
    DppResult r;
    std::size_t best_l = 0, best_r = 0;
    std::vector<ValueEstimate> L, R;
    for (std::size_t p = 0; p < policies.size(); ++p) {
        L.push_back(detail::value_mc_raw(model, cost, policies[p], law, T, dt, N, n_paths, stream_seed(seed, 2 * p)));
        const std::uint64_t rs = stream_seed(seed, 2 * p + 1);
        std::vector<double> v(n_paths);
        parallel_for(n_paths, [&](std::size_t i) {
            const std::uint64_t s = stream_seed(rs, i);
            ParticleCloud pi_tau;
            const double head = detail::discounted_path(model, cost, policies[p], law, tau_grid, dt, N, s, 0.0, &pi_tau);
            const InitialLaw restart(pi_tau.to_measure());
            double tail = 0.0;
            for (std::size_t j = 0; j < n_inner; ++j)
                tail += detail::discounted_path(model, cost, policies[p], restart, rest, dt, N,
                                                stream_seed(s, 1000 + j), tau_grid);
            v[i] = head + std::exp(-tau_grid) * tail / static_cast<double>(n_inner);
        });
        R.push_back(detail::summarize(std::move(v), T, cost.bound));
        r.lhs_per_policy.push_back(L.back().value);
        r.lhs_se.push_back(L.back().std_error);
        r.rhs_per_policy.push_back(R.back().value);
        r.rhs_se.push_back(R.back().std_error);
        if (L[p].value < L[best_l].value) best_l = p;
        if (R[p].value < R[best_r].value) best_r = p;
    }
    r.lhs = L[best_l].value;
    r.rhs = R[best_r].value;
    r.gap = r.lhs - r.rhs;
    r.std_error = std::hypot(L[best_l].std_error, R[best_r].std_error);
    r.truncation_bias = std::exp(-T) * cost.bound;
    return r;
}

}  // namespace wlab
