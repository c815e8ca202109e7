#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "wlab/cylindrical.hpp"
#include "wlab/errors.hpp"
#include "wlab/measure.hpp"
#include "wlab/model.hpp"
#include "wlab/parallel.hpp"

namespace wlab {

inline std::size_t step_count(double T, double dt) {
    require(dt > 0.0 && T > 0.0 && dt <= T + 1e-12, "time step must satisfy 0 < dt <= T");
    const double k = T / dt;
    const auto K = static_cast<std::size_t>(std::llround(k));
    require(K >= 1 && std::abs(k - static_cast<double>(K)) <= 1e-6 * k, "T must be a multiple of dt");
    return K;
}

struct TruthPath {
    std::vector<double> times;
    std::vector<Vec> x;         // X at t_k
    std::vector<Vec> y;         // Y at t_k, Y_0 = 0
    std::vector<Vec> controls;  // g used on [t_k, t_k+1)
};

struct FilterOptions {
    double ess_fraction = 0.5;      // resample when ESS < fraction * N
    std::size_t record_stride = 0;  // store pi_{t_k} every stride steps (0: first and last only)
};

struct FilterPath {
    std::vector<double> times;
    std::vector<std::size_t> measure_steps;  // grid index of each stored measure
    std::vector<DiscreteMeasure> measures;
    std::vector<Vec> means;
    std::vector<Mat> covs;
    std::vector<Vec> observation;  // Y at t_k
    std::vector<Vec> innovation;   // I at t_k
    std::vector<Vec> controls;
    std::vector<double> ess;
    std::size_t resamples = 0;
    std::uint64_t seed = 0;
};

namespace detail {

inline Vec gaussian_vec(int n, Rng& rng) {
    std::normal_distribution<double> nd;
    Vec z(n);
    for (int k = 0; k < n; ++k) z[k] = nd(rng);
    return z;
}

class TruthStepper {
public:
    TruthStepper(const FilterModel& m, Vec x0, Rng rng) : m_(m), x_(std::move(x0)), rng_(std::move(rng)) {}

    const Vec& state() const { return x_; }

    // advances X over [t, t+dt) and returns the observation increment
    Vec step(const Vec& g, double dt) {
        const double sq = std::sqrt(dt);
        const Vec dw1 = sq * gaussian_vec(m_.dim_x, rng_);
        const Vec dw2 = sq * gaussian_vec(m_.dim_y, rng_);
        const Vec dy = m_.obs(x_) * dt + dw2;
        x_ += m_.drift(x_, g) * dt + m_.diff1(x_, g) * dw1 + m_.diff2(x_) * dw2;
        if (!x_.allFinite() || x_.lpNorm<Eigen::Infinity>() > 1e6) throw NumericalError("state blew up (|X| > 1e6)");
        return dy;
    }

private:
    const FilterModel& m_;
    Vec x_;
    Rng rng_;
};

// Weighted particles with the correlated-noise update:
//   log w += <h - pi(h), dY - pi(h) dt> - |h - pi(h)|^2 dt / 2
//   x += (b - sigma2 h) dt + sigma1 sqrt(dt) xi + sigma2 dY
class ParticleSystem {
public:
    ParticleSystem(const FilterModel& m, Mat x0, Rng rng, double ess_fraction)
        : m_(m), rng_(std::move(rng)), ess_fraction_(ess_fraction) {
        cloud_.x = std::move(x0);
        const auto n = cloud_.x.cols();
        require(n >= 2, "particle count must be at least 2");
        cloud_.w = Vec::Constant(n, 1.0 / static_cast<double>(n));
        logw_.resize(n);
    }

    const ParticleCloud& cloud() const { return cloud_; }
    std::size_t resamples() const { return resamples_; }
    double last_ess() const { return ess_; }

    Vec mean_h() const {
        Vec s = Vec::Zero(m_.dim_y);
        for (std::size_t i = 0; i < cloud_.size(); ++i) s += cloud_.weight(i) * m_.obs(cloud_.point(i));
        return s;
    }

    // returns the innovation increment dY - pi(h) dt
    Vec step(const Vec& g, const Vec& dy, double dt) {
        const auto n = cloud_.x.cols();
        const int d = m_.dim_x;
        std::vector<Vec> h(static_cast<std::size_t>(n));
        Vec ph = Vec::Zero(m_.dim_y);
        for (Eigen::Index i = 0; i < n; ++i) {
            h[static_cast<std::size_t>(i)] = m_.obs(cloud_.x.col(i));
            ph += cloud_.w[i] * h[static_cast<std::size_t>(i)];
        }
        const Vec innov = dy - ph * dt;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vec dh = h[static_cast<std::size_t>(i)] - ph;
            logw_[i] = std::log(cloud_.w[i]) + dh.dot(innov) - 0.5 * dh.squaredNorm() * dt;
            mx = std::max(mx, logw_[i]);
        }
        const double sq = std::sqrt(dt);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto x = cloud_.x.col(i);
            const Mat s2 = m_.diff2(x);
            const Vec dv = sq * gaussian_vec(d, rng_);
            const Vec inc = (m_.drift(x, g) - s2 * h[static_cast<std::size_t>(i)]) * dt + m_.diff1(x, g) * dv + s2 * dy;
            cloud_.x.col(i) += inc;
        }
        if (!cloud_.x.allFinite()) throw NumericalError("particles blew up");
        double tot = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            cloud_.w[i] = std::exp(logw_[i] - mx);
            tot += cloud_.w[i];
        }
        cloud_.w /= tot;
        ess_ = 1.0 / cloud_.w.squaredNorm();
        if (ess_ < 2.0) throw DegeneracyError("particle weights collapsed (ESS = " + std::to_string(ess_) + ")");
        if (ess_ < ess_fraction_ * static_cast<double>(n)) resample();
        return innov;
    }

private:
    void resample() {
        const auto n = cloud_.x.cols();
        std::uniform_real_distribution<double> u(0.0, 1.0 / static_cast<double>(n));
        const double start = u(rng_);
        Mat nx(cloud_.x.rows(), n);
        double c = cloud_.w[0];
        Eigen::Index j = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double target = start + static_cast<double>(i) / static_cast<double>(n);
            while (target > c && j + 1 < n) c += cloud_.w[++j];
            nx.col(i) = cloud_.x.col(j);
        }
        cloud_.x = std::move(nx);
        cloud_.w.setConstant(1.0 / static_cast<double>(n));
        ++resamples_;
    }

    const FilterModel& m_;
    ParticleCloud cloud_;
    Vec logw_;
    Rng rng_;
    double ess_fraction_;
    double ess_ = 0.0;
    std::size_t resamples_ = 0;
};

inline void record(FilterPath& fp, std::size_t k, std::size_t K, const ParticleCloud& c, const FilterOptions& opt) {
    auto [m, cv] = mean_cov(c);
    fp.means.push_back(std::move(m));
    fp.covs.push_back(std::move(cv));
    const bool keep = k == 0 || k == K || (opt.record_stride > 0 && k % opt.record_stride == 0);
    if (keep) {
        fp.measure_steps.push_back(k);
        fp.measures.push_back(c.to_measure());
    }
}

}  // namespace detail

/// Euler-Maruyama on the state-observation pair for an open-loop policy.
inline TruthPath simulate_truth(const FilterModel& model, const InitialLaw& law, const Policy& policy, double T, double dt,
                                std::uint64_t seed) {
    model.validate();
    require(!policy.feedback, "feedback policies need the filter: use closed_loop");
    require(law.dim() == model.dim_x, "initial law has the wrong dimension");
    const std::size_t K = step_count(T, dt);
    Rng rng = make_rng(seed, 0);
    Rng init = make_rng(seed, 2);
    detail::TruthStepper truth(model, law.sample(1, init).col(0), std::move(rng));
    TruthPath p;
    const ParticleCloud none;
    Vec y = Vec::Zero(model.dim_y);
    for (std::size_t k = 0; k <= K; ++k) {
        const double t = static_cast<double>(k) * dt;
        p.times.push_back(t);
        p.x.push_back(truth.state());
        p.y.push_back(y);
        if (k == K) break;
        const Vec g = model.clamp(policy.fn(t, none));
        p.controls.push_back(g);
        y += truth.step(g, dt);
    }
    return p;
}

/// Weighted particle approximation of the filter driven by an observation path.
inline FilterPath ks_particle_filter(const FilterModel& model, const InitialLaw& law, const Policy& policy,
                                     const std::vector<Vec>& y_path, std::size_t N, double dt, std::uint64_t seed,
                                     const FilterOptions& opt = {}) {
    model.validate();
    require(N >= 2, "particle count must be at least 2");
    require(y_path.size() >= 2, "observation path needs at least two times");
    require(law.dim() == model.dim_x, "initial law has the wrong dimension");
    for (const auto& y : y_path) require(y.size() == model.dim_y, "observation has the wrong dimension");
    const std::size_t K = y_path.size() - 1;
    Rng init = make_rng(seed, 3);
    detail::ParticleSystem ps(model, law.sample(N, init), make_rng(seed, 1), opt.ess_fraction);
    FilterPath fp;
    fp.seed = seed;
    Vec innov = Vec::Zero(model.dim_y);
    for (std::size_t k = 0; k <= K; ++k) {
        const double t = static_cast<double>(k) * dt;
        fp.times.push_back(t);
        fp.observation.push_back(y_path[k]);
        fp.innovation.push_back(innov);
        fp.ess.push_back(1.0 / ps.cloud().w.squaredNorm());
        detail::record(fp, k, K, ps.cloud(), opt);
        if (k == K) break;
        const Vec g = model.clamp(policy.fn(t, ps.cloud()));
        fp.controls.push_back(g);
        innov += ps.step(g, y_path[k + 1] - y_path[k], dt);
    }
    fp.resamples = ps.resamples();
    return fp;
}

/// Observer for closed_loop: (step k, time, filter, control used next, true state).
using LoopObserver = std::function<void(std::size_t, double, const ParticleCloud&, const Vec&, const Vec&)>;

struct LoopResult {
    Vec final_state;
    ParticleCloud final_cloud;
    std::size_t resamples = 0;
};

/// Truth and filter stepped together so feedback policies see the current filter.
/// The observer runs at every grid time t_k, k = 0..K (the control at k = K is not applied).
inline LoopResult closed_loop(const FilterModel& model, const InitialLaw& law, const Policy& policy, double T, double dt,
                              std::size_t N, std::uint64_t seed, const LoopObserver& observe = {}, double t0 = 0.0,
                              const FilterOptions& opt = {}) {
    model.validate();
    require(law.dim() == model.dim_x, "initial law has the wrong dimension");
    const std::size_t K = step_count(T, dt);
    Rng init_truth = make_rng(seed, 2), init_filter = make_rng(seed, 3);
    detail::TruthStepper truth(model, law.sample(1, init_truth).col(0), make_rng(seed, 0));
    detail::ParticleSystem ps(model, law.sample(N, init_filter), make_rng(seed, 1), opt.ess_fraction);
    for (std::size_t k = 0;; ++k) {
        const double t = t0 + static_cast<double>(k) * dt;
        const Vec g = model.clamp(policy.fn(t, ps.cloud()));
        if (observe) observe(k, t, ps.cloud(), g, truth.state());
        if (k == K) break;
        const Vec dy = truth.step(g, dt);
        ps.step(g, dy, dt);
    }
    return {truth.state(), ps.cloud(), ps.resamples()};
}

struct KalmanState {
    Vec mean;
    Mat cov;
};

/// Correlated-noise Kalman-Bucy filter by explicit Euler on the observation grid.
inline std::vector<KalmanState> kalman_bucy(const FilterModel& model, const Vec& m0, const Mat& P0,
                                            const std::vector<Vec>& y_path, double dt,
                                            const std::vector<Vec>& controls = {}) {
    require(model.linear.has_value(), "Kalman-Bucy needs a linear model");
    const auto& L = *model.linear;
    require(m0.size() == model.dim_x && P0.rows() == model.dim_x && P0.cols() == model.dim_x,
            "initial mean or covariance has the wrong shape");
    require(controls.empty() || controls.size() + 1 >= y_path.size(), "control sequence is too short");
    std::vector<KalmanState> out;
    Vec m = m0;
    Mat P = 0.5 * (P0 + P0.transpose());
    const Mat Q = L.S1 * L.S1.transpose() + L.S2 * L.S2.transpose();
    for (std::size_t k = 0; k < y_path.size(); ++k) {
        out.push_back({m, P});
        if (k + 1 == y_path.size()) break;
        const Mat G = P * L.H.transpose() + L.S2;
        Vec drift = L.A * m + L.c;
        if (model.dim_u > 0) {
            const Vec g = controls.empty() ? Vec::Zero(model.dim_u) : controls[k];
            drift += L.B * g;
        }
        const Vec dy = y_path[k + 1] - y_path[k];
        m = m + drift * dt + G * (dy - L.H * m * dt);
        P = P + (L.A * P + P * L.A.transpose() + Q - G * G.transpose()) * dt;
        P = 0.5 * (P + P.transpose());
        if (!P.allFinite() || Eigen::SelfAdjointEigenSolver<Mat>(P).eigenvalues().minCoeff() < -1e-10)
            throw NumericalError("Kalman-Bucy covariance lost positive semidefiniteness");
    }
    return out;
}

/// Positive root of the scalar stationary Riccati equation 2aP + c^2 + g^2 = (P eta + g)^2.
inline double scalar_riccati_root(double a, double c, double g, double eta) {
    // eta^2 P^2 + 2 (eta g - a) P - c^2 = 0
    const double A = eta * eta, B = 2.0 * eta * g - 2.0 * a, C = -c * c;
    if (A == 0.0) return -C / B;
    return (-B + std::sqrt(B * B - 4.0 * A * C)) / (2.0 * A);
}

struct ItoCheck {
    double residual = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
    std::vector<double> per_path;
};

/// Mean over paths of v(pi_T) - v(pi_0) - int_0^T A^g v(pi_t) dt (left Riemann sum).
inline std::vector<ItoCheck> ito_drift_check(const FilterModel& model, const Vec& g,
                                             const std::vector<CylindricalFn>& fns, const InitialLaw& law, double T,
                                             double dt, std::size_t N, std::size_t n_paths, std::uint64_t seed) {
    require(n_paths >= 2, "need at least two paths");
    const Vec gc = model.clamp(g);
    const Policy pol = constant_policy(gc);
    const std::size_t nf = fns.size();
    std::vector<std::vector<double>> res(nf, std::vector<double>(n_paths, 0.0));
    parallel_for(n_paths, [&](std::size_t p) {
        std::vector<double> start(nf), integral(nf, 0.0), end(nf);
        const std::size_t K = step_count(T, dt);
        closed_loop(model, law, pol, T, dt, N, stream_seed(seed, p),
                    [&](std::size_t k, double, const ParticleCloud& c, const Vec&, const Vec&) {
                        for (std::size_t f = 0; f < nf; ++f) {
                            if (k == 0) start[f] = fns[f](c);
                            if (k == K) {
                                end[f] = fns[f](c);
                                continue;
                            }
                            integral[f] += operator_A_cylindrical(model, gc, fns[f], c) * dt;
                        }
                    });
        for (std::size_t f = 0; f < nf; ++f) res[f][p] = end[f] - start[f] - integral[f];
    });
    std::vector<ItoCheck> out;
    for (std::size_t f = 0; f < nf; ++f) {
        ItoCheck c;
        c.n_paths = n_paths;
        double s = 0.0, s2 = 0.0;
        for (double v : res[f]) s += v;
        c.residual = s / static_cast<double>(n_paths);
        for (double v : res[f]) s2 += (v - c.residual) * (v - c.residual);
        c.std_error = std::sqrt(s2 / static_cast<double>(n_paths - 1) / static_cast<double>(n_paths));
        c.per_path = std::move(res[f]);
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace wlab
