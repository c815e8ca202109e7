#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "wlab/derivs.hpp"
#include "wlab/errors.hpp"
#include "wlab/gaussian.hpp"
#include "wlab/measure.hpp"
#include "wlab/parallel.hpp"
#include "wlab/quadrature.hpp"

namespace wlab {

struct EntropyReport {
    double entropy = 0.0;
    double entropy_tilde = 0.0;
    double fisher = 0.0;
    double quadrature_error_estimate = 0.0;
    bool infinite = false;  // raw discrete measure: no density
};

struct EntropyOptions {
    int nodes = 16;  // panels per axis
    int refine_nodes = 24;
    double tol = 1e-6;
    std::size_t mc_nodes = 20000;  // d = 3 only
    std::uint64_t seed = 0x5eed;
};

/// Standard-Gaussian rule used around every mixture component.
inline QuadratureRule entropy_rule(int dim, int nodes, std::uint64_t seed = 0x5eed, std::size_t mc_nodes = 20000) {
    if (dim <= 2) return gaussian_panel_rule(nodes, dim);
    return monte_carlo_gaussian(mc_nodes, dim, stream_seed(seed, static_cast<std::uint64_t>(nodes)));
}

/// Entropy of the unsmoothed measure, which has no density.
inline EntropyReport entropy_raw(const DiscreteMeasure&) {
    EntropyReport r;
    r.infinite = true;
    r.entropy = std::numeric_limits<double>::infinity();
    r.entropy_tilde = r.entropy;
    r.fisher = r.entropy;
    return r;
}

namespace detail {

// Flat-array evaluation of log rho and its derivatives for rho = mu * N_sigma.
struct MixtureEval {
    int d = 1;
    std::size_t k = 0;
    double sigma = 1.0, inv_s2 = 1.0, log_norm = 0.0;
    std::vector<double> px, lw;

    MixtureEval(const DiscreteMeasure& mu, double s) : d(mu.dim()), k(mu.size()), sigma(s), inv_s2(1.0 / (s * s)) {
        log_norm = -0.5 * d * std::log(2.0 * std::numbers::pi * s * s);
        px.resize(k * d);
        lw.resize(k);
        for (std::size_t i = 0; i < k; ++i) {
            for (int a = 0; a < d; ++a) px[i * d + a] = mu.point(i)[a];
            lw[i] = mu.weight(i) > 0.0 ? std::log(mu.weight(i)) : -std::numeric_limits<double>::infinity();
        }
    }

    // buf (size k) receives log(w_i phi(z - x_i)) - max on return
    double log_rho(const double* z, double* buf) const {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < k; ++i) {
            double r2 = 0.0;
            for (int a = 0; a < d; ++a) {
                const double t = z[a] - px[i * d + a];
                r2 += t * t;
            }
            buf[i] = lw[i] - 0.5 * r2 * inv_s2;
            mx = std::max(mx, buf[i]);
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            buf[i] = std::exp(buf[i] - mx);
            sum += buf[i];
        }
        for (std::size_t i = 0; i < k; ++i) buf[i] /= sum;  // responsibilities
        return mx + std::log(sum) + log_norm;
    }

    // gradient g[d] and Hessian h[d*d] of log rho; buf holds responsibilities afterwards
    double derivs(const double* z, double* buf, double* g, double* h) const {
        const double l = log_rho(z, buf);
        for (int a = 0; a < d; ++a) g[a] = 0.0;
        for (int a = 0; a < d * d; ++a) h[a] = 0.0;
        double di[3];
        for (std::size_t i = 0; i < k; ++i) {
            const double r = buf[i];
            if (r == 0.0) continue;
            for (int a = 0; a < d; ++a) di[a] = (px[i * d + a] - z[a]) * inv_s2;
            for (int a = 0; a < d; ++a) {
                g[a] += r * di[a];
                for (int b = 0; b < d; ++b) h[a * d + b] += r * di[a] * di[b];
            }
        }
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) h[a * d + b] -= g[a] * g[b] + (a == b ? inv_s2 : 0.0);
        return l;
    }
};

inline std::vector<double> flat_nodes(const QuadratureRule& rule) {
    const int d = rule.dim();
    std::vector<double> out(rule.size() * d);
    for (std::size_t q = 0; q < rule.size(); ++q)
        for (int a = 0; a < d; ++a) out[q * d + a] = rule.nodes[q][a];
    return out;
}

struct EntropySums {
    double entropy = 0.0;
    double fisher = 0.0;
    double fisher_by_parts = 0.0;
};

inline EntropySums entropy_sums(const DiscreteMeasure& mu, double sigma, const QuadratureRule& rule,
                                bool with_fisher = true) {
    const MixtureEval mix(mu, sigma);
    const int d = mu.dim();
    const auto nodes = flat_nodes(rule);
    std::vector<EntropySums> parts(mu.size());
    parallel_for(mu.size(), [&](std::size_t i) {
        std::vector<double> buf(mix.k);
        double z[3], g[3], h[9];
        EntropySums s;
        for (std::size_t q = 0; q < rule.size(); ++q) {
            for (int a = 0; a < d; ++a) z[a] = mix.px[i * d + a] + sigma * nodes[q * d + a];
            const double w = rule.weights[q];
            if (!with_fisher) {
                s.entropy += w * mix.log_rho(z, buf.data());
                continue;
            }
            s.entropy += w * mix.derivs(z, buf.data(), g, h);
            for (int a = 0; a < d; ++a) {
                s.fisher += w * g[a] * g[a];
                s.fisher_by_parts -= w * h[a * d + a];
            }
        }
        parts[i] = s;
    });
    EntropySums total;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        total.entropy += mu.weight(i) * parts[i].entropy;
        total.fisher += mu.weight(i) * parts[i].fisher;
        total.fisher_by_parts += mu.weight(i) * parts[i].fisher_by_parts;
    }
    return total;
}

}  // namespace detail

/// E(mu * N_sigma) and I(mu * N_sigma) with a caller-supplied rule (no refinement).
inline EntropyReport entropy_with_rule(const DiscreteMeasure& mu, double sigma, const QuadratureRule& rule) {
    require(sigma > 0.0 && std::isfinite(sigma), "sigma must be positive");
    require(rule.dim() == mu.dim(), "quadrature rule dimension differs from the measure");
    const auto s = detail::entropy_sums(mu, sigma, rule);
    EntropyReport r;
    r.entropy = s.entropy;
    r.entropy_tilde = s.entropy + std::numbers::pi * gaussian_convolve_moment2(mu, sigma);
    r.fisher = s.fisher;
    if (!std::isfinite(r.entropy) || !std::isfinite(r.fisher)) throw NumericalError("entropy evaluation overflowed");
    if (!std::isfinite(r.entropy_tilde)) throw NumericalError("second moment overflowed");
    return r;
}

/// Entropy report with a node-refinement error estimate.
inline EntropyReport entropy_smoothed(const DiscreteMeasure& mu, double sigma, const EntropyOptions& opt = {}) {
    const auto coarse = entropy_with_rule(mu, sigma, entropy_rule(mu.dim(), opt.nodes, opt.seed, opt.mc_nodes));
    auto fine = entropy_with_rule(mu, sigma, entropy_rule(mu.dim(), opt.refine_nodes, opt.seed, opt.mc_nodes));
    fine.quadrature_error_estimate =
        std::max(std::abs(fine.entropy - coarse.entropy), std::abs(fine.fisher - coarse.fisher));
    const double tol = mu.dim() <= 2 ? opt.tol : std::max(opt.tol, 0.05);
    if (fine.quadrature_error_estimate > tol * std::max(1.0, std::abs(fine.entropy) + fine.fisher))
        throw AccuracyError("entropy quadrature refinement disagrees by " +
                            std::to_string(fine.quadrature_error_estimate));
    return fine;
}

/// Single-rule E(mu * N_sigma) without Fisher information, for inner loops.
inline double entropy_value(const DiscreteMeasure& mu, double sigma, int nodes = 16) {
    require(sigma > 0.0 && std::isfinite(sigma), "sigma must be positive");
    const double e = detail::entropy_sums(mu, sigma, entropy_rule(mu.dim(), nodes), false).entropy;
    if (!std::isfinite(e)) throw NumericalError("entropy evaluation overflowed");
    return e;
}

inline double entropy_tilde_value(const DiscreteMeasure& mu, double sigma, int nodes = 16) {
    return entropy_value(mu, sigma, nodes) + std::numbers::pi * gaussian_convolve_moment2(mu, sigma);
}

inline double fisher_smoothed(const DiscreteMeasure& mu, double sigma, const EntropyOptions& opt = {}) {
    return entropy_smoothed(mu, sigma, opt).fisher;
}

/// -Tr int d2 log rho d rho, the integrated-by-parts form of the Fisher information.
inline double fisher_by_parts(const DiscreteMeasure& mu, double sigma, int nodes = 24) {
    return detail::entropy_sums(mu, sigma, entropy_rule(mu.dim(), nodes)).fisher_by_parts;
}

namespace detail {

// Derivatives of mu -> E(mu * N_sigma) with one quadrature rule.
inline DerivativeBundle entropy_derivs_rule(const DiscreteMeasure& mu, double sigma, const std::vector<Vec>& xs,
                                            const std::vector<Vec>& ys, const QuadratureRule& rule) {
    const int d = mu.dim();
    const MixtureEval mix(mu, sigma);
    const auto nodes = flat_nodes(rule);
    const std::size_t nq = rule.size();
    DerivativeBundle out;
    out.x = xs;
    out.y = ys;
    out.first_var.assign(xs.size(), 0.0);
    out.lions.assign(xs.size(), Vec::Zero(d));
    out.lions_grad.assign(xs.size(), Mat::Zero(d, d));
    for (const auto& p : xs) require(p.size() == d, "evaluation point has the wrong dimension");
    for (const auto& p : ys) require(p.size() == d, "evaluation point has the wrong dimension");
    parallel_for(xs.size(), [&](std::size_t i) {
        std::vector<double> buf(mix.k);
        double z[3], g[3], h[9];
        double f = 1.0;
        Vec gs = Vec::Zero(d);
        Mat hs = Mat::Zero(d, d);
        for (std::size_t q = 0; q < nq; ++q) {
            for (int a = 0; a < d; ++a) z[a] = xs[i][a] + sigma * nodes[q * d + a];
            const double w = rule.weights[q];
            f += w * mix.derivs(z, buf.data(), g, h);
            for (int a = 0; a < d; ++a) {
                gs[a] += w * g[a];
                for (int b = 0; b < d; ++b) hs(a, b) += w * h[a * d + b];
            }
        }
        out.first_var[i] = f;
        out.lions[i] = gs;
        out.lions_grad[i] = hs;
    });
    // E[phi_sigma(a + sigma Z - b) / rho(a + sigma Z) (1, Z/sigma, Z/sigma (a + sigma Z - b)^T / sigma^2)]
    struct Half {
        double v = 0.0;
        Vec ga;
        Mat l2;
    };
    auto half = [&](const Vec& a, const Vec& b, std::vector<double>& buf) {
        Half r;
        r.ga = Vec::Zero(d);
        r.l2 = Mat::Zero(d, d);
        double z[3], zb[3];
        for (std::size_t q = 0; q < nq; ++q) {
            double r2 = 0.0;
            for (int c = 0; c < d; ++c) {
                z[c] = a[c] + sigma * nodes[q * d + c];
                zb[c] = z[c] - b[c];
                r2 += zb[c] * zb[c];
            }
            const double lr = mix.log_rho(z, buf.data());
            const double wq = rule.weights[q] * std::exp(mix.log_norm - 0.5 * r2 * mix.inv_s2 - lr);
            r.v += wq;
            for (int c = 0; c < d; ++c) {
                const double zc = nodes[q * d + c] / sigma;
                r.ga[c] += wq * zc;
                for (int e = 0; e < d; ++e) r.l2(c, e) += wq * zc * zb[e] * mix.inv_s2;
            }
        }
        return r;
    };
    const std::size_t np = xs.size() * ys.size();
    out.second_var.assign(np, 0.0);
    out.second_var_grad.assign(np, Vec::Zero(d));
    out.lions2.assign(np, Mat::Zero(d, d));
    parallel_for(np, [&](std::size_t q) {
        std::vector<double> buf(mix.k);
        const std::size_t i = q / ys.size(), j = q % ys.size();
        const Half ab = half(xs[i], ys[j], buf);
        const Half ba = half(ys[j], xs[i], buf);
        out.second_var[q] = 1.0 + 0.5 * (ab.v + ba.v);
        out.second_var_grad[q] = ab.ga;
        out.lions2[q] = 0.5 * (ab.l2 + ba.l2.transpose());
    });
    return out;
}

}  // namespace detail

/// Derivatives of mu -> E(mu * N_sigma) with a node-refinement accuracy check.
inline DerivativeBundle entropy_derivatives(const DiscreteMeasure& mu, double sigma, const std::vector<Vec>& x_list,
                                            const std::vector<Vec>& y_list, const EntropyOptions& opt = {}) {
    require(sigma > 0.0 && std::isfinite(sigma), "sigma must be positive");
    auto fine = detail::entropy_derivs_rule(mu, sigma, x_list, y_list,
                                            entropy_rule(mu.dim(), opt.refine_nodes, opt.seed, opt.mc_nodes));
    if (mu.dim() <= 2 && opt.nodes != opt.refine_nodes) {
        const auto coarse = detail::entropy_derivs_rule(mu, sigma, x_list, y_list, entropy_rule(mu.dim(), opt.nodes));
        double err = 0.0, scale = 1.0;
        for (std::size_t i = 0; i < fine.first_var.size(); ++i) {
            err = std::max(err, std::abs(fine.first_var[i] - coarse.first_var[i]));
            scale = std::max(scale, std::abs(fine.first_var[i]));
        }
        for (std::size_t q = 0; q < fine.second_var.size(); ++q) {
            err = std::max(err, std::abs(fine.second_var[q] - coarse.second_var[q]));
            scale = std::max(scale, std::abs(fine.second_var[q]));
        }
        if (err > opt.tol * scale) throw AccuracyError("entropy derivative quadrature disagrees by " + std::to_string(err));
    }
    return fine;
}

/// Adds the moment corrections of E~ = E + pi int |x|^2 to a bundle of E.
inline void add_entropy_tilde_corrections(DerivativeBundle& b, double sigma) {
    for (std::size_t i = 0; i < b.x.size(); ++i) {
        const Vec& x = b.x[i];
        const int d = static_cast<int>(x.size());
        if (i < b.first_var.size()) b.first_var[i] += std::numbers::pi * (x.squaredNorm() + d * sigma * sigma);
        if (i < b.lions.size()) b.lions[i] += 2.0 * std::numbers::pi * x;
        if (i < b.lions_grad.size()) b.lions_grad[i] += 2.0 * std::numbers::pi * Mat::Identity(d, d);
    }
}

inline DerivativeBundle entropy_tilde_derivatives(const DiscreteMeasure& mu, double sigma, const std::vector<Vec>& x_list,
                                                  const std::vector<Vec>& y_list = {}, const EntropyOptions& opt = {}) {
    auto b = entropy_derivatives(mu, sigma, x_list, y_list, opt);
    add_entropy_tilde_corrections(b, sigma);
    return b;
}

/// Lower bound (pi/2) m2 - (d/2) log 2 on E~, with m2 the smoothed second moment.
inline double entropy_lower_bound(const DiscreteMeasure& mu, double sigma) {
    return 0.5 * std::numbers::pi * gaussian_convolve_moment2(mu, sigma) - 0.5 * mu.dim() * std::numbers::ln2;
}

}  // namespace wlab
