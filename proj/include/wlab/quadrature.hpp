#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <vector>

#include "wlab/errors.hpp"
#include "wlab/parallel.hpp"

namespace wlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class QuadratureKind { tensor_gauss_hermite, uniform_grid, monte_carlo, composite_gauss_legendre };

/// Nodes and weights for integrals against a reference law. For
/// `tensor_gauss_hermite` the reference is the standard Gaussian on R^d.
struct QuadratureRule {
    std::vector<Vec> nodes;
    std::vector<double> weights;
    QuadratureKind kind = QuadratureKind::tensor_gauss_hermite;

    int dim() const { return nodes.empty() ? 0 : static_cast<int>(nodes.front().size()); }
    std::size_t size() const { return nodes.size(); }

    template <class Fn>
    double integrate(Fn&& f) const {
        double s = 0.0;
        for (std::size_t k = 0; k < nodes.size(); ++k) s += weights[k] * f(nodes[k]);
        return s;
    }
};

namespace detail {

// Newton iteration on the orthonormal Hermite recurrence (weight e^{-x^2}),
// using the symmetry of the roots.
inline void physicists_gauss_hermite(int n, std::vector<double>& x, std::vector<double>& w) {
    constexpr double pim4 = 0.7511255444649425;  // pi^{-1/4}
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    const int m = (n + 1) / 2;
    double z = 0.0;
    for (int i = 0; i < m; ++i) {
        if (i == 0)
            z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
        else if (i == 1)
            z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
        else if (i == 2)
            z = 1.86 * z - 0.86 * x[0];
        else if (i == 3)
            z = 1.91 * z - 0.91 * x[1];
        else
            z = 2.0 * z - x[i - 2];
        double pp = 0.0;
        bool converged = false;
        for (int its = 0; its < 100; ++its) {
            double p1 = pim4, p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
            }
            pp = std::sqrt(2.0 * n) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) {
                converged = true;
                break;
            }
        }
        if (!converged) throw InternalError("Gauss-Hermite node iteration did not converge");
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
}

}  // namespace detail

/// One-dimensional Gauss-Hermite rule for E[f(Z)], Z ~ N(0,1). Cached per n.
inline const QuadratureRule& gauss_hermite(int n) {
    require(n >= 1 && n <= 200, "Gauss-Hermite node count must be in [1, 200]");
    static std::mutex mtx;
    static std::map<int, QuadratureRule> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<double> x, w;
    detail::physicists_gauss_hermite(n, x, w);
    QuadratureRule rule;
    rule.kind = QuadratureKind::tensor_gauss_hermite;
    for (int k = n - 1; k >= 0; --k) {  // ascending nodes
        rule.nodes.push_back(Vec::Constant(1, std::numbers::sqrt2 * x[k]));
        rule.weights.push_back(w[k] / std::sqrt(std::numbers::pi));
    }
    return cache.emplace(n, std::move(rule)).first->second;
}

namespace detail {

inline QuadratureRule tensorize(const QuadratureRule& g, int dim, QuadratureKind kind) {
    require(dim >= 1 && dim <= 3, "quadrature dimension must be 1, 2 or 3");
    const std::size_t n = g.size();
    QuadratureRule rule;
    rule.kind = kind;
    std::size_t total = 1;
    for (int k = 0; k < dim; ++k) total *= static_cast<std::size_t>(n);
    rule.nodes.reserve(total);
    rule.weights.reserve(total);
    for (std::size_t flat = 0; flat < total; ++flat) {
        Vec node(dim);
        double wt = 1.0;
        std::size_t rem = flat;
        for (int k = 0; k < dim; ++k) {
            const std::size_t idx = rem % n;
            rem /= n;
            node[k] = g.nodes[idx][0];
            wt *= g.weights[idx];
        }
        rule.nodes.push_back(std::move(node));
        rule.weights.push_back(wt);
    }
    return rule;
}

// Gauss-Legendre on [-1, 1] by Newton on P_n.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5)), pp = 1.0;
        for (int its = 0; its < 100; ++its) {
            double p1 = 1.0, p2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1);
            }
            pp = n * (z * p1 - p2) / (z * z - 1.0);
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) <= 1e-15) break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
}

}  // namespace detail

/// Tensor-product Gauss-Hermite rule for the standard Gaussian on R^d.
inline QuadratureRule tensor_gauss_hermite(int n, int dim) {
    return detail::tensorize(gauss_hermite(n), dim, QuadratureKind::tensor_gauss_hermite);
}

/// Composite Gauss-Legendre rule for the standard Gaussian on R^d: `panels`
/// equal panels per axis over [-half_width, half_width], `order` points each.
/// Resolves sharp features that defeat Gauss-Hermite.
inline QuadratureRule gaussian_panel_rule(int panels, int dim, int order = 8, double half_width = 8.5) {
    require(panels >= 1 && order >= 1 && half_width > 0.0, "panel rule needs positive sizes");
    std::vector<double> gx, gw;
    detail::gauss_legendre(order, gx, gw);
    QuadratureRule g;
    const double h = 2.0 * half_width / panels;
    double total = 0.0;
    for (int p = 0; p < panels; ++p)
        for (int k = 0; k < order; ++k) {
            const double z = -half_width + h * (p + 0.5 * (gx[k] + 1.0));
            g.nodes.push_back(Vec::Constant(1, z));
            g.weights.push_back(0.5 * h * gw[k] * std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi));
            total += g.weights.back();
        }
    for (double& w : g.weights) w /= total;  // mass beyond the window is below 1e-16
    return detail::tensorize(g, dim, QuadratureKind::composite_gauss_legendre);
}

/// Equal-weight Monte-Carlo rule for the standard Gaussian on R^d.
inline QuadratureRule monte_carlo_gaussian(std::size_t n, int dim, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> nd;
    QuadratureRule rule;
    rule.kind = QuadratureKind::monte_carlo;
    rule.nodes.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec z(dim);
        for (int k = 0; k < dim; ++k) z[k] = nd(rng);
        rule.nodes.push_back(std::move(z));
    }
    rule.weights.assign(n, 1.0 / static_cast<double>(n));
    return rule;
}

/// Midpoint rule on a uniform grid over the box [lo, hi]^dim (Lebesgue measure).
inline QuadratureRule uniform_grid(double lo, double hi, int per_axis, int dim) {
    require(hi > lo && per_axis >= 1, "uniform grid needs hi > lo and at least one node");
    const double h = (hi - lo) / per_axis;
    QuadratureRule rule;
    rule.kind = QuadratureKind::uniform_grid;
    std::size_t total = 1;
    for (int k = 0; k < dim; ++k) total *= static_cast<std::size_t>(per_axis);
    const double cell = std::pow(h, dim);
    for (std::size_t flat = 0; flat < total; ++flat) {
        Vec node(dim);
        std::size_t rem = flat;
        for (int k = 0; k < dim; ++k) {
            node[k] = lo + (static_cast<double>(rem % per_axis) + 0.5) * h;
            rem /= per_axis;
        }
        rule.nodes.push_back(std::move(node));
        rule.weights.push_back(cell);
    }
    return rule;
}

}  // namespace wlab
