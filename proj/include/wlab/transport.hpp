#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "wlab/errors.hpp"
#include "wlab/measure.hpp"

namespace wlab {

struct PlanEntry {
    std::size_t i;
    std::size_t j;
    double mass;
};

/// Optimal coupling, stored sparsely (basic cells of the final simplex basis).
struct TransportPlan {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<PlanEntry> entries;
    double cost = 0.0;

    Mat dense() const {
        Mat m = Mat::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (const auto& e : entries) m(e.i, e.j) += e.mass;
        return m;
    }
};

struct TransportResult {
    double distance = 0.0;
    TransportPlan plan;
};

inline double ground_cost(const Vec& x, const Vec& y, int p) {
    const double d2 = (x - y).squaredNorm();
    return p == 2 ? d2 : std::sqrt(d2);
}

namespace detail {

// Transportation simplex on the complete bipartite graph. Supplies are
// perturbed (a_i + eps, last demand + n eps) so every basis is nondegenerate.
class TransportSimplex {
public:
    template <class CostFn>
    TransportSimplex(const std::vector<double>& a, const std::vector<double>& b, CostFn&& cost)
        : n_(a.size()), m_(b.size()), cost_(n_ * m_) {
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < m_; ++j) cost_[i * m_ + j] = cost(i, j);
        cmax_ = 0.0;
        for (double c : cost_) cmax_ = std::max(cmax_, std::abs(c));
        const double eps = 1e-13 / static_cast<double>(n_);
        supply_ = a;
        demand_ = b;
        for (double& s : supply_) s += eps;
        demand_.back() += eps * static_cast<double>(n_);
    }

    void solve() {
        northwest_corner();
        const std::size_t nodes = n_ + m_;
        const std::size_t total = n_ * m_;
        const std::size_t block = std::max<std::size_t>(
            std::min<std::size_t>(total, 64), static_cast<std::size_t>(std::sqrt(static_cast<double>(total))));
        const double tol = 1e-14 * std::max(1.0, cmax_);
        std::size_t cursor = 0;
        const std::size_t max_iter = 200 * (nodes + 10) + total;
        for (std::size_t iter = 0; iter < max_iter; ++iter) {
            build_tree();
            // block search pricing
            std::size_t best = total;
            double best_r = -tol;
            std::size_t scanned = 0;
            while (scanned < total) {
                const std::size_t stop = std::min(total, scanned + block);
                for (; scanned < stop; ++scanned) {
                    const std::size_t e = cursor;
                    cursor = cursor + 1 == total ? 0 : cursor + 1;
                    const std::size_t i = e / m_, j = e % m_;
                    const double r = cost_[e] - u_[i] - v_[j];
                    if (r < best_r) {
                        best_r = r;
                        best = e;
                    }
                }
                if (best != total) break;
            }
            if (best == total) return;
            pivot(best);
        }
        throw InternalError("transport simplex exceeded its iteration limit");
    }

    TransportPlan plan(const std::vector<double>& a) const {
        TransportPlan p;
        p.rows = n_;
        p.cols = m_;
        for (std::size_t k = 0; k < basis_.size(); ++k) {
            const double f = flow_[k];
            if (f <= 0.0) continue;
            p.entries.push_back({basis_[k] / m_, basis_[k] % m_, f});
        }
        // strip the perturbation so the marginals match the inputs
        std::vector<double> rs(n_, 0.0);
        for (const auto& e : p.entries) rs[e.i] += e.mass;
        for (auto& e : p.entries) {
            if (rs[e.i] > 0.0) e.mass *= a[e.i] / rs[e.i];
        }
        std::sort(p.entries.begin(), p.entries.end(),
                  [](const PlanEntry& x, const PlanEntry& y) { return x.i != y.i ? x.i < y.i : x.j < y.j; });
        p.cost = 0.0;
        for (const auto& e : p.entries) p.cost += e.mass * cost_[e.i * m_ + e.j];
        return p;
    }

private:
    void northwest_corner() {
        std::vector<double> s = supply_, d = demand_;
        std::size_t i = 0, j = 0;
        basis_.clear();
        flow_.clear();
        while (i < n_ && j < m_) {
            const double f = std::min(s[i], d[j]);
            basis_.push_back(i * m_ + j);
            flow_.push_back(f);
            s[i] -= f;
            d[j] -= f;
            if (i == n_ - 1) {
                ++j;
            } else if (j == m_ - 1) {
                ++i;
            } else if (s[i] <= d[j]) {
                ++i;
            } else {
                ++j;
            }
        }
    }

    // potentials and parent pointers of the basis tree rooted at row 0
    void build_tree() {
        const std::size_t nodes = n_ + m_;
        adj_.assign(nodes, {});
        for (std::size_t k = 0; k < basis_.size(); ++k) {
            const std::size_t i = basis_[k] / m_, j = basis_[k] % m_;
            adj_[i].push_back(k);
            adj_[n_ + j].push_back(k);
        }
        u_.assign(n_, 0.0);
        v_.assign(m_, 0.0);
        parent_edge_.assign(nodes, SIZE_MAX);
        depth_.assign(nodes, SIZE_MAX);
        std::vector<std::size_t> stack{0};
        depth_[0] = 0;
        while (!stack.empty()) {
            const std::size_t node = stack.back();
            stack.pop_back();
            for (std::size_t k : adj_[node]) {
                const std::size_t i = basis_[k] / m_, j = basis_[k] % m_;
                const std::size_t other = node < n_ ? n_ + j : i;
                if (depth_[other] != SIZE_MAX) continue;
                depth_[other] = depth_[node] + 1;
                parent_edge_[other] = k;
                if (other < n_)
                    u_[i] = cost_[basis_[k]] - v_[j];
                else
                    v_[j] = cost_[basis_[k]] - u_[i];
                stack.push_back(other);
            }
        }
        for (std::size_t node = 0; node < nodes; ++node)
            if (depth_[node] == SIZE_MAX) throw InternalError("transport basis is not a spanning tree");
    }

    std::size_t parent_node(std::size_t node, std::size_t k) const {
        const std::size_t i = basis_[k] / m_, j = basis_[k] % m_;
        return node < n_ ? n_ + j : i;
    }

    void pivot(std::size_t entering) {
        const std::size_t ei = entering / m_, ej = entering % m_;
        // path from column node back to row node through the tree
        std::size_t a = ei, b = n_ + ej;
        std::vector<std::size_t> from_a, from_b;
        while (a != b) {
            if (depth_[a] >= depth_[b]) {
                from_a.push_back(parent_edge_[a]);
                a = parent_node(a, parent_edge_[a]);
            } else {
                from_b.push_back(parent_edge_[b]);
                b = parent_node(b, parent_edge_[b]);
            }
        }
        // cycle: entering (+), then walk from column node ej to ei alternating signs
        std::vector<std::size_t> cycle(from_b.begin(), from_b.end());
        cycle.insert(cycle.end(), from_a.rbegin(), from_a.rend());
        // first edge after entering leaves node n_+ej, so it gets sign -
        double theta = std::numeric_limits<double>::infinity();
        std::size_t leave = SIZE_MAX;
        for (std::size_t t = 0; t < cycle.size(); t += 2) {
            const double f = flow_[cycle[t]];
            if (f < theta) {
                theta = f;
                leave = t;
            }
        }
        for (std::size_t t = 0; t < cycle.size(); ++t) flow_[cycle[t]] += (t % 2 == 0 ? -theta : theta);
        const std::size_t slot = cycle[leave];
        basis_[slot] = entering;
        flow_[slot] = theta;
    }

    std::size_t n_, m_;
    std::vector<double> cost_;
    double cmax_ = 0.0;
    std::vector<double> supply_, demand_;
    std::vector<std::size_t> basis_;
    std::vector<double> flow_;
    std::vector<std::vector<std::size_t>> adj_;
    std::vector<double> u_, v_;
    std::vector<std::size_t> parent_edge_, depth_;
};

}  // namespace detail

/// Exact W_p between discrete measures (p in {1,2}) from the Kantorovich LP.
inline TransportResult wasserstein(const DiscreteMeasure& mu, const DiscreteMeasure& nu, int p) {
    require(p == 1 || p == 2, "transport order p must be 1 or 2");
    require(mu.dim() == nu.dim(), "transport between measures of different dimension");
    require(mu.size() <= 4096 && nu.size() <= 4096, "transport supports are limited to 4096 points");
    detail::TransportSimplex lp(mu.weights(), nu.weights(), [&](std::size_t i, std::size_t j) {
        return ground_cost(mu.point(i), nu.point(j), p);
    });
    lp.solve();
    TransportResult r;
    r.plan = lp.plan(mu.weights());
    if (!std::isfinite(r.plan.cost)) throw NumericalError("transport cost overflowed");
    r.plan.cost = std::max(0.0, r.plan.cost);
    r.distance = p == 2 ? std::sqrt(r.plan.cost) : r.plan.cost;
    return r;
}

inline double wasserstein_distance(const DiscreteMeasure& mu, const DiscreteMeasure& nu, int p) {
    return wasserstein(mu, nu, p).distance;
}

/// W_p in one dimension by the monotone (quantile) coupling.
inline double wasserstein_1d(const DiscreteMeasure& mu, const DiscreteMeasure& nu, int p) {
    require(mu.dim() == 1 && nu.dim() == 1, "quantile coupling needs d = 1");
    auto order = [](const DiscreteMeasure& m) {
        std::vector<std::size_t> idx(m.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return m.point(a)[0] < m.point(b)[0]; });
        return idx;
    };
    const auto ia = order(mu), ib = order(nu);
    std::size_t a = 0, b = 0;
    double ra = mu.weight(ia[0]), rb = nu.weight(ib[0]);
    double cost = 0.0;
    while (a < ia.size() && b < ib.size()) {
        const double f = std::min(ra, rb);
        const double gap = std::abs(mu.point(ia[a])[0] - nu.point(ib[b])[0]);
        cost += f * (p == 2 ? gap * gap : gap);
        ra -= f;
        rb -= f;
        if (ra <= rb) {
            if (++a < ia.size()) ra += mu.weight(ia[a]);
        } else {
            if (++b < ib.size()) rb += nu.weight(ib[b]);
        }
    }
    return p == 2 ? std::sqrt(std::max(0.0, cost)) : cost;
}

/// Closed-form W_2 between N(m1, s1^2 I) and N(m2, s2^2 I).
inline double gaussian_w2_oracle(const Vec& m1, double s1, const Vec& m2, double s2) {
    require(s1 > 0.0 && s2 > 0.0, "Gaussian scales must be positive");
    require(m1.size() == m2.size(), "Gaussian means must have equal dimension");
    const double d = static_cast<double>(m1.size());
    return std::sqrt((m1 - m2).squaredNorm() + d * (s1 - s2) * (s1 - s2));
}

/// Empirical estimate of W_2(mu*N_sigma, nu*N_sigma) with common offsets.
inline double wasserstein_smoothed(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double sigma,
                                   std::size_t n_mc, std::uint64_t seed) {
    require(sigma > 0.0, "sigma must be positive");
    require(mu.dim() == nu.dim(), "measures must share a dimension");
    require(n_mc >= 1, "sample count must be positive");
    const int d = mu.dim();
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> nd;
    auto cdf_of = [](const DiscreteMeasure& m) {
        std::vector<double> c(m.size());
        std::partial_sum(m.weights().begin(), m.weights().end(), c.begin());
        return c;
    };
    const auto cm = cdf_of(mu), cn = cdf_of(nu);
    auto pick = [](const std::vector<double>& c, double u) {
        const auto it = std::upper_bound(c.begin(), c.end(), u * c.back());
        return std::min<std::size_t>(static_cast<std::size_t>(it - c.begin()), c.size() - 1);
    };
    std::vector<Vec> xs, ys;
    xs.reserve(n_mc);
    ys.reserve(n_mc);
    for (std::size_t k = 0; k < n_mc; ++k) {
        const double u = unif(rng);
        Vec z(d);
        for (int c = 0; c < d; ++c) z[c] = nd(rng);
        xs.push_back(mu.point(pick(cm, u)) + sigma * z);
        ys.push_back(nu.point(pick(cn, u)) + sigma * z);
    }
    const DiscreteMeasure a = uniform_measure(std::move(xs)), b = uniform_measure(std::move(ys));
    return d == 1 ? wasserstein_1d(a, b, 2) : wasserstein(a, b, 2).distance;
}

}  // namespace wlab
