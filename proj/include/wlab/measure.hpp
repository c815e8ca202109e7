#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wlab/errors.hpp"
#include "wlab/gaussian.hpp"
#include "wlab/parallel.hpp"
#include "wlab/quadrature.hpp"

namespace wlab {

/// Finitely supported probability measure on R^d, d in {1,2,3}.
class DiscreteMeasure {
public:
    DiscreteMeasure() = default;

    DiscreteMeasure(std::vector<Vec> points, std::vector<double> weights)
        : points_(std::move(points)), weights_(std::move(weights)) {
        require(!points_.empty(), "measure needs at least one support point");
        require(points_.size() == weights_.size(), "points and weights must have equal length");
        dim_ = static_cast<int>(points_.front().size());
        require(dim_ >= 1 && dim_ <= 3, "measure dimension must be 1, 2 or 3");
        double total = 0.0;
        for (std::size_t i = 0; i < points_.size(); ++i) {
            require(points_[i].size() == dim_, "all points must have length dim");
            require(points_[i].allFinite(), "support points must be finite");
            require(std::isfinite(weights_[i]) && weights_[i] >= 0.0, "weights must be finite and nonnegative");
            total += weights_[i];
        }
        if (std::abs(total - 1.0) > 1e-9) {
            std::ostringstream os;
            os.precision(12);
            os << "weights must sum to 1 (got " << total << ")";
            throw InvalidInput(os.str());
        }
        for (double& w : weights_) w /= total;
    }

    int dim() const { return dim_; }
    std::size_t size() const { return points_.size(); }
    bool empty() const { return points_.empty(); }
    const Vec& point(std::size_t i) const { return points_[i]; }
    double weight(std::size_t i) const { return weights_[i]; }
    const std::vector<Vec>& points() const { return points_; }
    const std::vector<double>& weights() const { return weights_; }

    /// mu(f) = sum_i w_i f(x_i).
    template <class Fn>
    auto integrate(Fn&& f) const {
        using R = std::decay_t<decltype(f(points_.front()))>;
        R acc = f(points_.front()) * weights_.front();
        for (std::size_t i = 1; i < points_.size(); ++i) acc += f(points_[i]) * weights_[i];
        return acc;
    }

private:
    std::vector<Vec> points_;
    std::vector<double> weights_;
    int dim_ = 0;
};

inline DiscreteMeasure dirac(const Vec& x) {
    require(x.allFinite(), "dirac location must be finite");
    return DiscreteMeasure({x}, {1.0});
}

inline DiscreteMeasure uniform_measure(std::vector<Vec> points) {
    const double w = 1.0 / static_cast<double>(points.size());
    std::vector<double> weights(points.size(), w);
    return DiscreteMeasure(std::move(points), std::move(weights));
}

inline Vec vec1(double x) { return Vec::Constant(1, x); }

/// Builds a measure from plain coordinate rows.
inline DiscreteMeasure make_measure(const std::vector<std::vector<double>>& rows, std::vector<double> weights) {
    std::vector<Vec> pts;
    pts.reserve(rows.size());
    for (const auto& r : rows) pts.push_back(Eigen::Map<const Vec>(r.data(), static_cast<Eigen::Index>(r.size())));
    return DiscreteMeasure(std::move(pts), std::move(weights));
}

inline double moment(const DiscreteMeasure& mu, double p) {
    require(p >= 1.0, "moment order must be >= 1");
    return mu.integrate([p](const Vec& x) { return std::pow(x.norm(), p); });
}

inline Vec mean(const DiscreteMeasure& mu) {
    return mu.integrate([](const Vec& x) -> Vec { return x; });
}

inline Mat covariance(const DiscreteMeasure& mu) {
    const Vec m = mean(mu);
    return mu.integrate([&](const Vec& x) -> Mat { return (x - m) * (x - m).transpose(); });
}

/// sum_k c_k mu_k with the supports concatenated (duplicates kept).
inline DiscreteMeasure combine(const std::vector<std::pair<const DiscreteMeasure*, double>>& parts) {
    std::vector<Vec> pts;
    std::vector<double> w;
    for (const auto& [m, c] : parts) {
        if (c == 0.0) continue;
        require(c > 0.0, "mixture coefficients must be nonnegative");
        for (std::size_t i = 0; i < m->size(); ++i) {
            pts.push_back(m->point(i));
            w.push_back(c * m->weight(i));
        }
    }
    return DiscreteMeasure(std::move(pts), std::move(w));
}

/// (1-t) mu + t nu for t in [0,1].
inline DiscreteMeasure mixture(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double t) {
    require(mu.dim() == nu.dim(), "mixture of measures with different dimensions");
    require(t >= 0.0 && t <= 1.0, "mixture parameter must lie in [0,1]");
    return combine({{&mu, 1.0 - t}, {&nu, t}});
}

/// Image of mu under x -> map(x).
template <class Map>
DiscreteMeasure pushforward(const DiscreteMeasure& mu, Map&& map) {
    std::vector<Vec> pts;
    pts.reserve(mu.size());
    for (const auto& x : mu.points()) pts.push_back(map(x));
    return DiscreteMeasure(std::move(pts), mu.weights());
}

/// i.i.d. categorical draws by weight.
inline std::vector<Vec> sample(const DiscreteMeasure& mu, std::size_t n, std::uint64_t seed) {
    require(n >= 1, "sample count must be positive");
    Rng rng = make_rng(seed);
    std::discrete_distribution<std::size_t> pick(mu.weights().begin(), mu.weights().end());
    std::vector<Vec> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.push_back(mu.point(pick(rng)));
    return out;
}

/// Second moment of mu * N(0, sigma^2 I).
inline double gaussian_convolve_moment2(const DiscreteMeasure& mu, double sigma) {
    require(sigma >= 0.0, "sigma must be nonnegative");
    return moment(mu, 2.0) + mu.dim() * sigma * sigma;
}

/// The mixture density rho = mu * phi_sigma, evaluated in log space.
struct SmoothedDensity {
    DiscreteMeasure base;
    double sigma = 1.0;

    SmoothedDensity(DiscreteMeasure mu, double s) : base(std::move(mu)), sigma(s) {
        require(sigma > 0.0 && std::isfinite(sigma), "sigma must be positive");
    }

    int dim() const { return base.dim(); }

    // log(w_i phi_sigma(x - x_i)) for every component
    void component_logs(const Vec& x, std::vector<double>& out) const {
        out.resize(base.size());
        for (std::size_t i = 0; i < base.size(); ++i) {
            const double w = base.weight(i);
            out[i] = w > 0.0 ? std::log(w) + gauss::log_density((x - base.point(i)).squaredNorm(), sigma, dim())
                             : -std::numeric_limits<double>::infinity();
        }
    }

    double log_at(const Vec& x) const {
        std::vector<double> l;
        component_logs(x, l);
        return gauss::log_sum_exp(l);
    }

    double at(const Vec& x) const { return std::exp(log_at(x)); }

    struct LogDerivs {
        double value;  // log rho
        Vec grad;
        Mat hess;
    };

    /// log rho with its gradient and Hessian.
    LogDerivs log_derivs(const Vec& x) const {
        std::vector<double> l;
        component_logs(x, l);
        const double lse = gauss::log_sum_exp(l);
        const int d = dim();
        const double s2 = sigma * sigma;
        Vec g = Vec::Zero(d);
        Mat m2 = Mat::Zero(d, d);
        for (std::size_t i = 0; i < l.size(); ++i) {
            const double r = std::exp(l[i] - lse);
            if (r == 0.0) continue;
            const Vec di = (base.point(i) - x) / s2;
            g += r * di;
            m2 += r * di * di.transpose();
        }
        Mat h = m2 - g * g.transpose() - Mat::Identity(d, d) / s2;
        return {lse, g, h};
    }
};

inline double smoothed_density_at(const SmoothedDensity& s, const Vec& x) { return s.at(x); }

/// E over rho = mu * N_sigma of f, with a per-component Gauss-Hermite rule.
template <class Fn>
double integrate_smoothed(const DiscreteMeasure& mu, double sigma, const QuadratureRule& std_rule, Fn&& f) {
    double total = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double w = mu.weight(i);
        if (w == 0.0) continue;
        double part = 0.0;
        for (std::size_t k = 0; k < std_rule.size(); ++k)
            part += std_rule.weights[k] * f(Vec(mu.point(i) + sigma * std_rule.nodes[k]));
        total += w * part;
    }
    return total;
}

}  // namespace wlab
