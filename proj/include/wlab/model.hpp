#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "wlab/errors.hpp"
#include "wlab/measure.hpp"
#include "wlab/parallel.hpp"

namespace wlab {

using VecRef = Eigen::Ref<const Vec>;

/// Weighted particles stored column-wise; cheap stand-in for a DiscreteMeasure.
struct ParticleCloud {
    Mat x;  // d x N
    Vec w;  // sums to 1

    int dim() const { return static_cast<int>(x.rows()); }
    std::size_t size() const { return static_cast<std::size_t>(x.cols()); }
    auto point(std::size_t i) const { return x.col(static_cast<Eigen::Index>(i)); }
    double weight(std::size_t i) const { return w[static_cast<Eigen::Index>(i)]; }

    template <class Fn>
    double integrate(Fn&& f) const {
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i) s += weight(i) * f(point(i));
        return s;
    }

    DiscreteMeasure to_measure() const {
        std::vector<Vec> pts(size());
        std::vector<double> ws(size());
        for (std::size_t i = 0; i < size(); ++i) {
            pts[i] = point(i);
            ws[i] = weight(i);
        }
        return DiscreteMeasure(std::move(pts), std::move(ws));
    }

    static ParticleCloud from_measure(const DiscreteMeasure& mu) {
        ParticleCloud c;
        c.x.resize(mu.dim(), static_cast<Eigen::Index>(mu.size()));
        c.w.resize(static_cast<Eigen::Index>(mu.size()));
        for (std::size_t i = 0; i < mu.size(); ++i) {
            c.x.col(static_cast<Eigen::Index>(i)) = mu.point(i);
            c.w[static_cast<Eigen::Index>(i)] = mu.weight(i);
        }
        return c;
    }
};

/// Weighted mean and covariance of any measure-like object.
template <class M>
std::pair<Vec, Mat> mean_cov(const M& mu) {
    const int d = mu.dim();
    Vec m = Vec::Zero(d);
    for (std::size_t i = 0; i < mu.size(); ++i) m += mu.weight(i) * mu.point(i);
    Mat c = Mat::Zero(d, d);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const Vec dx = mu.point(i) - m;
        c += mu.weight(i) * dx * dx.transpose();
    }
    return {m, c};
}

/// Constant matrices of a linear-Gaussian model: b = A x + B g + c, sigma1 = S1,
/// sigma2 = S2, h = H x.
struct LinearParts {
    Mat A, B, S1, S2, H;
    Vec c;
};

struct FilterModel {
    std::string name = "model";
    int dim_x = 1;
    int dim_y = 1;
    int dim_u = 0;
    std::function<Vec(VecRef, VecRef)> drift;  // b(x, g)
    std::function<Mat(VecRef, VecRef)> diff1;  // sigma1(x, g), d x d
    std::function<Mat(VecRef)> diff2;          // sigma2(x), d x q
    std::function<Vec(VecRef)> obs;            // h(x)
    Vec control_lo, control_hi;
    double declared_bound = std::numeric_limits<double>::infinity();  // bounded-coefficient constant C
    std::optional<LinearParts> linear;

    Vec clamp(const Vec& g) const {
        if (dim_u == 0) return Vec::Zero(0);
        require(g.size() == dim_u, "control has the wrong dimension");
        return g.cwiseMax(control_lo).cwiseMin(control_hi);
    }

    /// a = sigma1 sigma1^T + sigma2 sigma2^T
    Mat diffusion(VecRef x, VecRef g) const {
        const Mat s1 = diff1(x, g), s2 = diff2(x);
        return s1 * s1.transpose() + s2 * s2.transpose();
    }

    void validate() const {
        require(dim_x >= 1 && dim_x <= 3, "state dimension must be 1, 2 or 3");
        require(dim_y >= 1, "observation dimension must be positive");
        require(dim_u >= 0 && dim_u <= 2, "control dimension must be 0, 1 or 2");
        require(static_cast<bool>(drift) && static_cast<bool>(diff1) && static_cast<bool>(diff2) &&
                    static_cast<bool>(obs),
                "model coefficients are incomplete");
        require(control_lo.size() == dim_u && control_hi.size() == dim_u, "control box has the wrong dimension");
        for (int k = 0; k < dim_u; ++k) require(control_lo[k] <= control_hi[k], "control box is empty");
        const Vec x = Vec::Zero(dim_x), g = clamp(control_lo);
        require(drift(x, g).size() == dim_x, "drift has the wrong shape");
        const Mat s1 = diff1(x, g), s2 = diff2(x);
        require(s1.rows() == dim_x && s1.cols() == dim_x, "sigma1 must be d x d");
        require(s2.rows() == dim_x && s2.cols() == dim_y, "sigma2 must be d x q");
        require(obs(x).size() == dim_y, "observation function has the wrong shape");
    }
};

inline FilterModel linear_model(const LinearParts& p, Vec control_lo = Vec::Zero(0), Vec control_hi = Vec::Zero(0)) {
    FilterModel m;
    m.name = "linear";
    m.dim_x = static_cast<int>(p.A.rows());
    m.dim_y = static_cast<int>(p.H.rows());
    m.dim_u = static_cast<int>(control_lo.size());
    require(p.A.cols() == m.dim_x && p.c.size() == m.dim_x, "linear drift has the wrong shape");
    require(p.B.rows() == m.dim_x && p.B.cols() == m.dim_u, "control matrix has the wrong shape");
    m.linear = p;
    m.drift = [p](VecRef x, VecRef g) -> Vec {
        Vec out = p.A * x + p.c;
        if (g.size() > 0) out += p.B * g;
        return out;
    };
    m.diff1 = [p](VecRef, VecRef) -> Mat { return p.S1; };
    m.diff2 = [p](VecRef) -> Mat { return p.S2; };
    m.obs = [p](VecRef x) -> Vec { return p.H * x; };
    m.control_lo = std::move(control_lo);
    m.control_hi = std::move(control_hi);
    m.validate();
    return m;
}

/// Scalar linear model dX = (a X + bu g) dt + c dW1 + g2 dW2, dY = eta X dt + dW2.
inline FilterModel scalar_linear_model(double a, double c, double g2, double eta, double bu = 0.0,
                                       double glo = 0.0, double ghi = 0.0, bool controlled = false) {
    LinearParts p;
    p.A = Mat::Constant(1, 1, a);
    p.c = Vec::Zero(1);
    p.S1 = Mat::Constant(1, 1, c);
    p.S2 = Mat::Constant(1, 1, g2);
    p.H = Mat::Constant(1, 1, eta);
    if (controlled) {
        p.B = Mat::Constant(1, 1, bu);
        return linear_model(p, Vec::Constant(1, glo), Vec::Constant(1, ghi));
    }
    p.B = Mat::Zero(1, 0);
    return linear_model(p);
}

/// Bounded smooth coefficients: each is C + sum_k tanh(x_k) M_k.
struct TanhParts {
    Vec b0;
    std::vector<Vec> b1;  // per state axis
    Mat bu;               // d x m control loading
    Mat s10;
    std::vector<Mat> s11;
    Mat s20;
    std::vector<Mat> s21;
    Vec h0;
    std::vector<Vec> h1;
};

inline FilterModel tanh_model(const TanhParts& p, Vec control_lo = Vec::Zero(0), Vec control_hi = Vec::Zero(0)) {
    FilterModel m;
    m.name = "affine-tanh-bounded";
    m.dim_x = static_cast<int>(p.b0.size());
    m.dim_y = static_cast<int>(p.h0.size());
    m.dim_u = static_cast<int>(control_lo.size());
    const int d = m.dim_x;
    require(static_cast<int>(p.b1.size()) == d && static_cast<int>(p.s11.size()) == d &&
                static_cast<int>(p.s21.size()) == d && static_cast<int>(p.h1.size()) == d,
            "tanh model needs one loading per state axis");
    require(p.bu.rows() == d && p.bu.cols() == m.dim_u, "control matrix has the wrong shape");
    m.drift = [p, d](VecRef x, VecRef g) -> Vec {
        Vec out = p.b0;
        for (int k = 0; k < d; ++k) out += std::tanh(x[k]) * p.b1[k];
        if (g.size() > 0) out += p.bu * g;
        return out;
    };
    m.diff1 = [p, d](VecRef x, VecRef) -> Mat {
        Mat out = p.s10;
        for (int k = 0; k < d; ++k) out += std::tanh(x[k]) * p.s11[k];
        return out;
    };
    m.diff2 = [p, d](VecRef x) -> Mat {
        Mat out = p.s20;
        for (int k = 0; k < d; ++k) out += std::tanh(x[k]) * p.s21[k];
        return out;
    };
    m.obs = [p, d](VecRef x) -> Vec {
        Vec out = p.h0;
        for (int k = 0; k < d; ++k) out += std::tanh(x[k]) * p.h1[k];
        return out;
    };
    double bound = p.b0.norm() + p.s10.norm() + p.s20.norm() + p.h0.norm() + p.bu.norm() * 10.0;
    for (int k = 0; k < d; ++k) bound += p.b1[k].norm() + p.s11[k].norm() + p.s21[k].norm() + p.h1[k].norm();
    m.declared_bound = bound;
    m.control_lo = std::move(control_lo);
    m.control_hi = std::move(control_hi);
    m.validate();
    return m;
}

/// Scalar model with piecewise-linear tabulated coefficients (constant beyond the table).
struct TableParts {
    std::vector<double> grid;
    std::vector<double> b, s1, s2, h;
    double bu = 0.0;
};

inline double table_interp(const std::vector<double>& grid, const std::vector<double>& v, double x) {
    if (x <= grid.front()) return v.front();
    if (x >= grid.back()) return v.back();
    const auto it = std::upper_bound(grid.begin(), grid.end(), x);
    const std::size_t j = static_cast<std::size_t>(it - grid.begin());
    const double t = (x - grid[j - 1]) / (grid[j] - grid[j - 1]);
    return (1.0 - t) * v[j - 1] + t * v[j];
}

inline FilterModel table_model(const TableParts& p, Vec control_lo = Vec::Zero(0), Vec control_hi = Vec::Zero(0)) {
    require(p.grid.size() >= 2, "table needs at least two grid points");
    for (std::size_t i = 1; i < p.grid.size(); ++i) require(p.grid[i] > p.grid[i - 1], "table grid must increase");
    for (const auto* v : {&p.b, &p.s1, &p.s2, &p.h})
        require(v->size() == p.grid.size(), "table columns must match the grid");
    FilterModel m;
    m.name = "table";
    m.dim_u = static_cast<int>(control_lo.size());
    require(m.dim_u <= 1, "table models take at most one control");
    m.drift = [p](VecRef x, VecRef g) -> Vec {
        double v = table_interp(p.grid, p.b, x[0]);
        if (g.size() > 0) v += p.bu * g[0];
        return Vec::Constant(1, v);
    };
    m.diff1 = [p](VecRef x, VecRef) -> Mat { return Mat::Constant(1, 1, table_interp(p.grid, p.s1, x[0])); };
    m.diff2 = [p](VecRef x) -> Mat { return Mat::Constant(1, 1, table_interp(p.grid, p.s2, x[0])); };
    m.obs = [p](VecRef x) -> Vec { return Vec::Constant(1, table_interp(p.grid, p.h, x[0])); };
    double bound = std::abs(p.bu) * 10.0;
    for (const auto* v : {&p.b, &p.s1, &p.s2, &p.h})
        for (double e : *v) bound = std::max(bound, std::abs(e));
    m.declared_bound = 4.0 * bound + 1.0;
    m.control_lo = std::move(control_lo);
    m.control_hi = std::move(control_hi);
    m.validate();
    return m;
}

struct BcReport {
    double sup_norm = 0.0;
    double lipschitz = 0.0;
    bool ok = false;
};

/// Probe-grid check of bounded and Lipschitz coefficients against model.declared_bound.
inline BcReport validate_bc(const FilterModel& m, double lo = -6.0, double hi = 6.0, int per_axis = 41) {
    const int d = m.dim_x;
    std::vector<Vec> probes;
    std::size_t total = 1;
    for (int k = 0; k < d; ++k) total *= static_cast<std::size_t>(per_axis);
    for (std::size_t f = 0; f < total; ++f) {
        Vec x(d);
        std::size_t r = f;
        for (int k = 0; k < d; ++k) {
            x[k] = lo + (hi - lo) * static_cast<double>(r % per_axis) / (per_axis - 1);
            r /= per_axis;
        }
        probes.push_back(x);
    }
    std::vector<Vec> controls{m.clamp(m.control_lo)};
    if (m.dim_u > 0) controls.push_back(m.clamp(m.control_hi));
    auto stack = [&](const Vec& x, const Vec& g) {
        const Vec b = m.drift(x, g), h = m.obs(x);
        const Mat s1 = m.diff1(x, g), s2 = m.diff2(x);
        Vec out(b.size() + h.size() + s1.size() + s2.size());
        out << b, h, s1.reshaped(), s2.reshaped();
        return out;
    };
    BcReport r;
    for (const auto& g : controls) {
        std::vector<Vec> vals;
        for (const auto& x : probes) {
            vals.push_back(stack(x, g));
            r.sup_norm = std::max(r.sup_norm, vals.back().lpNorm<Eigen::Infinity>());
        }
        // neighbours along each axis
        const double h = (hi - lo) / (per_axis - 1);
        for (std::size_t f = 0; f < probes.size(); ++f) {
            std::size_t stride = 1;
            for (int k = 0; k < d; ++k) {
                const std::size_t idx = (f / stride) % per_axis;
                if (idx + 1 < static_cast<std::size_t>(per_axis))
                    r.lipschitz = std::max(r.lipschitz, (vals[f + stride] - vals[f]).lpNorm<Eigen::Infinity>() / h);
                stride *= per_axis;
            }
        }
    }
    r.ok = r.sup_norm <= m.declared_bound && r.lipschitz <= m.declared_bound;
    return r;
}

/// Initial law: either atoms or a Gaussian N(mean, cov).
struct InitialLaw {
    std::optional<DiscreteMeasure> atoms;
    Vec mean;
    Mat cov;

    InitialLaw(DiscreteMeasure mu) : atoms(std::move(mu)) {}  // NOLINT implicit
    InitialLaw(Vec m, Mat c) : mean(std::move(m)), cov(std::move(c)) {
        require(cov.rows() == mean.size() && cov.cols() == mean.size(), "initial covariance has the wrong shape");
    }

    int dim() const { return atoms ? atoms->dim() : static_cast<int>(mean.size()); }

    std::pair<Vec, Mat> moments() const { return atoms ? mean_cov(*atoms) : std::make_pair(mean, cov); }

    Mat sample(std::size_t n, Rng& rng) const {
        const int d = dim();
        Mat out(d, static_cast<Eigen::Index>(n));
        if (atoms) {
            std::discrete_distribution<std::size_t> pick(atoms->weights().begin(), atoms->weights().end());
            for (std::size_t i = 0; i < n; ++i) out.col(static_cast<Eigen::Index>(i)) = atoms->point(pick(rng));
            return out;
        }
        Eigen::LLT<Mat> llt(cov + 1e-300 * Mat::Identity(d, d));
        Mat L = llt.matrixL();
        if (llt.info() != Eigen::Success) {
            Eigen::SelfAdjointEigenSolver<Mat> es(cov);
            L = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
        }
        std::normal_distribution<double> nd;
        for (std::size_t i = 0; i < n; ++i) {
            Vec z(d);
            for (int k = 0; k < d; ++k) z[k] = nd(rng);
            out.col(static_cast<Eigen::Index>(i)) = mean + L * z;
        }
        return out;
    }
};

/// Control policy (t, current filter) -> g, clamped to the control box by the caller.
struct Policy {
    std::function<Vec(double, const ParticleCloud&)> fn;
    bool feedback = false;  // depends on the filter
    std::string name = "policy";
};

inline Policy constant_policy(Vec g, std::string name = "constant") {
    Policy p;
    p.fn = [g = std::move(g)](double, const ParticleCloud&) { return g; };
    p.name = std::move(name);
    return p;
}

inline Policy no_control() { return constant_policy(Vec::Zero(0), "none"); }

/// g = offset + gain * (filter mean along axis 0), one control component.
inline Policy mean_feedback_policy(double gain, double offset) {
    Policy p;
    p.feedback = true;
    p.name = "mean-feedback";
    p.fn = [gain, offset](double, const ParticleCloud& c) {
        double m = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) m += c.weight(i) * c.point(i)[0];
        return Vec::Constant(1, offset + gain * m);
    };
    return p;
}

}  // namespace wlab
