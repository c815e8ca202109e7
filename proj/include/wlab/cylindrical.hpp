#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "wlab/derivs.hpp"
#include "wlab/errors.hpp"
#include "wlab/measure.hpp"
#include "wlab/model.hpp"

namespace wlab {

/// Smooth function on R^d with analytic gradient and Hessian.
struct InnerFn {
    std::function<double(VecRef)> f;
    std::function<Vec(VecRef)> grad;
    std::function<Mat(VecRef)> hess;
    std::string name;
};

inline InnerFn sin_inner(int axis, double freq, double phase = 0.0) {
    InnerFn g;
    g.name = "sin";
    g.f = [=](VecRef x) { return std::sin(freq * x[axis] + phase); };
    g.grad = [=](VecRef x) {
        Vec out = Vec::Zero(x.size());
        out[axis] = freq * std::cos(freq * x[axis] + phase);
        return out;
    };
    g.hess = [=](VecRef x) {
        Mat out = Mat::Zero(x.size(), x.size());
        out(axis, axis) = -freq * freq * std::sin(freq * x[axis] + phase);
        return out;
    };
    return g;
}

inline InnerFn tanh_inner(int axis, double scale = 1.0) {
    InnerFn g;
    g.name = "tanh";
    g.f = [=](VecRef x) { return std::tanh(scale * x[axis]); };
    g.grad = [=](VecRef x) {
        const double t = std::tanh(scale * x[axis]);
        Vec out = Vec::Zero(x.size());
        out[axis] = scale * (1.0 - t * t);
        return out;
    };
    g.hess = [=](VecRef x) {
        const double t = std::tanh(scale * x[axis]);
        Mat out = Mat::Zero(x.size(), x.size());
        out(axis, axis) = -2.0 * scale * scale * t * (1.0 - t * t);
        return out;
    };
    return g;
}

/// exp(-|x - c|^2 / (2 w^2))
inline InnerFn bump_inner(Vec center, double width) {
    InnerFn g;
    g.name = "bump";
    const double iw2 = 1.0 / (width * width);
    g.f = [=](VecRef x) { return std::exp(-0.5 * (x - center).squaredNorm() * iw2); };
    g.grad = [=](VecRef x) {
        const Vec dx = x - center;
        return Vec(-iw2 * std::exp(-0.5 * dx.squaredNorm() * iw2) * dx);
    };
    g.hess = [=](VecRef x) {
        const Vec dx = x - center;
        const double e = std::exp(-0.5 * dx.squaredNorm() * iw2);
        return Mat(e * (iw2 * iw2 * dx * dx.transpose() - iw2 * Mat::Identity(x.size(), x.size())));
    };
    return g;
}

/// <a, x> + c (unbounded; for linear oracles)
inline InnerFn linear_inner(Vec a, double c = 0.0) {
    InnerFn g;
    g.name = "linear";
    g.f = [=](VecRef x) { return a.dot(x) + c; };
    g.grad = [=](VecRef) { return a; };
    g.hess = [=](VecRef x) { return Mat(Mat::Zero(x.size(), x.size())); };
    return g;
}

/// |x|^2
inline InnerFn square_inner() {
    InnerFn g;
    g.name = "square";
    g.f = [](VecRef x) { return x.squaredNorm(); };
    g.grad = [](VecRef x) { return Vec(2.0 * x); };
    g.hess = [](VecRef x) { return Mat(2.0 * Mat::Identity(x.size(), x.size())); };
    return g;
}

inline InnerFn constant_inner(double c) {
    InnerFn g;
    g.name = "constant";
    g.f = [=](VecRef) { return c; };
    g.grad = [](VecRef x) { return Vec(Vec::Zero(x.size())); };
    g.hess = [](VecRef x) { return Mat(Mat::Zero(x.size(), x.size())); };
    return g;
}

/// v(mu) = U(mu(phi_1), ..., mu(phi_n)).
struct CylindricalFn {
    std::function<double(const Vec&)> outer;
    std::function<Vec(const Vec&)> outer_grad;
    std::function<Mat(const Vec&)> outer_hess;
    std::vector<InnerFn> inner;
    std::string name = "cylindrical";

    std::size_t n() const { return inner.size(); }

    template <class M>
    Vec moments(const M& mu) const {
        Vec m = Vec::Zero(static_cast<Eigen::Index>(n()));
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const double w = mu.weight(i);
            for (std::size_t k = 0; k < n(); ++k) m[static_cast<Eigen::Index>(k)] += w * inner[k].f(mu.point(i));
        }
        return m;
    }

    template <class M>
    double operator()(const M& mu) const {
        return outer(moments(mu));
    }
};

/// U(m) = c^T m + 1/2 m^T Q m + k
inline CylindricalFn quadratic_cylindrical(std::vector<InnerFn> inner, Vec c, Mat Q, double k = 0.0,
                                           std::string name = "quadratic") {
    require(static_cast<std::size_t>(c.size()) == inner.size() && Q.rows() == c.size() && Q.cols() == c.size(),
            "outer coefficients must match the inner count");
    const Mat Qs = 0.5 * (Q + Q.transpose());
    CylindricalFn v;
    v.inner = std::move(inner);
    v.outer = [=](const Vec& m) { return c.dot(m) + 0.5 * m.dot(Qs * m) + k; };
    v.outer_grad = [=](const Vec& m) { return Vec(c + Qs * m); };
    v.outer_hess = [=](const Vec&) { return Qs; };
    v.name = std::move(name);
    return v;
}

/// mu -> mu(phi)
inline CylindricalFn linear_cylindrical(InnerFn phi) {
    return quadratic_cylindrical({std::move(phi)}, Vec::Ones(1), Mat::Zero(1, 1), 0.0, "linear");
}

/// mu -> mu(phi)^2
inline CylindricalFn square_cylindrical(InnerFn phi) {
    return quadratic_cylindrical({std::move(phi)}, Vec::Zero(1), Mat::Constant(1, 1, 2.0), 0.0, "square");
}

inline CylindricalFn constant_cylindrical(double k, int dim) {
    (void)dim;
    return quadratic_cylindrical({constant_inner(0.0)}, Vec::Zero(1), Mat::Zero(1, 1), k, "constant");
}

/// mu -> exp(mu(phi_1)) * cos(mu(phi_2)), a non-polynomial outer for cross-checks.
inline CylindricalFn expcos_cylindrical(InnerFn p1, InnerFn p2) {
    CylindricalFn v;
    v.inner = {std::move(p1), std::move(p2)};
    v.outer = [](const Vec& m) { return std::exp(m[0]) * std::cos(m[1]); };
    v.outer_grad = [](const Vec& m) {
        Vec g(2);
        g << std::exp(m[0]) * std::cos(m[1]), -std::exp(m[0]) * std::sin(m[1]);
        return g;
    };
    v.outer_hess = [](const Vec& m) {
        const double e = std::exp(m[0]), c = std::cos(m[1]), s = std::sin(m[1]);
        Mat h(2, 2);
        h << e * c, -e * s, -e * s, -e * c;
        return h;
    };
    v.name = "expcos";
    return v;
}

/// Variational and Lions derivatives of a cylindrical function.
inline DerivativeBundle cylindrical_derivatives(const CylindricalFn& v, const DiscreteMeasure& mu,
                                                const std::vector<Vec>& xs, const std::vector<Vec>& ys) {
    const int d = mu.dim();
    const Vec m = v.moments(mu);
    const Vec g = v.outer_grad(m);
    const Mat H = v.outer_hess(m);
    const std::size_t n = v.n();
    DerivativeBundle b;
    b.x = xs;
    b.y = ys;
    std::vector<std::vector<double>> fx(xs.size()), fy(ys.size());
    std::vector<std::vector<Vec>> gx(xs.size()), gy(ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double fv = 0.0;
        Vec lv = Vec::Zero(d);
        Mat hv = Mat::Zero(d, d);
        for (std::size_t k = 0; k < n; ++k) {
            const auto K = static_cast<Eigen::Index>(k);
            fx[i].push_back(v.inner[k].f(xs[i]));
            gx[i].push_back(v.inner[k].grad(xs[i]));
            fv += g[K] * fx[i][k];
            lv += g[K] * gx[i][k];
            hv += g[K] * v.inner[k].hess(xs[i]);
        }
        b.first_var.push_back(fv);
        b.lions.push_back(lv);
        b.lions_grad.push_back(hv);
    }
    for (std::size_t j = 0; j < ys.size(); ++j)
        for (std::size_t k = 0; k < n; ++k) {
            fy[j].push_back(v.inner[k].f(ys[j]));
            gy[j].push_back(v.inner[k].grad(ys[j]));
        }
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = 0; j < ys.size(); ++j) {
            double s = 0.0;
            Vec sg = Vec::Zero(d);
            Mat l2 = Mat::Zero(d, d);
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t c = 0; c < n; ++c) {
                    const double h = H(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
                    if (h == 0.0) continue;
                    s += h * fx[i][a] * fy[j][c];
                    sg += h * fy[j][c] * gx[i][a];
                    l2 += h * gx[i][a] * gy[j][c].transpose();
                }
            b.second_var.push_back(s);
            b.second_var_grad.push_back(sg);
            b.lions2.push_back(l2);
        }
    return b;
}

/// L^g phi(x) = 1/2 tr(a D2 phi) + <b, D phi>
inline double generator_L(const FilterModel& model, const Vec& g, const InnerFn& phi, VecRef x) {
    const Mat a = model.diffusion(x, g);
    return 0.5 * (a.cwiseProduct(phi.hess(x))).sum() + model.drift(x, g).dot(phi.grad(x));
}

/// M phi(x) = sigma2(x)^T D phi(x)
inline Vec operator_M(const FilterModel& model, const InnerFn& phi, VecRef x) {
    return model.diff2(x).transpose() * phi.grad(x);
}

/// Cylindrical form of A^g v(mu). Works on DiscreteMeasure and ParticleCloud.
template <class M>
double operator_A_cylindrical(const FilterModel& model, const Vec& g, const CylindricalFn& v, const M& mu) {
    const std::size_t n = v.n();
    const int q = model.dim_y;
    Vec m = Vec::Zero(static_cast<Eigen::Index>(n)), gen = Vec::Zero(static_cast<Eigen::Index>(n));
    Vec mh = Vec::Zero(q);
    Mat hm = Mat::Zero(q, static_cast<Eigen::Index>(n));  // mu(h phi_k + M phi_k)
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double w = mu.weight(i);
        const auto x = mu.point(i);
        const Vec h = model.obs(x);
        const Mat s2 = model.diff2(x);
        const Mat a = model.diffusion(x, g);
        const Vec b = model.drift(x, g);
        mh += w * h;
        for (std::size_t k = 0; k < n; ++k) {
            const auto K = static_cast<Eigen::Index>(k);
            const double f = v.inner[k].f(x);
            const Vec df = v.inner[k].grad(x);
            m[K] += w * f;
            hm.col(K) += w * (h * f + s2.transpose() * df);
            gen[K] += w * (0.5 * a.cwiseProduct(v.inner[k].hess(x)).sum() + b.dot(df));
        }
    }
    Mat A = hm;
    for (std::size_t k = 0; k < n; ++k) A.col(static_cast<Eigen::Index>(k)) -= mh * m[static_cast<Eigen::Index>(k)];
    const Vec grad = v.outer_grad(m);
    const Mat H = v.outer_hess(m);
    return 0.5 * (H.cwiseProduct(A.transpose() * A)).sum() + grad.dot(gen);
}

/// Parts of A^g u(mu) built from a derivative bundle over supp mu x supp mu.
struct GeneratorParts {
    double second_order = 0.0;  // control-free noise terms
    double first_order = 0.0;   // mu(<b, d_mu u> + 1/2 tr(a d_x d_mu u))
    double total() const { return second_order + first_order; }
};

/// Second-order part: 1/2 mu x mu of <h(x)-mu(h), h(y)-mu(h)> d2u + the cross term
/// <h(y)-mu(h), sigma2(x)^T d_x d2u(x,y)> (twice, by symmetry) + tr(sigma2(x)^T d2_mumu u sigma2(y)).
inline double generator_second_order(const FilterModel& model, const DerivativeBundle& db, const DiscreteMeasure& mu) {
    const std::size_t n = mu.size();
    require(db.x.size() == n && db.y.size() == n, "derivatives must be sampled on supp mu x supp mu");
    std::vector<Vec> h(n);
    std::vector<Mat> s2(n);
    Vec mh = Vec::Zero(model.dim_y);
    for (std::size_t i = 0; i < n; ++i) {
        h[i] = model.obs(mu.point(i));
        s2[i] = model.diff2(mu.point(i));
        mh += mu.weight(i) * h[i];
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t p = db.pair(i, j);
            const Vec hi = h[i] - mh, hj = h[j] - mh;
            row += mu.weight(j) * (0.5 * hi.dot(hj) * db.second_var[p] + hj.dot(s2[i].transpose() * db.second_var_grad[p]) +
                                   0.5 * (s2[i].transpose() * db.lions2[p] * s2[j]).trace());
        }
        total += mu.weight(i) * row;
    }
    return total;
}

inline double generator_first_order(const FilterModel& model, const Vec& g, const DerivativeBundle& db,
                                    const DiscreteMeasure& mu) {
    require(db.x.size() == mu.size(), "derivatives must be sampled on supp mu");
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const auto& x = mu.point(i);
        s += mu.weight(i) * (model.drift(x, g).dot(db.lions[i]) +
                             0.5 * model.diffusion(x, g).cwiseProduct(db.lions_grad[i]).sum());
    }
    return s;
}

inline GeneratorParts operator_A_from_derivatives(const FilterModel& model, const Vec& g, const DerivativeBundle& db,
                                                  const DiscreteMeasure& mu) {
    db.require_complete();
    return {generator_second_order(model, db, mu), generator_first_order(model, g, db, mu)};
}

/// A^g v(mu) by the cylindrical formula, cross-checked against the
/// measure-derivative formula; InternalError if they disagree beyond 1e-8.
inline double operator_A(const FilterModel& model, const Vec& g, const CylindricalFn& v, const DiscreteMeasure& mu,
                         double tol = 1e-8) {
    const double cyl = operator_A_cylindrical(model, g, v, mu);
    const auto db = cylindrical_derivatives(v, mu, mu.points(), mu.points());
    const double dual = operator_A_from_derivatives(model, g, db, mu).total();
    if (!(std::abs(cyl - dual) <= tol * std::max(1.0, std::abs(cyl))))
        throw InternalError("generator forms disagree: " + std::to_string(cyl) + " vs " + std::to_string(dual));
    return cyl;
}

/// l(x, g), declared Lipschitz in x with constant `lipschitz`; L(mu, g) = mu(l(., g)).
struct RunningCost {
    std::function<double(VecRef, const Vec&)> ell;
    double lipschitz = 1.0;
    double bound = std::numeric_limits<double>::infinity();  // sup |L| used for truncation bias
    std::string name = "cost";

    template <class M>
    double operator()(const M& mu, const Vec& g) const {
        if (mu.size() == 0) return 0.0;
        // centred on the first atom so constants come out exact
        const double l0 = ell(mu.point(0), g);
        double s = 0.0;
        for (std::size_t i = 1; i < mu.size(); ++i) s += mu.weight(i) * (ell(mu.point(i), g) - l0);
        return l0 + s;
    }
};

inline RunningCost constant_cost(double c) {
    return {[c](VecRef, const Vec&) { return c; }, 0.0, std::abs(c), "constant"};
}

/// l(x, g) = x_0 + kappa |g|^2; declared bound is supplied by the caller.
inline RunningCost linear_state_cost(double kappa, double bound) {
    return {[kappa](VecRef x, const Vec& g) { return x[0] + kappa * g.squaredNorm(); }, 1.0, bound, "linear-state"};
}

/// l(x, g) = tanh(x_0) + kappa |g - target|^2, bounded by 1 + kappa * diam^2.
inline RunningCost tanh_cost(double kappa, double target, double control_diam) {
    const double bound = 1.0 + kappa * (control_diam + std::abs(target)) * (control_diam + std::abs(target));
    return {[kappa, target](VecRef x, const Vec& g) {
                double pen = 0.0;
                for (Eigen::Index k = 0; k < g.size(); ++k) pen += (g[k] - target) * (g[k] - target);
                return std::tanh(x[0]) + kappa * pen;
            },
            1.0, bound, "tanh"};
}

}  // namespace wlab
