#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "wlab/derivs.hpp"
#include "wlab/errors.hpp"
#include "wlab/gaussian.hpp"
#include "wlab/measure.hpp"

namespace wlab {

struct GaugeConfig {
    double sigma = 0.5;
    int n_max = 6;
    int l_max = 6;
    int dim = 1;

    static GaugeConfig defaults(int dim, double sigma) {
        GaugeConfig c;
        c.dim = dim;
        c.sigma = sigma;
        if (dim == 2) {
            c.n_max = 5;
            c.l_max = 4;
        }
        return c;
    }

    void validate() const {
        require(sigma > 0.0 && std::isfinite(sigma), "gauge sigma must be positive");
        require(n_max >= 1 && l_max >= 1, "gauge truncation needs n_max >= 1 and l_max >= 1");
        require(n_max <= 20 && l_max <= 12, "gauge truncation too large");
        require(dim == 1 || dim == 2, "gauge dimension must be 1 or 2");
    }
};

inline double gauge_theta(int n, int l, int dim) { return std::ldexp(1.0, -(4 * n + 2 * dim * l)); }
inline double gauge_weight(int n, int l) { return std::ldexp(1.0, 2 * (n - l)); }

/// b_{n,l} as a function of a, written without cancellation for a << theta.
inline double gauge_b(double a, double theta) {
    const double num = a * a + 2.0 * theta * std::sqrt(1.0 - theta) * a;
    return num / (std::sqrt(num + theta * theta) + theta);
}

/// Threshold eta_eps with G <= eta_eps  =>  sum 2^{2(n-l)} a_{n,l} <= eps.
inline double eta_threshold(double eps) {
    require(eps > 0.0, "eps must be positive");
    const double r = eps / (std::sqrt(8.0 + eps) + 2.0 * std::sqrt(2.0));
    return r * r;
}

/// Region (2^n B) cap B_n: the box (lo, hi] minus the hole (hole_lo, hole_hi].
struct DyadicCell {
    int n = 0;
    int l = 0;
    std::size_t index = 0;
    Vec lo, hi;
    bool has_hole = false;
    Vec hole_lo, hole_hi;
    double theta = 1.0;
    double weight = 1.0;
};

namespace detail {

// One axis of the cells at level (n, l): interval j is (lo_j, hi_j], its part
// inside the inner cube of the shell is (ilo_j, ihi_j] when inner_j is set.
struct GaugeLevel {
    int n = 0, l = 0, K = 1;
    std::vector<double> lo, hi, ilo, ihi;
    std::vector<char> inner, full_hole;

    GaugeLevel(int n_, int l_) : n(n_), l(l_), K(1 << l_) {
        const double side = std::ldexp(1.0, n + 1 - l);
        const double h = n >= 1 ? std::ldexp(1.0, n - 1) : 0.0;
        for (int j = 0; j < K; ++j) {
            const double a = -std::ldexp(1.0, n) + j * side, b = a + side;
            lo.push_back(a);
            hi.push_back(b);
            const double ia = std::max(a, -h), ib = std::min(b, h);
            const bool has = n >= 1 && ib > ia;
            inner.push_back(has);
            ilo.push_back(has ? ia : 0.0);
            ihi.push_back(has ? ib : 0.0);
            full_hole.push_back(has && ia == a && ib == b);
        }
    }
};

struct Axis1d {
    double f = 0.0, df = 0.0, d2f = 0.0;
};

// P(lo < x + sigma Z <= hi) and its first two derivatives in x.
inline Axis1d axis_mass(double lo, double hi, double x, double sigma, int order) {
    Axis1d r;
    if (hi <= lo) return r;
    const double ul = (lo - x) / sigma, uh = (hi - x) / sigma;
    r.f = gauss::interval_mass(ul, uh);
    if (order >= 1) {
        const double pl = gauss::pdf(ul), ph = gauss::pdf(uh);
        r.df = (pl - ph) / sigma;
        if (order >= 2) r.d2f = (ul * pl - uh * ph) / (sigma * sigma);
    }
    return r;
}

inline Axis1d operator+(Axis1d a, const Axis1d& b) {
    a.f += b.f;
    a.df += b.df;
    a.d2f += b.d2f;
    return a;
}

// Full interval, its part inside the hole and the part outside the hole.
struct AxisSplit {
    Axis1d full, in, out;
};

inline AxisSplit axis_split(double lo, double hi, bool has_hole, double hlo, double hhi, double x, double sigma,
                            int order) {
    AxisSplit s;
    s.full = axis_mass(lo, hi, x, sigma, order);
    if (has_hole) {
        s.in = axis_mass(hlo, hhi, x, sigma, order);
        s.out = axis_mass(lo, hlo, x, sigma, order) + axis_mass(hhi, hi, x, sigma, order);
    }
    return s;
}

// Calls fn(flat, j) for every non-empty cell of the level; j[k] is the
// interval index along axis k (axis 0 fastest).
template <class Fn>
void for_each_cell(const GaugeLevel& lv, int dim, Fn&& fn) {
    std::size_t total = 1;
    for (int k = 0; k < dim; ++k) total *= static_cast<std::size_t>(lv.K);
    int j[3] = {0, 0, 0};
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        bool empty = lv.n >= 1;
        for (int k = 0; k < dim; ++k) {
            j[k] = static_cast<int>(rem % lv.K);
            rem /= lv.K;
            empty = empty && lv.full_hole[j[k]];
        }
        if (!empty) fn(flat, j);
    }
}

// Box minus hole as the disjoint union over k of
// (in on axes < k) x (out on axis k) x (full on axes > k).
template <class Get>
double region_product(int dim, bool hole, Get&& get) {
    if (!hole) {
        double p = 1.0;
        for (int k = 0; k < dim; ++k) p *= get(k).full.f;
        return p;
    }
    double total = 0.0;
    for (int k = 0; k < dim; ++k) {
        double p = 1.0;
        for (int m = 0; m < dim; ++m) {
            const AxisSplit& s = get(m);
            p *= m < k ? s.in.f : (m == k ? s.out.f : s.full.f);
        }
        total += p;
    }
    return total;
}

// mu(psi_B) for every non-empty cell of the level, in enumeration order.
inline std::vector<double> level_cell_masses(const GaugeLevel& lv, int dim, double sigma, const DiscreteMeasure& mu) {
    const int K = lv.K;
    std::vector<AxisSplit> T(mu.size() * dim * K);
    for (std::size_t p = 0; p < mu.size(); ++p)
        for (int k = 0; k < dim; ++k)
            for (int j = 0; j < K; ++j)
                T[(p * dim + k) * K + j] = axis_split(lv.lo[j], lv.hi[j], lv.inner[j], lv.ilo[j], lv.ihi[j],
                                                      mu.point(p)[k], sigma, 0);
    std::vector<double> out;
    for_each_cell(lv, dim, [&](std::size_t, const int* j) {
        bool hole = lv.n >= 1;
        for (int k = 0; k < dim; ++k) hole = hole && lv.inner[j[k]];
        double acc = 0.0;
        for (std::size_t p = 0; p < mu.size(); ++p)
            acc += mu.weight(p) *
                   region_product(dim, hole, [&](int k) -> const AxisSplit& { return T[(p * dim + k) * K + j[k]]; });
        out.push_back(acc);
    });
    return out;
}

// E[|Z|^2 1{|Z|_inf > R}] upper bound for Z ~ mu * N_sigma (union over axes).
inline double outer_second_moment(const DiscreteMeasure& mu, double sigma, double R) {
    double total = 0.0;
    for (std::size_t p = 0; p < mu.size(); ++p) {
        const Vec& x = mu.point(p);
        double part = 0.0;
        for (int k = 0; k < x.size(); ++k) {
            const double m = x[k];
            const double own = gauss::upper_second_moment(m, sigma, R) + gauss::upper_second_moment(-m, sigma, R);
            const double prob = gauss::upper_tail((R - m) / sigma) + gauss::upper_tail((R + m) / sigma);
            double others = 0.0;
            for (int q = 0; q < x.size(); ++q)
                if (q != k) others += x[q] * x[q] + sigma * sigma;
            part += own + prob * others;
        }
        total += mu.weight(p) * part;
    }
    return total;
}

// (mu * N_sigma)(B_n)
inline double shell_mass(const DiscreteMeasure& mu, double sigma, int n) {
    auto cube = [&](double r) {
        return mu.integrate([&](const Vec& x) {
            double m = 1.0;
            for (int k = 0; k < x.size(); ++k) m *= axis_mass(-r, r, x[k], sigma, 0).f;
            return m;
        });
    };
    if (n == 0) return cube(1.0);
    return std::max(0.0, cube(std::ldexp(1.0, n)) - cube(std::ldexp(1.0, n - 1)));
}

}  // namespace detail

/// All non-empty regions (2^n B) cap B_n for n <= n_max, l <= l_max.
inline std::vector<DyadicCell> cells(const GaugeConfig& cfg) {
    cfg.validate();
    std::vector<DyadicCell> out;
    const int d = cfg.dim;
    for (int n = 0; n <= cfg.n_max; ++n)
        for (int l = 0; l <= cfg.l_max; ++l) {
            const detail::GaugeLevel lv(n, l);
            detail::for_each_cell(lv, d, [&](std::size_t flat, const int* j) {
                DyadicCell c;
                c.n = n;
                c.l = l;
                c.index = flat;
                c.theta = gauge_theta(n, l, d);
                c.weight = gauge_weight(n, l);
                c.lo.resize(d);
                c.hi.resize(d);
                c.hole_lo.resize(d);
                c.hole_hi.resize(d);
                c.has_hole = n >= 1;
                for (int k = 0; k < d; ++k) {
                    c.lo[k] = lv.lo[j[k]];
                    c.hi[k] = lv.hi[j[k]];
                    c.has_hole = c.has_hole && lv.inner[j[k]];
                    c.hole_lo[k] = lv.ilo[j[k]];
                    c.hole_hi[k] = lv.ihi[j[k]];
                }
                out.push_back(std::move(c));
            });
        }
    return out;
}

struct PsiValue {
    double value = 0.0;
    Vec grad;
    Mat hess;
};

/// psi(x) = int_region phi_sigma(z - x) dz with gradient and Hessian in x.
inline PsiValue psi(const DyadicCell& cell, double sigma, const Vec& x) {
    require(sigma > 0.0, "sigma must be positive");
    const int d = static_cast<int>(x.size());
    require(cell.lo.size() == d, "cell and point dimensions differ");
    detail::AxisSplit ax[3];
    for (int k = 0; k < d; ++k)
        ax[k] = detail::axis_split(cell.lo[k], cell.hi[k], cell.has_hole, cell.hole_lo[k], cell.hole_hi[k], x[k],
                                   sigma, 2);
    PsiValue out;
    out.grad = Vec::Zero(d);
    out.hess = Mat::Zero(d, d);
    // product of one factor per axis, differentiated by the product rule
    auto add_piece = [&](const detail::Axis1d* f) {
        auto prod_except = [&](int a, int b) {
            double p = 1.0;
            for (int k = 0; k < d; ++k)
                if (k != a && k != b) p *= f[k].f;
            return p;
        };
        out.value += prod_except(-1, -1);
        for (int k = 0; k < d; ++k) {
            out.grad[k] += f[k].df * prod_except(k, -1);
            out.hess(k, k) += f[k].d2f * prod_except(k, -1);
            for (int m = 0; m < d; ++m)
                if (m != k) out.hess(k, m) += f[k].df * f[m].df * prod_except(k, m);
        }
    };
    detail::Axis1d f[3];
    if (!cell.has_hole) {
        for (int k = 0; k < d; ++k) f[k] = ax[k].full;
        add_piece(f);
    } else {
        for (int k = 0; k < d; ++k) {
            for (int m = 0; m < d; ++m) f[m] = m < k ? ax[m].in : (m == k ? ax[m].out : ax[m].full);
            add_piece(f);
        }
    }
    return out;
}

/// a and b of one cell.
struct ABTerms {
    double a = 0.0;
    double b = 0.0;
};

inline ABTerms a_b_terms(const DiscreteMeasure& mu, const DiscreteMeasure& nu, const DyadicCell& cell, double sigma) {
    require(mu.dim() == nu.dim(), "measures must share a dimension");
    auto mass = [&](const DiscreteMeasure& m) { return m.integrate([&](const Vec& x) { return psi(cell, sigma, x).value; }); };
    ABTerms r;
    r.a = std::abs(mass(mu) - mass(nu));
    r.b = gauge_b(r.a, cell.theta);
    return r;
}

struct GaugeValue {
    double G = 0.0;
    double tail_bound = 0.0;
    double a_sum = 0.0;  // sum 2^{2(n-l)} a_{n,l}, same truncation
    std::vector<double> per_shell;
};

/// Analytic bound on the part of sum 2^{2(n-l)} a_{n,l} (hence of G) dropped by the truncation.
inline double gauge_tail_bound(const DiscreteMeasure& mu, const DiscreteMeasure& nu, const GaugeConfig& cfg) {
    double l_tail = 0.0;
    const double geo = std::ldexp(1.0, -2 * cfg.l_max) / 3.0;
    for (int n = 0; n <= cfg.n_max; ++n)
        l_tail += std::ldexp(1.0, 2 * n) * geo *
                  (detail::shell_mass(mu, cfg.sigma, n) + detail::shell_mass(nu, cfg.sigma, n));
    const double R = std::ldexp(1.0, cfg.n_max);
    const double n_tail = 16.0 / 3.0 *
                          (detail::outer_second_moment(mu, cfg.sigma, R) + detail::outer_second_moment(nu, cfg.sigma, R));
    return l_tail + n_tail;
}

/// Truncated G(mu, nu) with its tail bound.
inline GaugeValue gauge_value(const DiscreteMeasure& mu, const DiscreteMeasure& nu, const GaugeConfig& cfg) {
    cfg.validate();
    require(mu.dim() == cfg.dim && nu.dim() == cfg.dim, "measure dimension differs from gauge dimension");
    GaugeValue out;
    out.per_shell.assign(cfg.n_max + 1, 0.0);
    for (int n = 0; n <= cfg.n_max; ++n)
        for (int l = 0; l <= cfg.l_max; ++l) {
            const detail::GaugeLevel lv(n, l);
            const auto mm = detail::level_cell_masses(lv, cfg.dim, cfg.sigma, mu);
            const auto nm = detail::level_cell_masses(lv, cfg.dim, cfg.sigma, nu);
            const double th = gauge_theta(n, l, cfg.dim), w = gauge_weight(n, l);
            double level = 0.0, alevel = 0.0;
            for (std::size_t c = 0; c < mm.size(); ++c) {
                const double a = std::abs(mm[c] - nm[c]);
                level += gauge_b(a, th);
                alevel += a;
            }
            out.per_shell[n] += w * level;
            out.a_sum += w * alevel;
        }
    for (double s : out.per_shell) out.G += s;
    out.tail_bound = gauge_tail_bound(mu, nu, cfg);
    return out;
}

/// Derivatives of mu -> G(mu, nu) at the requested points.
inline DerivativeBundle gauge_derivatives(const DiscreteMeasure& mu, const DiscreteMeasure& nu, const GaugeConfig& cfg,
                                          const std::vector<Vec>& x_list, const std::vector<Vec>& y_list) {
    cfg.validate();
    require(mu.dim() == cfg.dim && nu.dim() == cfg.dim, "measure dimension differs from gauge dimension");
    const int d = cfg.dim;
    const auto all = cells(cfg);
    // per-cell coefficients of the first and second variations
    std::vector<double> c1(all.size()), c2(all.size());
    {
        std::size_t at = 0;
        for (int n = 0; n <= cfg.n_max; ++n)
            for (int l = 0; l <= cfg.l_max; ++l) {
                const detail::GaugeLevel lv(n, l);
                const auto mm = detail::level_cell_masses(lv, d, cfg.sigma, mu);
                const auto nm = detail::level_cell_masses(lv, d, cfg.sigma, nu);
                const double th = gauge_theta(n, l, d), w = gauge_weight(n, l);
                const double shift = th * std::sqrt(1.0 - th);
                for (std::size_t c = 0; c < mm.size(); ++c, ++at) {
                    const double s = mm[c] - nm[c];
                    const double a = std::abs(s), b = gauge_b(a, th);
                    const double sgn = s < 0.0 ? -1.0 : 1.0;
                    c1[at] = w * sgn * (a + shift) / (b + th);
                    const double r = th / (b + th);
                    c2[at] = w * r * r * r;
                }
            }
    }
    DerivativeBundle out;
    out.x = x_list;
    out.y = y_list;
    auto eval_all = [&](const Vec& p) {
        require(p.size() == d, "evaluation point has the wrong dimension");
        std::vector<PsiValue> v(all.size());
        for (std::size_t c = 0; c < all.size(); ++c) v[c] = psi(all[c], cfg.sigma, p);
        return v;
    };
    std::vector<std::vector<PsiValue>> px(x_list.size()), py(y_list.size());
    parallel_for(x_list.size(), [&](std::size_t i) { px[i] = eval_all(x_list[i]); });
    parallel_for(y_list.size(), [&](std::size_t j) { py[j] = eval_all(y_list[j]); });
    for (std::size_t i = 0; i < x_list.size(); ++i) {
        double f = 0.0;
        Vec g = Vec::Zero(d);
        Mat h = Mat::Zero(d, d);
        for (std::size_t c = 0; c < all.size(); ++c) {
            f += c1[c] * px[i][c].value;
            g += c1[c] * px[i][c].grad;
            h += c1[c] * px[i][c].hess;
        }
        out.first_var.push_back(f);
        out.lions.push_back(g);
        out.lions_grad.push_back(h);
    }
    const std::size_t np = x_list.size() * y_list.size();
    out.second_var.assign(np, 0.0);
    out.lions2.assign(np, Mat::Zero(d, d));
    out.second_var_grad.assign(np, Vec::Zero(d));
    parallel_for(np, [&](std::size_t q) {
        const std::size_t i = q / y_list.size(), j = q % y_list.size();
        double s = 0.0;
        Mat l2 = Mat::Zero(d, d);
        Vec sg = Vec::Zero(d);
        for (std::size_t c = 0; c < all.size(); ++c) {
            const PsiValue& a = px[i][c];
            const PsiValue& b = py[j][c];
            s += c2[c] * (a.value * b.value);
            l2 += c2[c] * a.grad * b.grad.transpose();
            sg += c2[c] * b.value * a.grad;
        }
        out.second_var[q] = s;
        out.lions2[q] = l2;
        out.second_var_grad[q] = sg;
    });
    return out;
}

/// One row of the truncation sweep comparing G with the older gauge G~.
struct BlowupRow {
    int l_max = 0;
    double theta_min = 0.0;
    double tilde_second = 0.0;  // mu x mu (d2 G~ / dmu2)
    double gauge_second = 0.0;  // mu x mu (d2 G / dmu2)
    double gauge = 0.0;         // G itself
};

/// Integrated second variations of G~ and G for l_max = 0..cfg.l_max.
inline std::vector<BlowupRow> old_gauge_second_var_blowup(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                                          const GaugeConfig& cfg) {
    require(cfg.sigma > 0.0 && cfg.n_max >= 0 && cfg.l_max >= 0 && cfg.l_max <= 12, "invalid sweep configuration");
    require(cfg.dim == 1 || cfg.dim == 2, "gauge dimension must be 1 or 2");
    require(mu.dim() == cfg.dim && nu.dim() == cfg.dim, "measure dimension differs from gauge dimension");
    const int d = cfg.dim;
    std::vector<double> tl(cfg.l_max + 1, 0.0), gl(cfg.l_max + 1, 0.0), vl(cfg.l_max + 1, 0.0);
    parallel_for(static_cast<std::size_t>(cfg.l_max + 1), [&](std::size_t li) {
        const int l = static_cast<int>(li);
        for (int n = 0; n <= cfg.n_max; ++n) {
            const detail::GaugeLevel lv(n, l);
            const auto mm = detail::level_cell_masses(lv, d, cfg.sigma, mu);
            const auto nm = detail::level_cell_masses(lv, d, cfg.sigma, nu);
            const double th = gauge_theta(n, l, d), w = gauge_weight(n, l);
            double t = 0.0, g = 0.0, v = 0.0;
            for (std::size_t c = 0; c < mm.size(); ++c) {
                const double a = std::abs(mm[c] - nm[c]);
                const double b = gauge_b(a, th);
                const double q = mm[c] * mm[c];
                // theta^2 / (a^2 + theta^2)^{3/2}, scaled to avoid overflow
                const double rt = th / std::hypot(a, th);
                t += rt * rt * rt / th * q;
                const double rg = th / (b + th);
                g += rg * rg * rg * q;
                v += b;
            }
            tl[li] += w * t;
            gl[li] += w * g;
            vl[li] += w * v;
        }
    });
    std::vector<BlowupRow> rows;
    BlowupRow acc;
    for (int l = 0; l <= cfg.l_max; ++l) {
        acc.l_max = l;
        acc.theta_min = gauge_theta(cfg.n_max, l, d);
        acc.tilde_second += tl[l];
        acc.gauge_second += gl[l];
        acc.gauge += vl[l];
        rows.push_back(acc);
    }
    return rows;
}

}  // namespace wlab
