#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support.hpp"
#include "wlab/wlab.hpp"

using namespace wlab;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
    bool pass = true;
    std::string detail;
};

DiscreteMeasure random_measure(std::mt19937_64& rng, int dim, int max_pts, double spread) {
    std::uniform_int_distribution<int> count(1, max_pts);
    std::normal_distribution<double> nd(0.0, spread);
    std::uniform_real_distribution<double> uw(0.1, 1.0);
    const int n = count(rng);
    std::vector<Vec> pts;
    std::vector<double> w;
    double tot = 0.0;
    for (int i = 0; i < n; ++i) {
        Vec x(dim);
        for (int k = 0; k < dim; ++k) x[k] = nd(rng);
        pts.push_back(x);
        w.push_back(uw(rng));
        tot += w.back();
    }
    for (double& v : w) v /= tot;
    return DiscreteMeasure(pts, w);
}

Vec random_point(std::mt19937_64& rng, int d, double radius) {
    std::normal_distribution<double> nd;
    Vec x(d);
    for (int k = 0; k < d; ++k) x[k] = nd(rng);
    return radius * x / x.norm();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// 1-d gauss-legendre on [lo, hi] split into panels
template <class F>
double integrate_panels(F&& f, double lo, double hi, int panels) {
    std::vector<double> x, w;
    detail::gauss_legendre(16, x, w);
    const double h = (hi - lo) / panels;
    double s = 0.0;
    for (int p = 0; p < panels; ++p)
        for (std::size_t k = 0; k < x.size(); ++k) s += 0.5 * h * w[k] * f(lo + h * (p + 0.5 * (x[k] + 1.0)));
    return s;
}

// quantile of mu * N_sigma at level Phi(t); upper tail handled through the survival function
double smoothed_quantile(const DiscreteMeasure& mu, double sigma, double t) {
    double lo = 1e300, hi = -1e300;
    for (const auto& p : mu.points()) {
        lo = std::min(lo, p[0]);
        hi = std::max(hi, p[0]);
    }
    lo -= 40.0 * sigma;
    hi += 40.0 * sigma;
    const bool upper = t > 0.0;
    const double target = 0.5 * std::erfc((upper ? t : -t) / std::sqrt(2.0));
    auto tail = [&](double x) {
        double s = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const double z = (x - mu.point(i)[0]) / sigma;
            s += mu.weight(i) * 0.5 * std::erfc((upper ? z : -z) / std::sqrt(2.0));
        }
        return s;
    };
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        const bool below = upper ? tail(mid) > target : tail(mid) < target;
        (below ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// exact W2 between mu*N_sigma and nu*N_sigma in 1-d by the quantile coupling
double smoothed_w2_1d(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double sigma) {
    const double phi0 = 1.0 / std::sqrt(2.0 * kPi);
    const double sq = integrate_panels(
        [&](double t) {
            const double d = smoothed_quantile(mu, sigma, t) - smoothed_quantile(nu, sigma, t);
            return d * d * phi0 * std::exp(-0.5 * t * t);
        },
        -9.0, 9.0, 36);
    return std::sqrt(sq);
}

double quantile_cost(const DiscreteMeasure& a, const DiscreteMeasure& b, int p) {
    auto sorted = [](const DiscreteMeasure& m) {
        std::vector<std::pair<double, double>> v;
        for (std::size_t i = 0; i < m.size(); ++i) v.emplace_back(m.point(i)[0], m.weight(i));
        std::sort(v.begin(), v.end());
        std::vector<double> cum;
        double s = 0.0;
        for (auto& [x, w] : v) cum.push_back(s += w);
        cum.back() = 1.0;
        return std::make_pair(v, cum);
    };
    const auto [va, ca] = sorted(a);
    const auto [vb, cb] = sorted(b);
    std::vector<double> cuts{0.0};
    cuts.insert(cuts.end(), ca.begin(), ca.end());
    cuts.insert(cuts.end(), cb.begin(), cb.end());
    std::sort(cuts.begin(), cuts.end());
    auto inv = [](const std::vector<std::pair<double, double>>& v, const std::vector<double>& c, double u) {
        const auto it = std::lower_bound(c.begin(), c.end(), u);
        return v[std::min<std::size_t>(it - c.begin(), v.size() - 1)].first;
    };
    double cost = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double len = cuts[k + 1] - cuts[k];
        if (len <= 0.0) continue;
        const double u = 0.5 * (cuts[k] + cuts[k + 1]);
        cost += len * std::pow(std::abs(inv(va, ca, u) - inv(vb, cb, u)), p);
    }
    return cost;
}

InitialLaw gauss1(double m, double v) { return InitialLaw(Vec::Constant(1, m), Mat::Constant(1, 1, v)); }

// ---------------------------------------------------------------- 1
Outcome gauge_axioms() {
    Outcome o;
    std::mt19937_64 rng(101);
    int zero_bad = 0, sym_bad = 0;
    for (int k = 0; k < 50; ++k) {
        const int d = 1 + k % 2;
        const auto cfg = GaugeConfig::defaults(d, 0.5);
        const auto mu = random_measure(rng, d, 6, 1.0), nu = random_measure(rng, d, 6, 1.0);
        zero_bad += gauge_value(mu, mu, cfg).G != 0.0;
        sym_bad += gauge_value(mu, nu, cfg).G != gauge_value(nu, mu, cfg).G;
    }
    const double sigma = 0.5;
    const auto cfg = GaugeConfig::defaults(1, sigma);
    std::uniform_real_distribution<double> ue(1.0, 4.0);
    std::normal_distribution<double> nd;
    auto make_pair = [&](int k) {
        const auto mu = random_measure(rng, 1, 5, 1.2);
        if (k % 3 == 0) return std::make_pair(mu, random_measure(rng, 1, 5, 1.2));
        const double scale = std::pow(10.0, -ue(rng));
        std::vector<Vec> pts(mu.points());
        std::vector<double> w(mu.weights());
        if (k % 3 == 1 || mu.size() == 1) {
            for (auto& p : pts) p[0] += scale * nd(rng);
        } else {
            for (auto& v : w) v *= std::exp(scale * nd(rng));
            double s = 0.0;
            for (double v : w) s += v;
            for (auto& v : w) v /= s;
        }
        return std::make_pair(mu, DiscreteMeasure(pts, w));
    };
    // smallest eps with G <= eta_eps
    auto eps_of = [](double G) { return G + 4.0 * std::sqrt(2.0) * std::sqrt(G); };
    double c_fit = 0.0;
    for (int k = 0; k < 50; ++k) {
        const auto [mu, nu] = make_pair(k);
        const double G = gauge_value(mu, nu, cfg).G;
        const double w = smoothed_w2_1d(mu, nu, sigma);
        if (G > 0.0) c_fit = std::max(c_fit, w * w / eps_of(G));
    }
    const double C = 2.0 * c_fit;
    int violations = 0;
    double worst = 0.0, g_min = 1e300;
    for (int k = 0; k < 200; ++k) {
        const auto [mu, nu] = make_pair(k);
        const double G = gauge_value(mu, nu, cfg).G;
        const double eps = eps_of(G);
        if (std::abs(eta_threshold(eps) - G) > 1e-9 * std::max(G, 1e-12)) ++violations;
        const double w = smoothed_w2_1d(mu, nu, sigma);
        g_min = std::min(g_min, G);
        const double r = w / std::sqrt(C * eps);
        worst = std::max(worst, r);
        if (r > 1.0) ++violations;
    }
    o.pass = zero_bad == 0 && sym_bad == 0 && violations == 0;
    o.detail = fmt("G(mu,mu)!=0: %d, asym: %d, C=%.4g, violations %d/200, max W2s/sqrt(C eps)=%.3f, min G=%.2e",
                   zero_bad, sym_bad, C, violations, worst, g_min);
    return o;
}

// ---------------------------------------------------------------- 2
Outcome gauge_derivative_formulas() {
    Outcome o;
    std::mt19937_64 rng(202);
    double e1 = 0.0, e2 = 0.0, e3 = 0.0;
    for (int k = 0; k < 30; ++k) {
        const int d = 1 + k % 2;
        const auto cfg = GaugeConfig::defaults(d, 0.5);
        const auto mu = random_measure(rng, d, 4, 1.0), nu = random_measure(rng, d, 4, 1.0);
        // along the segment towards nu every cell difference shrinks without changing sign
        const MeasureFunctional F{[&](const DiscreteMeasure& m) { return gauge_value(m, nu, cfg).G; }, "G"};
        std::vector<Vec> xs(nu.points());
        std::vector<double> wx(nu.weights());
        for (std::size_t i = 0; i < mu.size(); ++i) {
            xs.push_back(mu.point(i));
            wx.push_back(-mu.weight(i));
        }
        const auto db = gauge_derivatives(mu, nu, cfg, xs, xs);
        double first = 0.0, second = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            first += wx[i] * db.first_var[i];
            for (std::size_t j = 0; j < xs.size(); ++j) second += wx[i] * wx[j] * db.second_var[db.pair(i, j)];
        }
        e1 = std::max(e1, rel_err(first, var_derivative_fd(F, mu, nu).richardson));
        e3 = std::max(e3, rel_err(second, second_var_fd(F, mu, nu, nu).richardson));

        std::vector<Vec> pts;
        for (int t = 0; t < 3; ++t) pts.push_back(random_point(rng, d, 0.3 + t));
        const auto dl = gauge_derivatives(mu, nu, cfg, pts, {});
        const double h = 1e-5;
        double diff = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (int c = 0; c < d; ++c) {
                Vec e = Vec::Zero(d);
                e[c] = h;
                const auto dp = gauge_derivatives(mu, nu, cfg, {pts[i] + e, pts[i] - e}, {});
                const double fd = (dp.first_var[0] - dp.first_var[1]) / (2 * h);
                diff = std::max(diff, std::abs(dl.lions[i][c] - fd));
                scale = std::max(scale, std::abs(fd));
            }
        e2 = std::max(e2, diff / scale);
    }
    o.pass = e1 <= 1e-4 && e2 <= 1e-5 && e3 <= 5e-4;
    o.detail = fmt("max rel err: first var %.2e (tol 1e-4), lions %.2e (tol 1e-5), second var %.2e (tol 5e-4)", e1, e2,
                   e3);
    return o;
}

// ---------------------------------------------------------------- 3
struct Envelope {
    double first = 0.0, lions = 0.0, lions_grad = 0.0, second = 0.0, lions2 = 0.0;
    std::vector<double> list() const { return {first, lions, lions_grad, second, lions2}; }
};

Envelope fit_envelope(std::mt19937_64& rng, int d, int pairs) {
    Envelope e;
    const auto cfg = GaugeConfig::defaults(d, 0.5);
    std::uniform_real_distribution<double> ur(3.0, 40.0);
    for (int k = 0; k < pairs; ++k) {
        const auto mu = random_measure(rng, d, 4, 1.5), nu = random_measure(rng, d, 4, 1.5);
        std::vector<Vec> xs;
        for (int t = 0; t < 12; ++t) xs.push_back(random_point(rng, d, ur(rng)));
        for (int t = 0; t < 12; ++t) xs.push_back(random_point(rng, d, 0.25 * t));
        const auto db = gauge_derivatives(mu, nu, cfg, xs, xs);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double wx = 1.0 + xs[i].squaredNorm();
            e.first = std::max(e.first, std::abs(db.first_var[i]) / wx);
            e.lions = std::max(e.lions, db.lions[i].norm() / wx);
            e.lions_grad = std::max(e.lions_grad, db.lions_grad[i].norm() / wx);
            for (std::size_t j = 0; j < xs.size(); ++j) {
                const double wxy = wx * (1.0 + xs[j].squaredNorm());
                e.second = std::max(e.second, std::abs(db.second_var[db.pair(i, j)]) / wxy);
                e.lions2 = std::max(e.lions2, db.lions2[db.pair(i, j)].norm() / wxy);
            }
        }
    }
    return e;
}

Outcome growth_bounds() {
    Outcome o;
    std::ostringstream os;
    double worst = 1.0;
    for (int d : {1, 2}) {
        std::mt19937_64 cal_rng(300 + d), eval_rng(400 + d);
        const auto cal = fit_envelope(cal_rng, d, 50).list(), ev = fit_envelope(eval_rng, d, 50).list();
        os << "d=" << d << " ratios";
        for (std::size_t k = 0; k < cal.size(); ++k) {
            const double r = std::max(cal[k] / ev[k], ev[k] / cal[k]);
            worst = std::max(worst, std::isfinite(r) ? r : 1e300);
            os << ' ' << fmt("%.3f", r);
        }
        os << "; ";
    }
    o.pass = worst <= 2.0;
    o.detail = os.str() + fmt("worst calibration/evaluation factor %.3f (tol 2)", worst);
    return o;
}

// ---------------------------------------------------------------- 4
Outcome blowup() {
    Outcome o;
    GaugeConfig cfg = GaugeConfig::defaults(2, 0.5);
    cfg.l_max = 10;
    const auto mu = make_measure({{0.1, 0.2}, {-0.3, 0.1}, {0.4, -0.5}}, {0.3, 0.3, 0.4});
    const auto rows = old_gauge_second_var_blowup(mu, mu, cfg);
    double min_gain = 1e300, g_change = 0.0;
    for (std::size_t l = 1; l < rows.size(); ++l) {
        min_gain = std::min(min_gain, rows[l].tilde_second / rows[l - 1].tilde_second - 1.0);
        if (rows[l].l_max >= 8)
            g_change = std::max(g_change, std::abs(rows[l].gauge_second / rows[l - 1].gauge_second - 1.0));
    }
    o.pass = min_gain > 0.01 && g_change < 0.01;
    o.detail = fmt("d=2: G~ second variation %.4g -> %.4g, smallest step gain %.2f%%; G change from l_max=8 on %.2e%%",
                   rows.front().tilde_second, rows.back().tilde_second, 100 * min_gain, 100 * g_change);
    return o;
}

// ---------------------------------------------------------------- 5
Outcome entropy_suite() {
    Outcome o;
    double closed = 0.0, fisher = 0.0, id1 = 0.0, id2 = 0.0;
    for (double s : {0.25, 0.5, 1.0})
        for (int d : {1, 2}) {
            const auto r = entropy_smoothed(dirac(Vec::Zero(d)), s);
            closed = std::max(closed, std::abs(r.entropy + 0.5 * d * std::log(2 * kPi * std::exp(1.0) * s * s)));
            fisher = std::max(fisher, std::abs(r.fisher - d / (s * s)));
        }
    std::mt19937_64 rng(505);
    std::uniform_real_distribution<double> us(0.2, 1.0);
    int bound_bad = 0;
    for (int k = 0; k < 100; ++k) {
        const int d = 1 + k % 2;
        const auto mu = random_measure(rng, d, 5, 1.0);
        const double s = us(rng);
        if (entropy_smoothed(mu, s).entropy_tilde < entropy_lower_bound(mu, s) - 1e-12) ++bound_bad;
        if (k < 20) {
            const auto db = entropy_derivatives(mu, s, mu.points(), mu.points());
            double first = 0.0, second = 0.0;
            for (std::size_t i = 0; i < mu.size(); ++i) {
                first += mu.weight(i) * db.first_var[i];
                for (std::size_t j = 0; j < mu.size(); ++j)
                    second += mu.weight(i) * mu.weight(j) * db.second_var[db.pair(i, j)];
            }
            id1 = std::max(id1, std::abs(first - 1.0 - entropy_smoothed(mu, s).entropy));
            id2 = std::max(id2, std::abs(second - 2.0));
        }
    }
    const double s_eq = 1.0 / std::sqrt(kPi);
    const auto d0 = dirac(vec1(0.0));
    const double eq = std::abs(entropy_smoothed(d0, s_eq).entropy_tilde - entropy_lower_bound(d0, s_eq));
    o.pass = closed <= 1e-6 && bound_bad == 0 && eq <= 1e-8 && fisher <= 1e-6 && id1 <= 1e-6 && id2 <= 1e-6;
    o.detail = fmt("closed form %.1e, bound violations %d/100, equality gap %.1e, fisher %.1e, identities %.1e / %.1e",
                   closed, bound_bad, eq, fisher, id1, id2);
    return o;
}

// ---------------------------------------------------------------- 6
Outcome transport_suite() {
    Outcome o;
    std::mt19937_64 rng(606);
    double lp_err = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto a = random_measure(rng, 1, 8, 1.5), b = random_measure(rng, 1, 8, 1.5);
        for (int p : {1, 2}) {
            const double q = quantile_cost(a, b, p);
            lp_err = std::max(lp_err, std::abs(wasserstein(a, b, p).plan.cost - q));
        }
    }
    double gauss_err = 0.0;
    const std::vector<std::tuple<double, double, double, double>> cases{
        {0.0, 0.0, 1.0, 0.0}, {0.0, 0.0, 2.5, 0.0}, {-1.0, 0.5, 1.0, 1.2}, {0.3, 1.0, 0.0, 0.2}};
    const double sigma = 0.5;
    for (std::size_t c = 0; c < cases.size(); ++c) {
        const auto [m1, s1, m2, s2] = cases[c];
        // atoms at the Gaussian quantiles stand in for N(m, s^2); s = 0 is a Dirac
        auto gaussian_atoms = [](double m, double s) {
            if (s == 0.0) return dirac(vec1(m));
            std::vector<Vec> pts;
            const int n = 2000;
            for (int i = 0; i < n; ++i) {
                const double u = (i + 0.5) / n;
                double lo = -10.0, hi = 10.0;
                for (int it = 0; it < 80; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (0.5 * std::erfc(-mid / std::sqrt(2.0)) < u ? lo : hi) = mid;
                }
                pts.push_back(vec1(m + s * 0.5 * (lo + hi)));
            }
            return uniform_measure(pts);
        };
        const double est = wasserstein_smoothed(gaussian_atoms(m1, s1), gaussian_atoms(m2, s2), sigma, 4000, 60 + c);
        const double exact = gaussian_w2_oracle(vec1(m1), std::hypot(s1, sigma), vec1(m2), std::hypot(s2, sigma));
        gauss_err = std::max(gauss_err, rel_err(est, exact));
    }
    int tri_bad = 0, order_bad = 0;
    for (int k = 0; k < 60; ++k) {
        const int d = 1 + k % 2;
        const auto a = random_measure(rng, d, 6, 1.5), b = random_measure(rng, d, 6, 1.5),
                   c = random_measure(rng, d, 6, 1.5);
        for (int p : {1, 2}) {
            const double ab = wasserstein_distance(a, b, p), bc = wasserstein_distance(b, c, p),
                         ac = wasserstein_distance(a, c, p);
            tri_bad += ac > ab + bc + 1e-12;
        }
        order_bad += wasserstein_distance(a, b, 1) > wasserstein_distance(a, b, 2) + 1e-12;
    }
    o.pass = lp_err <= 1e-9 && gauss_err <= 0.02 && tri_bad == 0 && order_bad == 0;
    o.detail = fmt("LP vs quantile %.1e, smoothed estimator vs Gaussian oracle %.2f%%, triangle %d, W1>W2 %d", lp_err,
                   100 * gauss_err, tri_bad, order_bad);
    return o;
}

// ---------------------------------------------------------------- 7
double rmse_vs_kalman(const FilterModel& model, std::size_t N, double dt, std::uint64_t seed) {
    const auto law = gauss1(0.5, 0.2);
    const auto truth = simulate_truth(model, law, no_control(), 1.0, dt, seed);
    const auto fp = ks_particle_filter(model, law, no_control(), truth.y, N, dt, seed + 1000);
    const auto kb = kalman_bucy(model, law.mean, law.cov, truth.y, dt);
    double s = 0.0;
    for (std::size_t k = 0; k < kb.size(); ++k) s += std::pow(fp.means[k][0] - kb[k].mean[0], 2);
    return std::sqrt(s / static_cast<double>(kb.size()));
}

Outcome filtering() {
    Outcome o;
    const auto model = scalar_linear_model(-1.0, 1.0, 0.5, 2.0);
    double avg = 0.0;
    for (int s = 0; s < 20; ++s) avg += rmse_vs_kalman(model, 5000, 1e-3, 700 + s) / 20;
    const std::vector<std::size_t> Ns{250, 500, 1000, 2000, 4000};
    std::vector<double> lx, ly;
    for (std::size_t N : Ns) {
        double r = 0.0;
        for (int s = 0; s < 20; ++s) r += rmse_vs_kalman(model, N, 1e-2, 800 + s) / 20;
        lx.push_back(std::log(static_cast<double>(N)));
        ly.push_back(std::log(r));
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i] / lx.size();
        my += ly[i] / ly.size();
    }
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    const double slope = sxy / sxx;
    o.pass = avg <= 0.05 && std::abs(slope + 0.5) <= 0.15;
    o.detail = fmt("RMSE vs Kalman-Bucy %.4f (tol 0.05) over 20 seeds; N-sweep slope %.3f (target -0.5 +- 0.15)", avg,
                   slope);
    return o;
}

// ---------------------------------------------------------------- 8
Outcome ito_generator() {
    Outcome o;
    std::mt19937_64 rng(808);
    std::uniform_int_distribution<int> dd(1, 3), qq(1, 2), nn(1, 6), mm(0, 2);
    int dual_bad = 0;
    for (int t = 0; t < 100; ++t) {
        const int d = dd(rng);
        const auto model = testsupport::random_tanh_model(rng, d, qq(rng), mm(rng));
        const auto v = testsupport::random_cylindrical(rng, d);
        const auto mu = testsupport::random_measure(rng, d, nn(rng), 1.0);
        try {
            operator_A(model, Vec::Constant(model.dim_u, 0.37), v, mu, 1e-8);
        } catch (const AccuracyError&) {
            ++dual_bad;
        }
    }
    const std::vector<CylindricalFn> fns{linear_cylindrical(sin_inner(0, 1.0)), square_cylindrical(tanh_inner(0)),
                                         expcos_cylindrical(tanh_inner(0), sin_inner(0, 0.8, 0.3))};
    const std::vector<std::pair<std::string, FilterModel>> models{
        {"h=0", scalar_linear_model(-0.5, 0.8, 0.0, 0.0)}, {"correlated", scalar_linear_model(-1.0, 1.0, 0.5, 1.0)}};
    std::ostringstream os;
    int ito_bad = 0;
    for (std::size_t m = 0; m < models.size(); ++m) {
        const auto res = ito_drift_check(models[m].second, Vec::Zero(0), fns, gauss1(0.3, 0.4), 0.5, 0.002, 1000, 200,
                                         90 + m);
        os << models[m].first << ':';
        for (const auto& r : res) {
            const double z = r.std_error > 0.0 ? std::abs(r.residual) / r.std_error : (r.residual == 0.0 ? 0.0 : 1e300);
            ito_bad += z > 3.0;
            os << ' ' << fmt("%.2f", z);
        }
        os << ' ';
    }
    o.pass = dual_bad == 0 && ito_bad == 0;
    o.detail = fmt("dual formula mismatches %d/100; |residual|/SE ", dual_bad) + os.str() + "(tol 3)";
    return o;
}

// ---------------------------------------------------------------- 9
Outcome hjb() {
    Outcome o;
    std::mt19937_64 rng(909);
    double manufactured = 0.0;
    for (int t = 0; t < 40; ++t) {
        const int d = 1 + t % 2;
        auto model = testsupport::random_tanh_model(rng, d, 1, 1);
        model.control_lo = model.control_hi = Vec::Constant(1, 0.25);
        const auto phi = testsupport::random_inner(rng, d);
        const auto mu = testsupport::random_measure(rng, d, 5, 1.0);
        const RunningCost cost{[model, phi](VecRef x, const Vec& g) { return phi.f(x) - generator_L(model, g, phi, x); },
                               1.0, 10.0, "manufactured"};
        manufactured = std::max(manufactured, std::abs(hjb_residual(model, cost, linear_cylindrical(phi), mu).residual));
    }
    int const_bad = 0;
    for (int t = 0; t < 10; ++t) {
        const auto model = testsupport::random_tanh_model(rng, 1, 1, 1);
        const auto mu = testsupport::random_measure(rng, 1, 4, 1.0);
        const double c = 0.3 * (t + 1);
        const_bad += hjb_residual(model, constant_cost(c), constant_cylindrical(c, 1), mu).residual != 0.0;
    }
    std::vector<std::pair<DiscreteMeasure, DiscreteMeasure>> pairs;
    for (int i = 0; i < 100; ++i)
        pairs.emplace_back(testsupport::random_measure(rng, 1, 5, 1.5), testsupport::random_measure(rng, 1, 5, 1.5));
    const auto lip = validate_lip1(tanh_cost(0.5, 0.0, 1.0), pairs,
                                   {Vec::Constant(1, -1.0), Vec::Constant(1, 0.0), Vec::Constant(1, 0.7)});
    o.pass = manufactured <= 1e-8 && const_bad == 0 && lip.violations == 0;
    o.detail = fmt("manufactured residual %.1e (tol 1e-8), constant case nonzero %d/10, Lip1 violations %zu/100", manufactured,
                   const_bad, static_cast<std::size_t>(lip.violations));
    return o;
}

// ---------------------------------------------------------------- 10
Outcome dpp() {
    Outcome o;
    const auto model = scalar_linear_model(-1.0, 0.6, 0.3, 1.0, 1.0, -1.0, 1.0, true);
    const auto cost = linear_state_cost(0.5, 5.0);
    const std::vector<Policy> pols{constant_policy(Vec::Constant(1, -0.5)), constant_policy(Vec::Constant(1, 0.5))};
    std::ostringstream os;
    bool ok = true;
    for (double tau : {0.25, 0.5}) {
        const auto r = dpp_check(model, cost, pols, gauss1(0.5, 0.3), tau, 3.0, 0.025, 100, 400, 11, 2);
        ok = ok && r.within();
        os << fmt("tau=%.2f gap %.4f vs 3 SE %.4f + bias %.4f (inside 3 SE alone: %s); ", tau, r.gap, 3 * r.std_error,
                  r.truncation_bias, r.within(3.0) && std::abs(r.gap) <= 3 * r.std_error ? "yes" : "no");
    }
    o.pass = ok;
    o.detail = os.str();
    return o;
}

// ---------------------------------------------------------------- 11
Outcome doubling() {
    Outcome o;
    const auto base = make_problem(tanh_functional(), tanh_functional(), 1.0, 0.05);
    const auto fam = MeasureFamily::simplex(13, -3.0, 3.0);
    MaximizeOptions opt;
    opt.restarts = 4;
    std::vector<std::pair<double, double>> asweep;
    for (double a : {5.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.05}) asweep.push_back({a, 0.05});
    const auto ar = step1_diagnostics(base, asweep, fam, 5, opt);
    std::vector<std::pair<double, double>> bsweep;
    for (double b : {0.05, 0.02, 0.01, 0.005, 0.002}) bsweep.push_back({2.0, b});
    const auto br = step1_diagnostics(base, bsweep, fam, 6, opt);
    bool conv = true;
    for (const auto& r : ar) conv = conv && r.converged;
    for (const auto& r : br) conv = conv && r.converged;
    const double a_ratio = ar.back().half_gauge / ar.front().half_gauge;
    const double b_ratio = br.back().entropy_penalty / br.front().entropy_penalty;

    std::mt19937_64 rng(1111);
    std::uniform_real_distribution<double> ua(0.1, 2.0), ub(0.01, 0.1);
    MaximizeOptions one;
    one.restarts = 1;
    const auto cost = tanh_cost(0.5, 0.0, 2.0);
    auto reports = [&](int n, std::uint64_t seed, const StepConstants* C) {
        std::vector<StepReport> out;
        for (int i = 0; i < n; ++i) {
            const auto p = make_problem(tanh_functional(), tanh_functional(0.2), ua(rng), ub(rng));
            const auto r = maximize_phi(p, fam, stream_seed(seed, i), one);
            const auto m = testsupport::random_tanh_model(rng, 1, 1, 1);
            out.push_back(C ? step_inequality_suite(p, r.mu_bar, r.mu_under, m, cost, *C)
                            : step_inequality_suite(p, r.mu_bar, r.mu_under, m, cost));
        }
        return out;
    };
    const auto cal = reports(50, 21, nullptr);
    const auto C = fit_step_constants(cal, 2.0);
    std::size_t violations = 0;
    std::string first_bad;
    for (const auto& rep : reports(50, 22, &C))
        for (const auto& name : rep.violated()) {
            ++violations;
            if (first_bad.empty()) first_bad = " first: " + name;
        }
    o.pass = conv && a_ratio < 0.1 && ar.back().w2 < 0.05 && b_ratio < 0.1 && violations == 0;
    o.detail = fmt("alpha sweep G/2alpha %.3g -> %.3g (%.1f%%), W2 %.4f; beta sweep penalty %.3g -> %.3g (%.1f%%); "
                   "converged %s; suite violations %zu on 50 pairs",
                   ar.front().half_gauge, ar.back().half_gauge, 100 * a_ratio, ar.back().w2, br.front().entropy_penalty,
                   br.back().entropy_penalty, 100 * b_ratio, conv ? "yes" : "no", violations) +
               first_bad;
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        double budget_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> all{
        {1, "gauge axioms", 120, gauge_axioms},
        {2, "gauge derivative formulas", 300, gauge_derivative_formulas},
        {3, "growth bounds", 1e9, growth_bounds},
        {4, "old gauge blow-up", 1e9, blowup},
        {5, "entropy suite", 120, entropy_suite},
        {6, "transport", 1e9, transport_suite},
        {7, "filtering", 600, filtering},
        {8, "Ito/generator consistency", 900, ito_generator},
        {9, "HJB residual", 1e9, hjb},
        {10, "DPP", 1200, dpp},
        {11, "doubling step 1 and suite", 1800, doubling},
    };
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::string time_note;
        if (secs > c.budget_s) {
            out.pass = false;
            time_note = fmt(" over budget %.0fs", c.budget_s);
        }
        failed += !out.pass;
        std::printf("%s [%2d] %s: %s (%.1fs%s)\n", out.pass ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str(), secs,
                    time_note.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
