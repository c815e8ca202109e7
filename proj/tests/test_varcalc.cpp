#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "wlab/entropy.hpp"
#include "wlab/gauge.hpp"
#include "wlab/varcalc.hpp"

using namespace wlab;

namespace {

DiscreteMeasure random_measure(std::mt19937_64& rng, int dim, int n, double spread) {
    std::normal_distribution<double> nd(0.0, spread);
    std::uniform_real_distribution<double> uw(0.2, 1.0);
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

// Points of mu moved by small noise with reweighting, so nu << mu * N_sigma in the bulk.
DiscreteMeasure jitter(std::mt19937_64& rng, const DiscreteMeasure& mu, double amount) {
    std::normal_distribution<double> nd(0.0, amount);
    std::uniform_real_distribution<double> uw(0.5, 1.5);
    std::vector<Vec> pts;
    std::vector<double> w;
    double tot = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        Vec x = mu.point(i);
        for (int k = 0; k < mu.dim(); ++k) x[k] += nd(rng);
        pts.push_back(x);
        w.push_back(mu.weight(i) * uw(rng));
        tot += w.back();
    }
    for (double& v : w) v /= tot;
    return DiscreteMeasure(pts, w);
}

double phi(const Vec& x) { return std::sin(x[0]) + 0.3 * x.squaredNorm(); }
Vec dphi(const Vec& x) {
    Vec g = 0.6 * x;
    g[0] += std::cos(x[0]);
    return g;
}

MeasureFunctional linear() { return {[](const DiscreteMeasure& m) { return m.integrate(phi); }, "linear"}; }
MeasureFunctional square() {
    return {[](const DiscreteMeasure& m) {
                const double v = m.integrate(phi);
                return v * v;
            },
            "square"};
}
MeasureFunctional expo() {
    return {[](const DiscreteMeasure& m) { return std::exp(m.integrate(phi)); }, "exp"};
}

}  // namespace

TEST(Varcalc, LinearSlopeExact) {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 10; ++k) {
        const auto mu = random_measure(rng, 1 + k % 2, 5, 1.0), nu = random_measure(rng, 1 + k % 2, 4, 1.0);
        const auto e = var_derivative_fd(linear(), mu, nu);
        const double exact = nu.integrate(phi) - mu.integrate(phi);
        for (double s : e.slopes) EXPECT_NEAR(s, exact, 1e-12);
        EXPECT_NEAR(e.richardson, exact, 1e-12);
    }
}

TEST(Varcalc, SquareSlope) {
    std::mt19937_64 rng(2);
    for (int k = 0; k < 10; ++k) {
        const auto mu = random_measure(rng, 2, 5, 1.0), nu = random_measure(rng, 2, 4, 1.0);
        const double m = mu.integrate(phi), n = nu.integrate(phi);
        const auto e = var_derivative_fd(square(), mu, nu);
        EXPECT_NEAR(e.richardson, 2 * m * (n - m), 1e-10);
        EXPECT_NEAR(e.slope, 2 * m * (n - m), 1e-10);
    }
}

TEST(Varcalc, SecondOrderConvergence) {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 10; ++k) {
        const auto mu = random_measure(rng, 1, 5, 1.0), nu = random_measure(rng, 1, 4, 1.0);
        const double m = mu.integrate(phi), n = nu.integrate(phi);
        const double exact = std::exp(m) * (n - m);
        const auto e = var_derivative_fd(expo(), mu, nu);
        for (std::size_t i = 0; i + 1 < e.slopes.size(); ++i)
            EXPECT_GE(std::abs(e.slopes[i] - exact), 3.0 * std::abs(e.slopes[i + 1] - exact));
        EXPECT_LT(std::abs(e.richardson - exact), std::abs(e.slope - exact));
        for (double p : observed_orders(e, exact)) EXPECT_NEAR(p, 2.0, 0.3);
    }
}

TEST(Varcalc, GaugeFirstVariation) {
    std::mt19937_64 rng(4);
    GaugeConfig cfg;
    for (int k = 0; k < 4; ++k) {
        // G(., lam) is smooth along the segment toward lam; |mu(psi) - nu(psi)| kinks elsewhere
        const auto lam = random_measure(rng, 1, 3, 1.0);
        const auto mu = random_measure(rng, 1, 4, 1.0), nu = lam;
        const MeasureFunctional g{[&](const DiscreteMeasure& m) { return gauge_value(m, lam, cfg).G; }, "gauge"};
        const auto e = var_derivative_fd(g, mu, nu);
        const auto dm = gauge_derivatives(mu, lam, cfg, mu.points(), {});
        const auto dn = gauge_derivatives(mu, lam, cfg, nu.points(), {});
        double analytic = 0.0;
        for (std::size_t i = 0; i < nu.size(); ++i) analytic += nu.weight(i) * dn.first_var[i];
        for (std::size_t i = 0; i < mu.size(); ++i) analytic -= mu.weight(i) * dm.first_var[i];
        EXPECT_NEAR(e.richardson, analytic, 1e-4 * std::max(1e-6, std::abs(analytic)));
    }
}

TEST(Varcalc, LionsExamples) {
    std::mt19937_64 rng(5);
    for (int k = 0; k < 6; ++k) {
        const int d = 1 + k % 2;
        const auto mu = random_measure(rng, d, 5, 1.0);
        Vec e = Vec::Ones(d) / std::sqrt(static_cast<double>(d));
        const auto lin = lions_derivative_fd(linear(), mu, [&](const Vec&) { return e; });
        EXPECT_NEAR(lin.richardson, mu.integrate([&](const Vec& x) { return dphi(x).dot(e); }), 1e-9);
        const MeasureFunctional m2{[](const DiscreteMeasure& m) { return moment(m, 2); }, "m2"};
        const auto sec = lions_derivative_fd(m2, mu, [](const Vec& x) { return x; });
        EXPECT_NEAR(sec.richardson, 2 * moment(mu, 2), 1e-10);
        const MeasureFunctional ent{[](const DiscreteMeasure& m) { return entropy_smoothed(m, 0.5).entropy; }, "entropy"};
        EXPECT_NEAR(lions_derivative_fd(ent, mu, [&](const Vec&) { return e; }).richardson, 0.0, 1e-8);
    }
}

TEST(Varcalc, LionsMatchesEntropyFormula) {
    std::mt19937_64 rng(6);
    const auto mu = random_measure(rng, 1, 4, 0.8);
    const double s = 0.5;
    auto v = [](const Vec& x) { return Vec::Constant(1, std::tanh(x[0]) + 0.5); };
    const MeasureFunctional ent{[&](const DiscreteMeasure& m) { return entropy_smoothed(m, s).entropy; }, "entropy"};
    const auto fd = lions_derivative_fd(ent, mu, v);
    const auto db = entropy_derivatives(mu, s, mu.points(), {});
    double analytic = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) analytic += mu.weight(i) * db.lions[i].dot(v(mu.point(i)));
    EXPECT_NEAR(fd.richardson, analytic, 1e-6 * std::max(1.0, std::abs(analytic)));
}

TEST(Varcalc, SecondVariationExamples) {
    std::mt19937_64 rng(7);
    for (int k = 0; k < 6; ++k) {
        const auto mu = random_measure(rng, 1, 4, 1.0), n1 = random_measure(rng, 1, 3, 1.0),
                   n2 = random_measure(rng, 1, 3, 1.0);
        EXPECT_NEAR(second_var_fd(linear(), mu, n1, n2).richardson, 0.0, 1e-9);
        const double m = mu.integrate(phi);
        const double exact = 2 * (n1.integrate(phi) - m) * (n2.integrate(phi) - m);
        EXPECT_NEAR(second_var_fd(square(), mu, n1, n2).richardson, exact, 1e-8);
        const double a = second_var_fd(expo(), mu, n1, n2).richardson, b = second_var_fd(expo(), mu, n2, n1).richardson;
        EXPECT_NEAR(a, b, 1e-8 * std::max(1.0, std::abs(a)));
        const double ee = std::exp(m) * (n1.integrate(phi) - m) * (n2.integrate(phi) - m);
        EXPECT_NEAR(a, ee, 1e-5 * std::max(1.0, std::abs(ee)));
    }
}

TEST(Varcalc, EntropySecondVariation) {
    std::mt19937_64 rng(8);
    for (int k = 0; k < 4; ++k) {
        const int d = 1 + k % 2;
        const double s = 0.5;
        const auto mu = random_measure(rng, d, 3, 0.5);
        const auto n1 = jitter(rng, mu, 0.25), n2 = jitter(rng, mu, 0.25);
        const MeasureFunctional ent{[&](const DiscreteMeasure& m) { return entropy_smoothed(m, s).entropy; }, "entropy"};
        const double fd = second_var_fd(ent, mu, n1, n2).richardson;
        // signed measures nu_a - mu as (point, weight) lists
        auto signed_list = [&](const DiscreteMeasure& nu) {
            std::vector<Vec> p(nu.points());
            std::vector<double> w(nu.weights());
            for (std::size_t i = 0; i < mu.size(); ++i) {
                p.push_back(mu.point(i));
                w.push_back(-mu.weight(i));
            }
            return std::make_pair(p, w);
        };
        const auto [p1, w1] = signed_list(n1);
        const auto [p2, w2] = signed_list(n2);
        const auto db = entropy_derivatives(mu, s, p1, p2);
        double analytic = 0.0;
        for (std::size_t i = 0; i < p1.size(); ++i)
            for (std::size_t j = 0; j < p2.size(); ++j) analytic += w1[i] * w2[j] * db.second_var[db.pair(i, j)];
        EXPECT_NEAR(fd, analytic, 5e-4 * std::abs(analytic)) << "d=" << d;
        const double sym = second_var_fd(ent, mu, n2, n1).richardson;
        EXPECT_NEAR(fd, sym, 1e-6 * std::max(1e-3, std::abs(fd)));
    }
}

TEST(Varcalc, Errors) {
    const auto mu = dirac(vec1(0)), nu = dirac(vec1(1));
    const MeasureFunctional bad{[](const DiscreteMeasure&) { return std::nan(""); }, "bad"};
    EXPECT_THROW(var_derivative_fd(bad, mu, nu), EvalError);
    EXPECT_THROW(var_derivative_fd(linear(), mu, dirac(Vec::Zero(2))), InvalidInput);
    EXPECT_THROW(var_derivative_fd(linear(), mu, nu, {-1e-3}), InvalidInput);
}
