#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "wlab/entropy.hpp"

using namespace wlab;

namespace {

constexpr double kPi = std::numbers::pi;

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

// Riemann sum of rho log rho on a fine 1-d grid, independent of the mixture quadrature.
double grid_entropy_1d(const DiscreteMeasure& mu, double sigma) {
    const SmoothedDensity rho(mu, sigma);
    double lo = 1e9, hi = -1e9;
    for (const auto& p : mu.points()) {
        lo = std::min(lo, p[0]);
        hi = std::max(hi, p[0]);
    }
    lo -= 12 * sigma;
    hi += 12 * sigma;
    const int n = 200000;
    const double h = (hi - lo) / n;
    double s = 0.0;
    for (int k = 0; k < n; ++k) {
        const double z = lo + (k + 0.5) * h;
        const double l = rho.log_at(vec1(z));
        s += std::exp(l) * l * h;
    }
    return s;
}

}  // namespace

TEST(Entropy, GaussianClosedForms) {
    for (double s : {0.25, 0.5, 1.0})
        for (int d : {1, 2}) {
            const auto r = entropy_smoothed(dirac(Vec::Zero(d)), s);
            EXPECT_NEAR(r.entropy, -0.5 * d * std::log(2 * kPi * std::exp(1.0) * s * s), 1e-10);
            EXPECT_NEAR(r.fisher, d / (s * s), 1e-8);
        }
    EXPECT_NEAR(entropy_smoothed(dirac(vec1(0)), 1.0).entropy, -1.41894, 1e-5);
    const auto eq = entropy_smoothed(dirac(vec1(0)), 1.0 / std::sqrt(kPi));
    EXPECT_NEAR(eq.entropy, -0.5 * std::log(2 * std::exp(1.0)), 1e-12);
    EXPECT_NEAR(eq.entropy, -0.84657, 1e-5);
    EXPECT_NEAR(eq.entropy_tilde, 0.5 * (1 - std::log(2.0)), 1e-12);
    EXPECT_NEAR(eq.entropy_tilde, entropy_lower_bound(dirac(vec1(0)), 1.0 / std::sqrt(kPi)), 1e-12);
    EXPECT_NEAR(entropy_smoothed(dirac(vec1(0)), 0.5).fisher, 4.0, 1e-10);
}

TEST(Entropy, TranslationAndScaling) {
    const double s = 1.0 / std::sqrt(kPi);
    const auto a = entropy_smoothed(dirac(vec1(0)), s), b = entropy_smoothed(dirac(vec1(1.7)), s);
    EXPECT_NEAR(a.entropy, b.entropy, 1e-12);
    EXPECT_NEAR(b.entropy_tilde - a.entropy_tilde, kPi * 1.7 * 1.7, 1e-10);
    EXPECT_NEAR(fisher_smoothed(dirac(vec1(0)), 0.6) / fisher_smoothed(dirac(vec1(0)), 1.2), 4.0, 1e-10);
}

TEST(Entropy, SeparatedPointMassesFisher) {
    const auto mu = make_measure({{-10.0}, {10.0}}, {0.5, 0.5});
    EXPECT_NEAR(fisher_smoothed(mu, 0.5), 4.0, 1e-6);
    // entropy of two disjoint bumps: Gaussian entropy minus log 2
    EXPECT_NEAR(entropy_smoothed(mu, 0.5).entropy, -0.5 * std::log(2 * kPi * std::exp(1.0) * 0.25) - std::log(2.0),
                1e-9);
}

TEST(Entropy, MatchesGridQuadrature) {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 5; ++k) {
        const auto mu = random_measure(rng, 1, 6, 1.0);
        const double s = 0.3 + 0.2 * k;
        EXPECT_NEAR(entropy_smoothed(mu, s).entropy, grid_entropy_1d(mu, s), 1e-7);
    }
}

TEST(Entropy, BoundAndNonnegativity) {
    std::mt19937_64 rng(2);
    for (int k = 0; k < 40; ++k) {
        const int d = 1 + k % 2;
        const auto mu = random_measure(rng, d, 5, 1.0);
        const double s = 0.2 + 0.05 * (k % 10);
        const auto r = entropy_smoothed(mu, s);
        EXPECT_GE(r.entropy_tilde, entropy_lower_bound(mu, s) - 1e-10);
        EXPECT_GE(r.entropy_tilde, -1e-12);
        EXPECT_TRUE(std::isfinite(r.entropy));
        EXPECT_TRUE(std::isfinite(r.fisher));
        EXPECT_NEAR(r.fisher, fisher_by_parts(mu, s), 1e-6 * std::max(1.0, r.fisher));
    }
    // E~ vanishes at N(0, 1/(2 pi))
    EXPECT_NEAR(entropy_smoothed(dirac(vec1(0)), 1.0 / std::sqrt(2 * kPi)).entropy_tilde, 0.0, 1e-12);
}

TEST(Entropy, NormalizationAndMoment) {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 10; ++k) {
        const int d = 1 + k % 2;
        const auto mu = random_measure(rng, d, 5, 1.0);
        const double s = 0.1 + 0.2 * k;
        const auto rule = tensor_gauss_hermite(64, d);
        // int rho = 1 through each component's rule
        EXPECT_NEAR(integrate_smoothed(mu, s, rule, [](const Vec&) { return 1.0; }), 1.0, 1e-12);
        const double m2 = integrate_smoothed(mu, s, rule, [](const Vec& z) { return z.squaredNorm(); });
        EXPECT_NEAR(m2, gaussian_convolve_moment2(mu, s), 1e-4 * m2);
    }
}

TEST(Entropy, IntegratedIdentities) {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 10; ++k) {
        const int d = 1 + k % 2;
        const auto mu = random_measure(rng, d, 5, 1.0);
        const double s = 0.3 + 0.05 * k;
        const auto db = entropy_derivatives(mu, s, mu.points(), mu.points());
        double first = 0.0, second = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            first += mu.weight(i) * db.first_var[i];
            for (std::size_t j = 0; j < mu.size(); ++j) second += mu.weight(i) * mu.weight(j) * db.second_var[db.pair(i, j)];
        }
        EXPECT_NEAR(first, 1.0 + entropy_smoothed(mu, s).entropy, 1e-6);
        EXPECT_NEAR(second, 2.0, 1e-6);
    }
}

TEST(Entropy, DirectionalDerivative) {
    std::mt19937_64 rng(5);
    for (int k = 0; k < 6; ++k) {
        const int d = 1 + k % 2;
        const auto mu = random_measure(rng, d, 4, 0.5);
        // nu stays inside the bulk of mu * N_sigma, else E(t) picks up t log t curvature below the step
        std::normal_distribution<double> jit(0.0, 0.2);
        std::uniform_real_distribution<double> uw(0.5, 1.5);
        std::vector<Vec> np;
        std::vector<double> nw;
        for (std::size_t i = 0; i < mu.size(); ++i) {
            Vec x = mu.point(i);
            for (int k = 0; k < d; ++k) x[k] += jit(rng);
            np.push_back(x);
            nw.push_back(mu.weight(i) * uw(rng));
        }
        double tot = 0.0;
        for (double v : nw) tot += v;
        for (double& v : nw) v /= tot;
        const DiscreteMeasure nu(np, nw);
        const double s = 0.5;
        auto E = [&](double t) { return entropy_smoothed(mixture(mu, nu, t), s).entropy; };
        auto fwd = [&](double h) { return (-3 * E(0) + 4 * E(h) - E(2 * h)) / (2 * h); };
        const double slope = (4 * fwd(5e-3) - fwd(1e-2)) / 3;
        const auto db = entropy_derivatives(mu, s, mu.points(), {});
        const auto dn = entropy_derivatives(mu, s, nu.points(), {});
        double analytic = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i) analytic -= mu.weight(i) * db.first_var[i];
        for (std::size_t i = 0; i < nu.size(); ++i) analytic += nu.weight(i) * dn.first_var[i];
        EXPECT_NEAR(slope, analytic, 1e-4 * std::max(1e-3, std::abs(analytic)));
    }
}

TEST(Entropy, LionsConsistencyAndSymmetry) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> nd(0, 1);
    for (int d : {1, 2}) {
        const auto mu = random_measure(rng, d, 4, 1.0);
        const double s = 0.6;
        std::vector<Vec> xs;
        for (int t = 0; t < 4; ++t) {
            Vec x(d);
            for (int k = 0; k < d; ++k) x[k] = nd(rng);
            xs.push_back(x);
        }
        const auto db = entropy_derivatives(mu, s, xs, xs);
        const double h = 1e-5;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            for (int k = 0; k < d; ++k) {
                Vec e = Vec::Zero(d);
                e[k] = h;
                const auto dp = entropy_derivatives(mu, s, {xs[i] + e, xs[i] - e}, {xs[0]});
                const double fd = (dp.first_var[0] - dp.first_var[1]) / (2 * h);
                EXPECT_NEAR(db.lions[i][k], fd, 1e-5 * std::max(1.0, std::abs(fd)));
                for (int m = 0; m < d; ++m) {
                    const double fg = (dp.lions[0][m] - dp.lions[1][m]) / (2 * h);
                    EXPECT_NEAR(db.lions_grad[i](m, k), fg, 1e-5 * std::max(1.0, std::abs(fg)));
                }
                const double fs = (dp.second_var[0] - dp.second_var[1]) / (2 * h);
                // x-derivative of the second variation at (x_i, x_0)
                EXPECT_NEAR(db.second_var_grad[db.pair(i, 0)][k], fs, 1e-4 * std::max(1.0, std::abs(fs)));
            }
            for (std::size_t j = 0; j < xs.size(); ++j) {
                EXPECT_EQ(db.second_var[db.pair(i, j)], db.second_var[db.pair(j, i)]);
                EXPECT_TRUE(db.lions2[db.pair(i, j)].isApprox(db.lions2[db.pair(j, i)].transpose(), 1e-14));
            }
        }
    }
}

TEST(Entropy, TildeCorrections) {
    const auto mu = make_measure({{0.0, 0.0}}, {1.0});
    Vec x(2);
    x << 1.0, 0.0;
    const auto base = entropy_derivatives(mu, 1.0, {x}, {x});
    const auto tilde = entropy_tilde_derivatives(mu, 1.0, {x}, {x});
    EXPECT_NEAR(tilde.lions[0][0] - base.lions[0][0], 2 * kPi, 1e-12);
    EXPECT_NEAR(tilde.lions[0][1] - base.lions[0][1], 0.0, 1e-12);
    EXPECT_NEAR(tilde.first_var[0] - base.first_var[0], kPi * (1.0 + 2.0), 1e-12);
    EXPECT_TRUE((tilde.lions_grad[0] - base.lions_grad[0]).isApprox(2 * kPi * Mat::Identity(2, 2)));
    EXPECT_EQ(tilde.second_var, base.second_var);
    const auto one = entropy_tilde_derivatives(dirac(vec1(0)), 1.0, {vec1(0)});
    const auto raw = entropy_derivatives(dirac(vec1(0)), 1.0, {vec1(0)}, {});
    EXPECT_NEAR(one.first_var[0] - raw.first_var[0], kPi, 1e-12);
}

TEST(Entropy, ConvexityAlongMixtures) {
    std::mt19937_64 rng(7);
    for (int k = 0; k < 10; ++k) {
        const auto mu = random_measure(rng, 1, 4, 1.5), nu = random_measure(rng, 1, 4, 1.5);
        const double s = 0.4;
        const double e0 = entropy_smoothed(mu, s).entropy, e1 = entropy_smoothed(nu, s).entropy;
        for (double t : {0.25, 0.5, 0.75})
            EXPECT_LE(entropy_smoothed(mixture(mu, nu, t), s).entropy, (1 - t) * e0 + t * e1 + 1e-8);
    }
}

TEST(Entropy, RawAndErrors) {
    const auto r = entropy_raw(dirac(vec1(0)));
    EXPECT_TRUE(r.infinite);
    EXPECT_TRUE(std::isinf(r.entropy));
    EXPECT_THROW(entropy_smoothed(dirac(vec1(0)), 0.0), InvalidInput);
    EntropyOptions strict;
    strict.nodes = 2;
    strict.refine_nodes = 3;
    strict.tol = 1e-12;
    const auto wide = make_measure({{-3.0}, {3.0}}, {0.5, 0.5});
    EXPECT_THROW(entropy_smoothed(wide, 1.0, strict), AccuracyError);
}

TEST(Entropy, ThreeDimensionalMonteCarlo) {
    const auto r = entropy_smoothed(dirac(Vec::Zero(3)), 0.5);
    EXPECT_NEAR(r.entropy, -1.5 * std::log(2 * kPi * std::exp(1.0) * 0.25), 0.05);
}
