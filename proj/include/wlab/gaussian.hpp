#pragma once

// Scalar Gaussian helpers shared by the smoothing, gauge and entropy code.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

namespace wlab::gauss {

inline constexpr double kInvSqrt2Pi = 0.3989422804014326779399460599343818684758586311649;
inline constexpr double kLogSqrt2Pi = 0.9189385332046727417803297364056176398613974736378;

/// Standard normal density.
inline double pdf(double u) { return kInvSqrt2Pi * std::exp(-0.5 * u * u); }

/// Standard normal upper tail Q(u) = P(Z > u), accurate deep in both tails.
inline double upper_tail(double u) { return 0.5 * std::erfc(u / std::numbers::sqrt2); }

inline double cdf(double u) { return upper_tail(-u); }

/// P(lo < Z <= hi) without cancellation when both ends sit in the same tail.
inline double interval_mass(double lo, double hi) {
    if (hi <= lo) return 0.0;
    if (lo >= 0.0) return upper_tail(lo) - upper_tail(hi);
    if (hi <= 0.0) return upper_tail(-hi) - upper_tail(-lo);
    return 1.0 - upper_tail(hi) - upper_tail(-lo);
}

/// log of the isotropic N(0, sigma^2 I_d) density at a point with squared norm r2.
inline double log_density(double r2, double sigma, int dim) {
    return -0.5 * r2 / (sigma * sigma) - dim * (std::log(sigma) + kLogSqrt2Pi);
}

/// log(sum_i exp(v_i)); returns -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// E[Z^2 1{Z > r}] for Z ~ N(m, s^2).
inline double upper_second_moment(double m, double s, double r) {
    const double u = (r - m) / s;
    return (m * m + s * s) * upper_tail(u) + s * (m + r) * pdf(u);
}

}  // namespace wlab::gauss
