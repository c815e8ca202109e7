#pragma once

#include <random>
#include <vector>

#include "wlab/cylindrical.hpp"
#include "wlab/measure.hpp"
#include "wlab/model.hpp"

namespace testsupport {

using namespace wlab;

inline DiscreteMeasure random_measure(std::mt19937_64& rng, int dim, int n, double spread) {
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

inline FilterModel random_tanh_model(std::mt19937_64& rng, int d, int q, int m) {
    std::normal_distribution<double> nd(0.0, 0.5);
    auto vec = [&](int n) {
        Vec v(n);
        for (int k = 0; k < n; ++k) v[k] = nd(rng);
        return v;
    };
    auto mat = [&](int r, int c) {
        Mat a(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) a(i, j) = nd(rng);
        return a;
    };
    TanhParts p;
    p.b0 = vec(d);
    p.bu = mat(d, m);
    p.s10 = mat(d, d);
    p.s20 = mat(d, q);
    p.h0 = vec(q);
    for (int k = 0; k < d; ++k) {
        p.b1.push_back(vec(d));
        p.s11.push_back(mat(d, d));
        p.s21.push_back(mat(d, q));
        p.h1.push_back(vec(q));
    }
    return tanh_model(p, Vec::Constant(m, -1.0), Vec::Constant(m, 1.0));
}

inline InnerFn random_inner(std::mt19937_64& rng, int d) {
    std::uniform_int_distribution<int> kind(0, 2), axis(0, d - 1);
    std::uniform_real_distribution<double> u(0.3, 1.5);
    switch (kind(rng)) {
        case 0:
            return sin_inner(axis(rng), u(rng), u(rng));
        case 1:
            return tanh_inner(axis(rng), u(rng));
        default: {
            Vec c(d);
            for (int k = 0; k < d; ++k) c[k] = u(rng) - 0.9;
            return bump_inner(c, u(rng));
        }
    }
}

inline CylindricalFn random_cylindrical(std::mt19937_64& rng, int d) {
    std::uniform_int_distribution<int> kind(0, 1);
    if (kind(rng) == 0) return expcos_cylindrical(random_inner(rng, d), random_inner(rng, d));
    std::normal_distribution<double> nd;
    Vec c(3);
    Mat Q(3, 3);
    for (int i = 0; i < 3; ++i) {
        c[i] = nd(rng);
        for (int j = 0; j < 3; ++j) Q(i, j) = nd(rng);
    }
    return quadratic_cylindrical({random_inner(rng, d), random_inner(rng, d), random_inner(rng, d)}, c, Q, nd(rng));
}

}  // namespace testsupport
