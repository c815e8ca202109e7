#pragma once

#include <cstddef>
#include <vector>

#include "wlab/errors.hpp"
#include "wlab/quadrature.hpp"

namespace wlab {

/// Variational and Lions derivatives of a measure functional, sampled at
/// x_list (first-order fields) and at all pairs (x_i, y_j) (second-order
/// fields, row-major with j fastest). Empty vectors mean "not supplied".
struct DerivativeBundle {
    std::vector<Vec> x;
    std::vector<Vec> y;
    std::vector<double> first_var;      // dF/dmu (x_i)
    std::vector<double> second_var;     // d2F/dmu2 (x_i, y_j)
    std::vector<Vec> lions;             // d_mu F (x_i)
    std::vector<Mat> lions_grad;        // d_x d_mu F (x_i)
    std::vector<Mat> lions2;            // d2_mumu F (x_i, y_j)
    std::vector<Vec> second_var_grad;   // d_x of d2F/dmu2 (x_i, y_j)

    std::size_t pair(std::size_t i, std::size_t j) const { return i * y.size() + j; }

    bool complete() const {
        const std::size_t nx = x.size(), np = x.size() * y.size();
        return first_var.size() == nx && lions.size() == nx && lions_grad.size() == nx &&
               second_var.size() == np && lions2.size() == np && second_var_grad.size() == np;
    }

    void require_complete() const {
        if (first_var.size() != x.size()) throw InvalidInput("derivative bundle is missing first_var");
        if (lions.size() != x.size()) throw InvalidInput("derivative bundle is missing lions");
        if (lions_grad.size() != x.size()) throw InvalidInput("derivative bundle is missing lions_grad");
        const std::size_t np = x.size() * y.size();
        if (second_var.size() != np) throw InvalidInput("derivative bundle is missing second_var");
        if (lions2.size() != np) throw InvalidInput("derivative bundle is missing lions2");
        if (second_var_grad.size() != np) throw InvalidInput("derivative bundle is missing second_var_grad");
    }
};

}  // namespace wlab
