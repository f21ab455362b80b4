#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dope/errors.hpp"

namespace dope {

/// Adaptive Simpson with absolute tolerance; throws QuadratureNonConvergence
/// when the recursion depth limit is hit before reaching it.
double adaptive_simpson(const std::function<double(double)>& f, double a,
                        double b, double tol = 1e-8, int max_depth = 48);

/// Same rule applied to a vector-valued integrand (component-wise error).
std::vector<double> adaptive_simpson_vec(
    const std::function<std::vector<double>(double)>& f, double a, double b,
    std::size_t dim, double tol = 1e-8, int max_depth = 48);

/// Piecewise integration with interior breakpoints (kinks of the integrand).
double adaptive_simpson_pieces(const std::function<double(double)>& f,
                               std::vector<double> breakpoints, double tol = 1e-8,
                               int max_depth = 48);

}  // namespace dope
