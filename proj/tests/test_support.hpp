#pragma once
#include <algorithm>
#include <cmath>
#include <limits>

#include "arnn/numerics.hpp"
#include "arnn/rng.hpp"

namespace arnn::test {

inline Matrix random_matrix(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    return worst;
}

inline double rel_err(double analytic, double reference) {
    return std::abs(analytic - reference) /
           std::max({std::abs(analytic), std::abs(reference), 1e-6});
}

} // namespace arnn::test
