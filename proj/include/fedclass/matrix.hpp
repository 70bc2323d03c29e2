#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fedclass/errors.hpp"

namespace fedclass {

// Dense row-major matrix of doubles. Just enough for a small MLP.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    const double* row(std::size_t r) const { return data.data() + r * cols; }
    double* row(std::size_t r) { return data.data() + r * cols; }

    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// y = A x + b, where A is [out x in], x has length in.
inline std::vector<double> affine(const Matrix& a, const std::vector<double>& b,
                                  const double* x) {
    std::vector<double> y(a.rows);
    for (std::size_t r = 0; r < a.rows; ++r) {
        double acc = b[r];
        const double* w = a.row(r);
        for (std::size_t c = 0; c < a.cols; ++c) acc += w[c] * x[c];
        y[r] = acc;
    }
    return y;
}

}  // namespace fedclass
