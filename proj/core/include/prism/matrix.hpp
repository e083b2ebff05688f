#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace prism {

/// Dense row-major matrix of doubles. Just enough linear algebra for the
/// CP-ALS host-side work (Grams, Hadamard products, small solves); the
/// decomposition rank keeps everything here tiny.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    bool operator==(const Matrix&) const = default;

    /// A^T * A (cols x cols).
    Matrix gram() const;

    /// Element-wise product, in place. Shapes must match.
    Matrix& hadamard_inplace(const Matrix& other);

    /// this * other.
    Matrix multiply(const Matrix& other) const;

    double max_abs() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Moore-Penrose pseudo-inverse of a symmetric matrix via cyclic Jacobi
/// eigendecomposition. Eigenvalues above R * eps * |lambda|_max are
/// inverted, the rest zeroed. Throws ConfigError when the input is not
/// symmetric within tolerance.
Matrix pinv_symmetric(const Matrix& v);

} // namespace prism
