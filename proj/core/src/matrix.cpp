#include "prism/matrix.hpp"
#include "prism/error.hpp"

#include <cmath>
#include <limits>

namespace prism {

Matrix Matrix::gram() const {
    Matrix g(cols_, cols_);
    for (std::size_t r = 0; r < rows_; ++r) {
        const double* x = row(r);
        for (std::size_t i = 0; i < cols_; ++i) {
            for (std::size_t j = i; j < cols_; ++j) g(i, j) += x[i] * x[j];
        }
    }
    for (std::size_t i = 0; i < cols_; ++i) {
        for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
    }
    return g;
}

Matrix& Matrix::hadamard_inplace(const Matrix& other) {
    if (rows_ != other.rows_ || cols_ != other.cols_) {
        throw ConfigError("hadamard: shape mismatch");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] *= other.data_[i];
    return *this;
}

Matrix Matrix::multiply(const Matrix& other) const {
    if (cols_ != other.rows_) throw ConfigError("multiply: shape mismatch");
    Matrix out(rows_, other.cols_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t k = 0; k < cols_; ++k) {
            const double a = (*this)(r, k);
            if (a == 0.0) continue;
            const double* brow = other.row(k);
            double* orow = out.row(r);
            for (std::size_t c = 0; c < other.cols_; ++c) orow[c] += a * brow[c];
        }
    }
    return out;
}

double Matrix::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

namespace {

// Cyclic Jacobi sweeps; R stays small so convergence is quick.
void jacobi_eigen(Matrix a, std::vector<double>& eigvals, Matrix& eigvecs) {
    const std::size_t n = a.rows();
    eigvecs = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) eigvecs(i, i) = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        }
        if (off <= std::numeric_limits<double>::epsilon() * std::numeric_limits<double>::epsilon()) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = eigvecs(k, p);
                    const double vkq = eigvecs(k, q);
                    eigvecs(k, p) = c * vkp - s * vkq;
                    eigvecs(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    eigvals.resize(n);
    for (std::size_t i = 0; i < n; ++i) eigvals[i] = a(i, i);
}

} // namespace

Matrix pinv_symmetric(const Matrix& v) {
    const std::size_t n = v.rows();
    if (n != v.cols()) throw ConfigError("pinv: matrix is not square");

    double asym = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) asym = std::max(asym, std::fabs(v(i, j) - v(j, i)));
    }
    const double scale = v.max_abs();
    if (asym > 1e-8 * std::max(scale, 1.0)) {
        throw ConfigError("pinv: input is not symmetric within tolerance");
    }

    std::vector<double> eigvals;
    Matrix q;
    jacobi_eigen(v, eigvals, q);

    double lambda_max = 0.0;
    for (double l : eigvals) lambda_max = std::max(lambda_max, std::fabs(l));
    const double tol = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * lambda_max;

    // pinv = Q diag(1/lambda) Q^T over the eigenvalues kept
    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        if (eigvals[k] <= tol) continue;  // zero, tiny and (noise) negative eigenvalues drop out
        const double inv = 1.0 / eigvals[k];
        for (std::size_t i = 0; i < n; ++i) {
            const double qik = q(i, k) * inv;
            if (qik == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out(i, j) += qik * q(j, k);
        }
    }
    return out;
}

} // namespace prism
