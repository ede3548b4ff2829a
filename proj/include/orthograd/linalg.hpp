#pragma once

// Dense kernels used by the projection step: Gram-Schmidt orthonormalization,
// orthogonal-complement projection, and a normal-equations least-squares
// residual kept as an independent reference for tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "orthograd/error.hpp"

namespace orthograd {

using Vector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
    detail::require(a.size() == b.size(), "dot: dimension mismatch (" + std::to_string(a.size()) +
                                              " vs " + std::to_string(b.size()) + ")");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    detail::require(x.size() == y.size(), "axpy: dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline bool all_finite(std::span<const double> a) {
    return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

// Cosine of the angle between a and b; 0 when either vector is exactly zero.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

// Column-major d x k matrix. Columns are contiguous so each one can be viewed
// as a parameter-space vector.
class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    static DenseMatrix from_columns(const std::vector<Vector>& columns) {
        detail::require(!columns.empty(), "DenseMatrix: need at least one column");
        DenseMatrix m(columns.front().size(), columns.size());
        for (std::size_t j = 0; j < columns.size(); ++j) {
            detail::require(columns[j].size() == m.rows_, "DenseMatrix: ragged columns");
            std::copy(columns[j].begin(), columns[j].end(), m.col(j).begin());
        }
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    std::span<double> col(std::size_t j) { return {data_.data() + j * rows_, rows_}; }
    std::span<const double> col(std::size_t j) const { return {data_.data() + j * rows_, rows_}; }

    double& operator()(std::size_t i, std::size_t j) { return data_[j * rows_ + i]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[j * rows_ + i]; }

    std::span<const double> data() const noexcept { return data_; }

    // Arithmetic mean of the columns.
    Vector column_mean() const {
        Vector m(rows_, 0.0);
        for (std::size_t j = 0; j < cols_; ++j) axpy(1.0, col(j), m);
        const double inv = 1.0 / static_cast<double>(cols_);
        for (double& x : m) x *= inv;
        return m;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct OrthonormalBasis {
    std::size_t dim = 0;
    std::vector<Vector> columns;
    double drop_tolerance = 0.0;
    // Indices (into the source matrix) of the columns that were accepted.
    std::vector<std::size_t> accepted;

    std::size_t rank() const noexcept { return columns.size(); }
};

inline double default_rank_tolerance(std::size_t dim) {
    return 1e-10 * std::sqrt(static_cast<double>(dim));
}

// Modified Gram-Schmidt with one reorthogonalization pass, processing columns
// left to right. A column is dropped when its residual after orthogonalization
// is at most tol * max(1, |original column|).
inline OrthonormalBasis qr_orthonormal_basis(const DenseMatrix& g, double tol) {
    detail::require(tol > 0.0, "qr_orthonormal_basis: tolerance must be positive");
    detail::require(g.cols() >= 1, "qr_orthonormal_basis: empty matrix");
    detail::require(all_finite(g.data()), "qr_orthonormal_basis: non-finite input");

    OrthonormalBasis basis;
    basis.dim = g.rows();
    basis.drop_tolerance = tol;
    Vector v(g.rows());
    for (std::size_t j = 0; j < g.cols(); ++j) {
        const auto src = g.col(j);
        std::copy(src.begin(), src.end(), v.begin());
        const double original = norm(v);
        for (int pass = 0; pass < 2; ++pass) {
            for (const Vector& q : basis.columns) axpy(-dot(v, q), q, v);
        }
        const double residual = norm(v);
        if (residual <= tol * std::max(1.0, original)) continue;
        for (double& x : v) x /= residual;
        basis.columns.push_back(v);
        basis.accepted.push_back(j);
    }
    return basis;
}

inline OrthonormalBasis qr_orthonormal_basis(const DenseMatrix& g) {
    return qr_orthonormal_basis(g, default_rank_tolerance(g.rows()));
}

// v - sum_i <v, q_i> q_i, evaluated sequentially against the running residual.
inline Vector project_onto_complement(std::span<const double> v, const OrthonormalBasis& q) {
    detail::require(q.rank() == 0 || v.size() == q.dim,
                    "project_onto_complement: dimension mismatch (" + std::to_string(v.size()) + " vs " +
                        std::to_string(q.dim) + ")");
    Vector out(v.begin(), v.end());
    for (const Vector& col : q.columns) axpy(-dot(out, col), col, out);
    return out;
}

// Residual v - G c of the regularized normal equations (G^T G + 1e-12 I) c = G^T v,
// solved by Cholesky. Reference path for tests, independent of the QR route.
inline Vector least_squares_residual(std::span<const double> v, const DenseMatrix& g) {
    detail::require(v.size() == g.rows(), "least_squares_residual: dimension mismatch");
    const std::size_t k = g.cols();
    std::vector<double> a(k * k);
    Vector rhs(k);
    for (std::size_t i = 0; i < k; ++i) {
        rhs[i] = dot(g.col(i), v);
        for (std::size_t j = 0; j <= i; ++j) {
            const double s = dot(g.col(i), g.col(j));
            a[i * k + j] = s;
            a[j * k + i] = s;
        }
        a[i * k + i] += 1e-12;
    }
    // In-place lower Cholesky factor.
    for (std::size_t j = 0; j < k; ++j) {
        double diag = a[j * k + j];
        for (std::size_t p = 0; p < j; ++p) diag -= a[j * k + p] * a[j * k + p];
        detail::require(diag > 0.0, "least_squares_residual: normal matrix not positive definite");
        const double l = std::sqrt(diag);
        a[j * k + j] = l;
        for (std::size_t i = j + 1; i < k; ++i) {
            double s = a[i * k + j];
            for (std::size_t p = 0; p < j; ++p) s -= a[i * k + p] * a[j * k + p];
            a[i * k + j] = s / l;
        }
    }
    Vector c(rhs);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t p = 0; p < i; ++p) c[i] -= a[i * k + p] * c[p];
        c[i] /= a[i * k + i];
    }
    for (std::size_t i = k; i-- > 0;) {
        for (std::size_t p = i + 1; p < k; ++p) c[i] -= a[p * k + i] * c[p];
        c[i] /= a[i * k + i];
    }
    Vector out(v.begin(), v.end());
    for (std::size_t j = 0; j < k; ++j) axpy(-c[j], g.col(j), out);
    return out;
}

}  // namespace orthograd
