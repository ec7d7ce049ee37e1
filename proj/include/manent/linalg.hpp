#pragma once

// Small dense kernels, generic over the scalar so the same Householder /
// LU code runs on doubles, dual numbers and tape variables. Matrices here
// are Jacobian-sized (tens of rows), nothing is blocked or pivot-tuned
// beyond what stability needs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "manent/autodiff.hpp"
#include "manent/errors.hpp"

namespace manent {

/// Dense row-major matrix over scalar T.
template <class T>
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, T(0.0)) {}

    T& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1.0);
        return m;
    }

    Mat transposed() const {
        Mat m(cols, rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) m(j, i) = (*this)(i, j);
        return m;
    }

    std::vector<T> column(std::size_t j) const {
        std::vector<T> c(rows);
        for (std::size_t i = 0; i < rows; ++i) c[i] = (*this)(i, j);
        return c;
    }

    /// Submatrix keeping the listed columns, in the listed order.
    Mat columns(std::span<const std::size_t> which) const {
        Mat m(rows, which.size());
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < which.size(); ++j) m(i, j) = (*this)(i, which[j]);
        return m;
    }
};

using Matrix = Mat<double>;

template <class T>
Mat<T> matmul(const Mat<T>& x, const Mat<T>& y) {
    if (x.cols != y.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Mat<T> r(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) {
            T xv = x(i, k);
            for (std::size_t j = 0; j < y.cols; ++j) r(i, j) += xv * y(k, j);
        }
    return r;
}

template <class T>
std::vector<T> matvec(const Mat<T>& m, std::span<const T> v) {
    if (m.cols != v.size()) throw std::invalid_argument("matvec: dimension mismatch");
    std::vector<T> r(m.rows, T(0.0));
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) r[i] += m(i, j) * v[j];
    return r;
}

/// Relative cutoff below which an orthogonal-factor diagonal counts as zero.
inline constexpr double kRankTolerance = 1e-12;

/// log det(M^T M)^(1/2) for rows >= cols, via Householder orthogonalization of
/// M itself (M^T M is never formed). A single column reduces exactly to the log
/// of its Euclidean norm. Throws degenerate_jacobian_error when any triangular
/// diagonal falls below kRankTolerance times the largest column norm.
template <class T>
T gram_log_volume(Mat<T> m) {
    const std::size_t rows = m.rows, cols = m.cols;
    if (cols == 0) throw std::invalid_argument("gram_log_volume: empty matrix");
    if (rows < cols)
        throw std::invalid_argument("gram_log_volume: needs rows >= cols");

    double max_col_norm = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            double v = value_of(m(i, j));
            s += v * v;
        }
        max_col_norm = std::max(max_col_norm, std::sqrt(s));
    }
    const double tol = kRankTolerance * max_col_norm;

    T log_vol(0.0);
    std::vector<T> house(rows);
    for (std::size_t k = 0; k < cols; ++k) {
        // Householder vector for column k, rows k..rows-1.
        T norm2(0.0);
        for (std::size_t i = k; i < rows; ++i) norm2 += m(i, k) * m(i, k);
        T norm = sqrt(norm2);
        if (!(value_of(norm) > tol) || !std::isfinite(value_of(norm)))
            throw degenerate_jacobian_error(
                "gram_log_volume: rank-deficient column block (" + std::to_string(cols) +
                    " columns, diagonal " + std::to_string(k + 1) + " below tolerance)",
                static_cast<int>(cols));
        log_vol += log(norm);
        if (k + 1 == cols) break;

        T alpha = value_of(m(k, k)) >= 0.0 ? -norm : norm;
        for (std::size_t i = k; i < rows; ++i) house[i] = m(i, k);
        house[k] -= alpha;
        T hnorm2(0.0);
        for (std::size_t i = k; i < rows; ++i) hnorm2 += house[i] * house[i];
        T scale = T(2.0) / hnorm2;
        for (std::size_t j = k + 1; j < cols; ++j) {
            T dot(0.0);
            for (std::size_t i = k; i < rows; ++i) dot += house[i] * m(i, j);
            T f = scale * dot;
            for (std::size_t i = k; i < rows; ++i) m(i, j) -= f * house[i];
        }
    }
    return log_vol;
}

/// log |det M| for square M via partially pivoted LU. Agrees with
/// gram_log_volume on well-conditioned square input.
template <class T>
T log_abs_det(Mat<T> m) {
    if (m.rows != m.cols) throw std::invalid_argument("log_abs_det: matrix not square");
    const std::size_t n = m.rows;
    if (n == 0) throw std::invalid_argument("log_abs_det: empty matrix");

    double max_entry = 0.0;
    for (const T& v : m.a) max_entry = std::max(max_entry, std::abs(value_of(v)));
    const double tol = kRankTolerance * std::max(max_entry, 1.0);

    T log_det(0.0);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t pivot = k;
        double best = std::abs(value_of(m(k, k)));
        for (std::size_t i = k + 1; i < n; ++i) {
            double cand = std::abs(value_of(m(i, k)));
            if (cand > best) { best = cand; pivot = i; }
        }
        if (!(best > tol) || !std::isfinite(best))
            throw degenerate_jacobian_error(
                "log_abs_det: singular matrix (pivot " + std::to_string(k + 1) + " below tolerance)",
                static_cast<int>(n));
        if (pivot != k)
            for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(pivot, j));
        log_det += log(abs(m(k, k)));
        T inv = T(1.0) / m(k, k);
        for (std::size_t i = k + 1; i < n; ++i) {
            T f = m(i, k) * inv;
            if (value_of(f) == 0.0) continue;
            for (std::size_t j = k + 1; j < n; ++j) m(i, j) -= f * m(k, j);
        }
    }
    return log_det;
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and the matching orthonormal eigenvectors
/// as columns of the second member.
struct SymmetricEigen {
    std::vector<double> values;
    Matrix vectors;
};

inline SymmetricEigen symmetric_eigen(Matrix s) {
    if (s.rows != s.cols) throw std::invalid_argument("symmetric_eigen: matrix not square");
    const std::size_t n = s.rows;
    Matrix v = Matrix::identity(n);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += s(p, q) * s(p, q);
        if (off < 1e-26) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(s(p, q)) < 1e-300) continue;
                double theta = (s(q, q) - s(p, p)) / (2.0 * s(p, q));
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double sn = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double skp = s(k, p), skq = s(k, q);
                    s(k, p) = c * skp - sn * skq;
                    s(k, q) = sn * skp + c * skq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double spk = s(p, k), sqk = s(q, k);
                    s(p, k) = c * spk - sn * sqk;
                    s(q, k) = sn * spk + c * sqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return s(i, i) > s(j, j); });

    SymmetricEigen out;
    out.values.resize(n);
    out.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = s(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
    }
    return out;
}

/// Central-difference Jacobian, column j = (f(z + h e_j) - f(z - h e_j)) / 2h.
/// The independent O(h^2) oracle for every AD path. f must be callable as
/// std::vector<double> f(std::span<const double>).
template <class F>
Matrix finite_difference_jacobian(const F& f, std::span<const double> z, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_difference_jacobian: step must be > 0");
    std::vector<double> zp(z.begin(), z.end());
    Matrix jac;
    for (std::size_t j = 0; j < z.size(); ++j) {
        zp[j] = z[j] + step;
        std::vector<double> hi = f(std::span<const double>(zp));
        zp[j] = z[j] - step;
        std::vector<double> lo = f(std::span<const double>(zp));
        zp[j] = z[j];
        if (jac.a.empty()) jac = Matrix(hi.size(), z.size());
        for (std::size_t i = 0; i < hi.size(); ++i)
            jac(i, j) = (hi[i] - lo[i]) / (2.0 * step);
    }
    return jac;
}

} // namespace manent
