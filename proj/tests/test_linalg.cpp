#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "manent/linalg.hpp"
#include "manent/rng.hpp"

using namespace manent;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    NormalSampler rng(seed);
    Matrix m(rows, cols);
    for (auto& v : m.a) v = rng();
    return m;
}

} // namespace

TEST_CASE("gram_log_volume on identity is zero") {
    CHECK(gram_log_volume(Matrix::identity(2)) == 0.0);
    CHECK(gram_log_volume(Matrix::identity(7)) == 0.0);
}

TEST_CASE("gram_log_volume of a single column is the log of its norm") {
    Matrix m(2, 1);
    m(0, 0) = 3.0;
    m(1, 0) = 4.0;
    CHECK(gram_log_volume(m) == Catch::Approx(std::log(5.0)).margin(1e-15));

    // exact equality with the plain norm formula, any column
    NormalSampler rng(11);
    for (int t = 0; t < 50; ++t) {
        Matrix c(6, 1);
        double s = 0.0;
        for (auto& v : c.a) {
            v = rng();
            s += v * v;
        }
        CHECK(gram_log_volume(c) == std::log(std::sqrt(s)));
    }
}

TEST_CASE("gram_log_volume of unit-determinant shear is zero") {
    Matrix m(2, 2);
    m(0, 0) = 1.0; m(0, 1) = 1.0;
    m(1, 0) = 0.0; m(1, 1) = 1.0;
    CHECK(gram_log_volume(m) == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("gram_log_volume matches log_abs_det on square nonsingular matrices") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Matrix m = random_matrix(5, 5, seed);
        CHECK(gram_log_volume(m) == Catch::Approx(log_abs_det(m)).margin(1e-10));
    }
}

TEST_CASE("log_abs_det closed forms") {
    Matrix d(2, 2);
    d(0, 0) = 2.0; d(1, 1) = 0.5;
    CHECK(log_abs_det(d) == Catch::Approx(0.0).margin(1e-15));
    CHECK(log_abs_det(Matrix::identity(4)) == 0.0);
    Matrix e(2, 2);
    e(0, 0) = std::exp(1.0); e(1, 1) = std::exp(1.0);
    CHECK(log_abs_det(e) == Catch::Approx(2.0).margin(1e-14));
}

TEST_CASE("rank-deficient inputs raise degenerate_jacobian_error") {
    Matrix m(3, 2);
    m(0, 0) = 1.0; m(0, 1) = 2.0;
    m(1, 0) = 1.0; m(1, 1) = 2.0;
    m(2, 0) = 1.0; m(2, 1) = 2.0;
    CHECK_THROWS_AS(gram_log_volume(m), degenerate_jacobian_error);
    try {
        gram_log_volume(m);
    } catch (const degenerate_jacobian_error& e) {
        CHECK(e.column_count() == 2);
    }

    Matrix s(2, 2);
    s(0, 0) = 1.0; s(0, 1) = 1.0;
    s(1, 0) = 1.0; s(1, 1) = 1.0;
    CHECK_THROWS_AS(log_abs_det(s), degenerate_jacobian_error);
}

TEST_CASE("Hadamard: sum of column log-norms dominates the gram log-volume") {
    for (std::uint64_t seed = 100; seed < 140; ++seed) {
        Matrix m = random_matrix(8, 5, seed);
        double col_sum = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m.rows; ++i) s += m(i, j) * m(i, j);
            col_sum += std::log(std::sqrt(s));
        }
        CHECK(col_sum - gram_log_volume(m) >= -1e-9);
    }
}

TEST_CASE("symmetric_eigen recovers a known spectrum") {
    // S = U diag(9, 4, 1) U^T for a fixed rotation U
    Matrix q = random_matrix(3, 3, 42);
    // orthogonalize by Gram-Schmidt columns
    for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            double dot = 0.0;
            for (std::size_t i = 0; i < 3; ++i) dot += q(i, j) * q(i, k);
            for (std::size_t i = 0; i < 3; ++i) q(i, j) -= dot * q(i, k);
        }
        double n = 0.0;
        for (std::size_t i = 0; i < 3; ++i) n += q(i, j) * q(i, j);
        n = std::sqrt(n);
        for (std::size_t i = 0; i < 3; ++i) q(i, j) /= n;
    }
    Matrix lam(3, 3);
    lam(0, 0) = 9.0; lam(1, 1) = 4.0; lam(2, 2) = 1.0;
    Matrix s = matmul(matmul(q, lam), q.transposed());

    SymmetricEigen eig = symmetric_eigen(s);
    REQUIRE(eig.values.size() == 3);
    CHECK(eig.values[0] == Catch::Approx(9.0).margin(1e-10));
    CHECK(eig.values[1] == Catch::Approx(4.0).margin(1e-10));
    CHECK(eig.values[2] == Catch::Approx(1.0).margin(1e-10));

    // eigenvectors orthonormal and reconstruct S
    Matrix vtv = matmul(eig.vectors.transposed(), eig.vectors);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(vtv(i, j) == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-12));
}

TEST_CASE("gram_log_volume is invariant under left rotation") {
    Matrix m = random_matrix(6, 3, 7);
    Matrix g = random_matrix(6, 6, 8);
    // orthogonalize g
    for (std::size_t j = 0; j < 6; ++j) {
        for (std::size_t k = 0; k < j; ++k) {
            double dot = 0.0;
            for (std::size_t i = 0; i < 6; ++i) dot += g(i, j) * g(i, k);
            for (std::size_t i = 0; i < 6; ++i) g(i, j) -= dot * g(i, k);
        }
        double n = 0.0;
        for (std::size_t i = 0; i < 6; ++i) n += g(i, j) * g(i, j);
        n = std::sqrt(n);
        for (std::size_t i = 0; i < 6; ++i) g(i, j) /= n;
    }
    CHECK(gram_log_volume(matmul(g, m)) == Catch::Approx(gram_log_volume(m)).margin(1e-10));
}
