#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "manent/dgp.hpp"

using namespace manent;

TEST_CASE("make_random_rotation is orthogonal, unit determinant, deterministic") {
    Matrix q = make_random_rotation(6, 123);
    Matrix qtq = matmul(q.transposed(), q);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            CHECK(qtq(i, j) == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-12));

    CHECK(log_abs_det(q) == Catch::Approx(0.0).margin(1e-10));

    Matrix q2 = make_random_rotation(6, 123);
    CHECK(q.a == q2.a);
    Matrix q3 = make_random_rotation(6, 124);
    CHECK(q.a != q3.a);
}

TEST_CASE("noiseless two moons lies on the two arcs") {
    Matrix x = sample_two_moons({.samples = 101, .noise_std = 0.0, .seed = 7});
    // first moon point at theta = 0 is (1, 0)
    CHECK(x(0, 0) == 1.0);
    CHECK(x(0, 1) == 0.0);

    // upper moon: unit circle about the origin, y >= 0
    // lower moon: the reflected arc about (1, 0.5), y <= 0.5
    for (std::size_t i = 0; i < x.rows; ++i) {
        double upper = std::abs(std::hypot(x(i, 0), x(i, 1)) - 1.0);
        double lower = std::abs(std::hypot(x(i, 0) - 1.0, x(i, 1) - 0.5) - 1.0);
        bool on_upper = upper < 1e-12 && x(i, 1) >= -1e-12;
        bool on_lower = lower < 1e-12 && x(i, 1) <= 0.5 + 1e-12;
        CHECK((on_upper || on_lower));
    }
}

TEST_CASE("two moons is deterministic under the seed") {
    TwoMoonsConfig cfg{.samples = 64, .noise_std = 0.1, .seed = 99};
    Matrix a = sample_two_moons(cfg);
    Matrix b = sample_two_moons(cfg);
    CHECK(a.a == b.a);
    cfg.seed = 100;
    Matrix c = sample_two_moons(cfg);
    CHECK(a.a != c.a);
}

TEST_CASE("torus sigma schedules match the configured decay") {
    TorusDatasetConfig cfg;
    auto sp = cfg.sigma_phi();
    auto sr = cfg.sigma_r();
    REQUIRE(sp.size() == 10);
    CHECK(sp[0] == Catch::Approx(0.07 * 2.0 * M_PI).margin(1e-15));
    CHECK(sp[9] == Catch::Approx(0.07 * 2.0 * M_PI * std::exp(-1.5)).margin(1e-15));
    CHECK(sr[0] == Catch::Approx(0.05).margin(1e-15));
    CHECK(sr[9] == Catch::Approx(0.05 * std::exp(-1.5)).margin(1e-15));
    for (std::size_t j = 1; j < 10; ++j) {
        CHECK(sp[j] < sp[j - 1]);
        CHECK(sr[j] < sr[j - 1]);
        CHECK(sp[j] > 0.0);
        CHECK(sr[j] > 0.0);
    }
}

TEST_CASE("torus dataset decoder reproduces the samples exactly") {
    TorusDataset data = sample_torus({.samples = 200, .seed = 11, .rotation_seed = 3});
    std::vector<double> z(20), x(20);
    for (std::size_t i = 0; i < data.x.rows; ++i) {
        for (std::size_t j = 0; j < 20; ++j) z[j] = data.z_gt(i, j);
        data.decoder->decode_value(z, x);
        for (std::size_t j = 0; j < 20; ++j)
            CHECK(x[j] == Catch::Approx(data.x(i, j)).margin(1e-12));
    }
}

TEST_CASE("unrotated torus pair projections form an annulus") {
    TorusDatasetConfig cfg{.samples = 2000, .seed = 21, .rotate = false, .normalize = false};
    TorusDataset data = sample_torus(cfg);
    auto sr = cfg.sigma_r();
    for (std::size_t i = 0; i < data.x.rows; ++i) {
        double radius = std::hypot(data.x(i, 0), data.x(i, 1));
        CHECK(std::abs(radius - 1.0) < 6.0 * sr[0]);
    }
}

TEST_CASE("torus latent marginals look standard normal") {
    const std::size_t n = 5000;
    TorusDataset data = sample_torus({.samples = n, .seed = 31});
    for (std::size_t j = 0; j < 20; ++j) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean += data.z_gt(i, j);
            sq += data.z_gt(i, j) * data.z_gt(i, j);
        }
        mean /= n;
        double sd = std::sqrt(sq / n - mean * mean);
        CHECK(std::abs(mean) < 4.0 / std::sqrt(double(n)));
        CHECK(std::abs(sd - 1.0) < 4.0 / std::sqrt(double(n)));
    }
}

TEST_CASE("normalized torus data has roughly zero mean and unit variance") {
    TorusDataset data = sample_torus({.samples = 4000, .seed = 41, .rotation_seed = 8});
    for (std::size_t j = 0; j < 20; ++j) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < data.x.rows; ++i) {
            mean += data.x(i, j);
            sq += data.x(i, j) * data.x(i, j);
        }
        mean /= double(data.x.rows);
        double sd = std::sqrt(sq / double(data.x.rows) - mean * mean);
        CHECK(std::abs(mean) < 0.1);
        CHECK(sd == Catch::Approx(1.0).epsilon(0.1));
    }
}
