#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>

#include "manent/decoder.hpp"
#include "manent/dgp.hpp"
#include "manent/rng.hpp"

using namespace manent;

namespace {

std::shared_ptr<MlpDecoder> random_mlp(std::size_t dz, std::size_t dx, std::uint64_t seed) {
    NormalSampler rng(seed);
    std::vector<MlpDecoder::Layer> layers;
    std::vector<std::size_t> widths{dz, 9, dx};
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        MlpDecoder::Layer layer;
        layer.weight = Matrix(widths[l + 1], widths[l]);
        for (auto& v : layer.weight.a) v = rng() / std::sqrt(double(widths[l]));
        layer.bias.resize(widths[l + 1]);
        for (auto& v : layer.bias) v = 0.2 * rng();
        layers.push_back(std::move(layer));
    }
    return std::make_shared<MlpDecoder>(std::move(layers), Activation::Tanh);
}

} // namespace

TEST_CASE("identity affine decoder maps z to z") {
    auto g = AffineDecoder::identity(3);
    std::vector<double> z{0.4, -2.0, 7.5};
    auto x = decode(g, z);
    CHECK(x == z);
    CHECK(g.has_encoder());
    auto back = encode(g, x);
    CHECK(back == z);
}

TEST_CASE("affine decoder Jacobian is A in every mode") {
    NormalSampler rng(21);
    Matrix a(4, 3);
    for (auto& v : a.a) v = rng();
    AffineDecoder g(a, {0.1, 0.2, 0.3, 0.4});

    std::vector<double> z{0.5, -1.0, 2.0};
    for (JacobianMode mode : {JacobianMode::Analytic, JacobianMode::Forward, JacobianMode::Reverse}) {
        Matrix j = decoder_jacobian(g, z, mode);
        REQUIRE(j.rows == 4);
        REQUIRE(j.cols == 3);
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t k = 0; k < 3; ++k)
                CHECK(j(i, k) == Catch::Approx(a(i, k)).margin(1e-14));
    }
}

TEST_CASE("torus decoder at the origin alternates (1, 0) pairs") {
    TorusDatasetConfig cfg;
    TorusDecoder g(cfg.sigma_phi(), cfg.sigma_r());
    std::vector<double> z(20, 0.0);
    auto x = decode(g, z);
    for (std::size_t j = 0; j < 10; ++j) {
        CHECK(x[2 * j] == 1.0);
        CHECK(x[2 * j + 1] == 0.0);
    }
}

TEST_CASE("torus analytic Jacobian columns have the derived two-entry structure") {
    TorusDatasetConfig cfg;
    TorusDecoder g(cfg.sigma_phi(), cfg.sigma_r());
    NormalSampler rng(3);
    std::vector<double> z = rng.sample(20);
    Matrix j = g.analytic_jacobian(z);

    auto sp = cfg.sigma_phi();
    auto sr = cfg.sigma_r();
    for (std::size_t c = 0; c < 10; ++c) {
        double phi = sp[c] * z[c];
        double r = 1.0 + sr[c] * z[10 + c];
        for (std::size_t row = 0; row < 20; ++row) {
            double expected = 0.0;
            if (row == 2 * c) expected = sp[c] * (-r * std::sin(phi));
            if (row == 2 * c + 1) expected = sp[c] * (r * std::cos(phi));
            CHECK(j(row, c) == Catch::Approx(expected).margin(1e-15));
        }
    }
}

TEST_CASE("torus analytic Jacobian matches finite differences and AD modes") {
    TorusDataset data = sample_torus({.samples = 1, .seed = 9, .rotation_seed = 5});
    const TorusDecoder& g = *data.decoder;

    NormalSampler rng(10);
    std::vector<double> z = rng.sample(20);
    Matrix ja = decoder_jacobian(g, z, JacobianMode::Analytic);
    Matrix jf = decoder_jacobian(g, z, JacobianMode::Forward);
    Matrix jr = decoder_jacobian(g, z, JacobianMode::Reverse);
    Matrix jd = decoder_jacobian(g, z, JacobianMode::FiniteDifference);
    for (std::size_t i = 0; i < ja.a.size(); ++i) {
        CHECK(ja.a[i] == Catch::Approx(jf.a[i]).margin(1e-10));
        CHECK(ja.a[i] == Catch::Approx(jr.a[i]).margin(1e-10));
        CHECK(ja.a[i] == Catch::Approx(jd.a[i]).margin(1e-6));
    }
}

TEST_CASE("torus encode inverts decode") {
    TorusDataset data = sample_torus({.samples = 50, .seed = 4, .rotation_seed = 6});
    for (std::size_t i = 0; i < data.x.rows; ++i) {
        std::vector<double> x(20), z(20);
        for (std::size_t j = 0; j < 20; ++j) x[j] = data.x(i, j);
        data.decoder->encode(x, z);
        for (std::size_t j = 0; j < 20; ++j)
            CHECK(z[j] == Catch::Approx(data.z_gt(i, j)).margin(1e-9));
    }
}

TEST_CASE("mlp decoder cross-mode Jacobian agreement") {
    auto g = random_mlp(3, 5, 77);
    NormalSampler rng(78);
    std::vector<double> z = rng.sample(3);

    Matrix jf = decoder_jacobian(*g, z, JacobianMode::Forward);
    Matrix jr = decoder_jacobian(*g, z, JacobianMode::Reverse);
    Matrix jd = decoder_jacobian(*g, z, JacobianMode::FiniteDifference);
    for (std::size_t i = 0; i < jf.a.size(); ++i) {
        CHECK(jf.a[i] == Catch::Approx(jr.a[i]).margin(1e-10));
        CHECK(jf.a[i] == Catch::Approx(jd.a[i]).margin(1e-5));
    }
}

TEST_CASE("jacobian_columns equals the column slice of the full Jacobian") {
    auto g = random_mlp(5, 5, 13);
    NormalSampler rng(14);
    std::vector<double> z = rng.sample(5);
    IndexSet s({0, 2, 4});
    Matrix full = decoder_jacobian(*g, z, JacobianMode::Forward);
    Matrix cols = decoder_jacobian_columns(*g, z, s, JacobianMode::Forward);
    REQUIRE(cols.cols == 3);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(cols(i, 0) == full(i, 0));
        CHECK(cols(i, 1) == full(i, 2));
        CHECK(cols(i, 2) == full(i, 4));
    }
}

TEST_CASE("rotation of data space leaves gram volumes untouched") {
    auto g = random_mlp(4, 4, 31);
    Matrix q = make_random_rotation(4, 32);
    auto rotated = RotatedDecoder(g, q);

    NormalSampler rng(33);
    std::vector<double> z = rng.sample(4);
    Matrix j0 = decoder_jacobian(*g, z, JacobianMode::Forward);
    Matrix j1 = decoder_jacobian(rotated, z, JacobianMode::Forward);
    for (std::size_t c1 = 0; c1 < 4; ++c1)
        for (std::size_t c2 = c1; c2 < 4; ++c2) {
            std::vector<std::size_t> pick = c1 == c2
                ? std::vector<std::size_t>{c1}
                : std::vector<std::size_t>{c1, c2};
            double v0 = gram_log_volume(j0.columns(pick));
            double v1 = gram_log_volume(j1.columns(pick));
            CHECK(v0 == Catch::Approx(v1).margin(1e-10));
        }
}

TEST_CASE("latent permutation permutes Jacobian columns") {
    auto g = random_mlp(4, 4, 41);
    std::vector<std::size_t> perm{2, 0, 3, 1};
    LatentPermutedDecoder permuted(g, perm);

    NormalSampler rng(42);
    std::vector<double> z = rng.sample(4);
    std::vector<double> w(4);
    for (std::size_t i = 0; i < 4; ++i) w[i] = z[perm[i]];

    Matrix jp = decoder_jacobian(permuted, z, JacobianMode::Forward);
    Matrix jg = decoder_jacobian(*g, w, JacobianMode::Forward);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 4; ++c)
            CHECK(jp(i, perm[c]) == Catch::Approx(jg(i, c)).margin(1e-14));
}

TEST_CASE("pca_fit recovers an anisotropic Gaussian") {
    // data ~ N(mu, diag(4, 1))
    NormalSampler rng(55);
    const std::size_t n = 20000;
    Matrix data(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        data(i, 0) = 2.0 * rng() + 3.0;
        data(i, 1) = rng() - 1.0;
    }
    AffineDecoder g = pca_fit(data);
    CHECK(g.offset()[0] == Catch::Approx(3.0).margin(0.1));
    CHECK(g.offset()[1] == Catch::Approx(-1.0).margin(0.1));

    // A A^T should recover the covariance; eigenvalues ~ (4, 1)
    Matrix aat = matmul(g.matrix(), g.matrix().transposed());
    SymmetricEigen eig = symmetric_eigen(aat);
    CHECK(eig.values[0] == Catch::Approx(4.0).epsilon(0.1));
    CHECK(eig.values[1] == Catch::Approx(1.0).epsilon(0.1));

    // Jacobian columns of the PCA solution are orthogonal
    const Matrix& a = g.matrix();
    double dot = a(0, 0) * a(0, 1) + a(1, 0) * a(1, 1);
    CHECK(dot == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("pca_fit rejects rank-deficient data") {
    Matrix data(50, 2);
    NormalSampler rng(60);
    for (std::size_t i = 0; i < 50; ++i) {
        double v = rng();
        data(i, 0) = v;
        data(i, 1) = 2.0 * v; // exactly collinear
    }
    CHECK_THROWS_AS(pca_fit(data), fit_error);
}

TEST_CASE("jacobian_batch flags non-finite samples instead of dropping them") {
    auto g = random_mlp(3, 3, 70);
    Matrix zs(3, 3);
    NormalSampler rng(71);
    for (auto& v : zs.a) v = rng();
    JacobianBatch batch = jacobian_batch(*g, zs, JacobianMode::Forward);
    CHECK(batch.flagged == 0);
    CHECK(batch.jac.size() == 3);

    CHECK_THROWS_AS(jacobian_batch(*g, Matrix(0, 3)), std::invalid_argument);
}

TEST_CASE("decoder error paths") {
    auto g = AffineDecoder::identity(2);
    std::vector<double> wrong{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(decode(g, wrong), std::invalid_argument);

    auto mlp = random_mlp(2, 3, 80);
    CHECK_FALSE(mlp->has_encoder());
    std::vector<double> x{0.0, 0.0, 0.0}, z(2);
    CHECK_THROWS_AS(mlp->encode(x, z), capability_error);
}
