#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>

#include "manent/flow.hpp"
#include "manent/flow_io.hpp"
#include "manent/metrics.hpp"
#include "manent/rng.hpp"

using namespace manent;

namespace {

RqsSpline random_spline(std::uint64_t seed) {
    RqsSpline s = RqsSpline::identity();
    NormalSampler rng(seed);
    for (auto& v : s.raw) v = rng();
    return s;
}

/// All-parameter perturbation, standing in for "any setting reachable by
/// training".
FlowModel perturbed_flow(FlowArchitecture arch, double scale, std::uint64_t seed) {
    FlowModel model = make_flow(arch);
    NormalSampler rng(seed);
    for (auto& p : model.params()) p += scale * rng();
    return model;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("identity spline is the identity with zero log-derivative") {
    RqsSpline s = RqsSpline::identity();
    auto [y, ld] = rqs_forward(s, 0.3);
    CHECK(y == Catch::Approx(0.3).margin(1e-13));
    CHECK(ld == Catch::Approx(0.0).margin(1e-13));

    auto [x, ldi] = rqs_inverse(s, 0.3);
    CHECK(x == Catch::Approx(0.3).margin(1e-13));
    CHECK(ldi == Catch::Approx(0.0).margin(1e-13));
}

TEST_CASE("spline is identity outside the tail bound") {
    RqsSpline s = random_spline(1);
    double b = s.config.tail_bound;
    auto [y, ld] = rqs_forward(s, b + 1.0);
    CHECK(y == b + 1.0);
    CHECK(ld == 0.0);
    auto [x, ldi] = rqs_inverse(s, -b - 2.5);
    CHECK(x == -b - 2.5);
    CHECK(ldi == 0.0);
}

TEST_CASE("spline round trip and monotonicity on random parameters") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        RqsSpline s = random_spline(seed);
        NormalSampler rng(seed + 100);
        double prev_x = -s.config.tail_bound, prev_y = -1e300;
        for (int t = 0; t < 200; ++t) {
            double x = 8.0 * rng.uniform() - 4.0;
            auto [y, ld] = rqs_forward(s, x);
            auto [back, ldi] = rqs_inverse(s, y);
            CHECK(std::abs(back - x) <= 1e-8);
            CHECK(ldi == Catch::Approx(-ld).margin(1e-8));
            CHECK(std::isfinite(ld));
        }
        // monotone along a sweep
        for (double x = prev_x; x <= s.config.tail_bound; x += 0.05) {
            double y = rqs_forward(s, x).first;
            CHECK(y > prev_y);
            prev_y = y;
        }
    }
}

TEST_CASE("spline rejects non-finite parameters") {
    RqsSpline s = RqsSpline::identity();
    s.raw[0] = std::nan("");
    CHECK_THROWS_AS(rqs_forward(s, 0.1), evaluation_error);
}

TEST_CASE("freshly initialized flow is the identity map") {
    FlowArchitecture arch{.dim = 4, .blocks = 4, .subnet_hidden = {16, 16}, .init_seed = 3};
    FlowModel model = make_flow(arch);
    NormalSampler rng(4);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> x = rng.sample(4);
        auto [z, ld] = model.encode_with_logdet(x);
        for (std::size_t i = 0; i < 4; ++i) CHECK(z[i] == Catch::Approx(x[i]).margin(1e-12));
        CHECK(ld == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("orthogonal-only model: exact orthogonality, zero log-det") {
    FlowArchitecture arch{.dim = 5, .blocks = 0, .init_seed = 7};
    FlowModel model = perturbed_flow(arch, 0.5, 8); // perturb the reflector vectors

    // materialize Q by encoding basis vectors (couplings absent)
    Matrix q(5, 5);
    for (std::size_t k = 0; k < 5; ++k) {
        auto [col, ld] = model.encode_with_logdet(standard_basis_vector(5, k));
        CHECK(ld == 0.0);
        for (std::size_t i = 0; i < 5; ++i) q(i, k) = col[i];
    }
    Matrix qtq = matmul(q.transposed(), q);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            CHECK(qtq(i, j) == Catch::Approx(i == j ? 1.0 : 0.0).margin(1e-10));

    // decode applies the transpose
    NormalSampler rng(9);
    std::vector<double> z = rng.sample(5);
    auto x = model.decode(z);
    std::vector<double> qt_z = matvec(q.transposed(), std::span<const double>(z));
    for (std::size_t i = 0; i < 5; ++i) CHECK(x[i] == Catch::Approx(qt_z[i]).margin(1e-12));
}

TEST_CASE("encode/decode round trip on perturbed models") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        FlowArchitecture arch{.dim = 4, .blocks = 6, .subnet_hidden = {24, 24},
                              .init_seed = 10 + seed};
        FlowModel model = perturbed_flow(arch, 0.4, 20 + seed);
        NormalSampler rng(30 + seed);
        double worst = 0.0;
        for (int t = 0; t < 1000; ++t) {
            std::vector<double> z = rng.sample(4);
            auto x = model.decode(z);
            auto [back, ld] = model.encode_with_logdet(x);
            for (std::size_t i = 0; i < 4; ++i)
                worst = std::max(worst, std::abs(back[i] - z[i]));
        }
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("encode log-det is minus decode log-det and matches the AD Jacobian") {
    FlowArchitecture arch{.dim = 3, .blocks = 4, .subnet_hidden = {16, 16}, .init_seed = 40};
    auto model = std::make_shared<FlowModel>(perturbed_flow(arch, 0.5, 41));
    FlowDecoder dec(model);

    NormalSampler rng(42);
    for (int t = 0; t < 10; ++t) {
        std::vector<double> z = rng.sample(3);
        auto [x, ld_dec] = model->decode_with_logdet(z);
        auto [z_back, ld_enc] = model->encode_with_logdet(x);
        CHECK(ld_enc == Catch::Approx(-ld_dec).margin(1e-8));

        Matrix j = decoder_jacobian(dec, z, JacobianMode::Forward);
        CHECK(log_abs_det(j) == Catch::Approx(ld_dec).margin(1e-6));
    }
}

TEST_CASE("flow decoder round trips through the Decoder interface") {
    FlowArchitecture arch{.dim = 2, .blocks = 4, .subnet_hidden = {16, 16}, .init_seed = 50};
    auto model = std::make_shared<FlowModel>(perturbed_flow(arch, 0.4, 51));
    std::vector<double> mean{1.0, -2.0}, sd{2.0, 0.5};
    FlowDecoder dec(model, mean, sd);

    NormalSampler rng(52);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> z = rng.sample(2);
        auto x = decode(dec, z);
        auto back = encode(dec, x);
        CHECK(back[0] == Catch::Approx(z[0]).margin(1e-7));
        CHECK(back[1] == Catch::Approx(z[1]).margin(1e-7));
    }
}

TEST_CASE("checkpoint save/load round trip is bit exact") {
    FlowArchitecture arch{.dim = 4, .blocks = 3, .subnet_hidden = {8}, .init_seed = 60};
    FlowModel model = perturbed_flow(arch, 0.3, 61);
    std::string path = temp_path("manent_ckpt_test.mnfc");

    save_model(path, model, {0.1, 0.2, 0.3, 0.4}, {1.0, 2.0, 3.0, 4.0});
    FlowCheckpoint loaded = load_model(path);

    CHECK(loaded.model.dim() == 4);
    CHECK(loaded.model.params() == model.params()); // byte-equal doubles
    CHECK(loaded.data_mean == std::vector<double>{0.1, 0.2, 0.3, 0.4});
    CHECK(loaded.model.layers().size() == model.layers().size());

    // behavioral round trip on 100 samples
    NormalSampler rng(62);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> z = rng.sample(4);
        auto a = model.decode(z);
        auto b = loaded.model.decode(z);
        CHECK(a == b);
    }
    std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects corrupt and truncated files") {
    std::string path = temp_path("manent_ckpt_bad.mnfc");
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE this is not a checkpoint";
    }
    CHECK_THROWS_AS(load_model(path), format_error);

    FlowArchitecture arch{.dim = 2, .blocks = 2, .subnet_hidden = {8}, .init_seed = 70};
    FlowModel model = make_flow(arch);
    save_model(path, model);
    // truncate in the middle of the parameter block
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    CHECK_THROWS_AS(load_model(path), format_error);
    std::remove(path.c_str());
}

TEST_CASE("mlp decoder file round trip and error paths") {
    NormalSampler rng(80);
    std::vector<MlpDecoder::Layer> layers(2);
    layers[0].weight = Matrix(6, 3);
    for (auto& v : layers[0].weight.a) v = rng();
    layers[0].bias = rng.sample(6);
    layers[1].weight = Matrix(2, 6);
    for (auto& v : layers[1].weight.a) v = rng();
    layers[1].bias = rng.sample(2);
    MlpDecoder g(layers, Activation::Tanh);

    std::string path = temp_path("manent_mlp_test.mnmd");
    save_mlp_decoder(path, g);
    MlpDecoder loaded = load_mlp_decoder(path);
    CHECK(loaded.layers()[0].weight.a == layers[0].weight.a);
    CHECK(loaded.layers()[1].bias == layers[1].bias);
    CHECK(loaded.activation() == Activation::Tanh);

    // behavioral check + cross-mode Jacobian agreement on the loaded decoder
    std::vector<double> z = rng.sample(3);
    CHECK(decode(g, z) == decode(loaded, z));
    Matrix jf = decoder_jacobian(loaded, z, JacobianMode::Forward);
    Matrix jd = decoder_jacobian(loaded, z, JacobianMode::FiniteDifference);
    for (std::size_t i = 0; i < jf.a.size(); ++i)
        CHECK(jf.a[i] == Catch::Approx(jd.a[i]).margin(1e-5));

    std::remove(path.c_str());
}

TEST_CASE("one-layer linear mlp behaves like an affine decoder") {
    NormalSampler rng(90);
    std::vector<MlpDecoder::Layer> layers(1);
    layers[0].weight = Matrix(3, 3);
    for (auto& v : layers[0].weight.a) v = rng();
    layers[0].bias = rng.sample(3);
    MlpDecoder mlp(layers, Activation::Identity);
    AffineDecoder affine(layers[0].weight, layers[0].bias);

    std::vector<double> z = rng.sample(3);
    auto a = decode(mlp, z);
    auto b = decode(affine, z);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == Catch::Approx(b[i]).margin(1e-14));
}

TEST_CASE("flow metrics: full-set manifold log density equals the flow NLL") {
    FlowArchitecture arch{.dim = 2, .blocks = 4, .subnet_hidden = {16, 16}, .init_seed = 95};
    auto model = std::make_shared<FlowModel>(perturbed_flow(arch, 0.3, 96));
    FlowDecoder dec(model);

    NormalSampler rng(97);
    for (int t = 0; t < 10; ++t) {
        std::vector<double> z = rng.sample(2);
        auto x = decode(dec, z);
        double density = manifold_log_density(dec, x, IndexSet::range(0, 2));
        double via_nll = -model->nll(x) - std::log(2.0 * M_PI);
        CHECK(density == Catch::Approx(via_nll).margin(1e-8));
    }
}
