#pragma once

// Seeded data-generating processes: two moons and the 10-D torus, with
// ground-truth latent bookkeeping for cross-model comparison. Everything is a
// pure function of (config, seed).

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "manent/decoder.hpp"
#include "manent/linalg.hpp"
#include "manent/rng.hpp"

namespace manent {

/// Q from the Householder QR of a seeded Gaussian matrix; Q^T Q = I to ~1e-14
/// and the R-diagonal sign fix makes the draw Haar-distributed.
inline Matrix make_random_rotation(std::size_t dim, std::uint64_t seed) {
    NormalSampler rng(seed);
    Matrix m(dim, dim);
    for (auto& v : m.a) v = rng();

    std::vector<std::vector<double>> reflectors(dim);
    std::vector<double> diag_sign(dim, 1.0);
    for (std::size_t k = 0; k < dim; ++k) {
        double norm2 = 0.0;
        for (std::size_t i = k; i < dim; ++i) norm2 += m(i, k) * m(i, k);
        double norm = std::sqrt(norm2);
        double alpha = m(k, k) >= 0.0 ? -norm : norm;
        diag_sign[k] = alpha >= 0.0 ? 1.0 : -1.0;

        std::vector<double> v(dim - k);
        for (std::size_t i = k; i < dim; ++i) v[i - k] = m(i, k);
        v[0] -= alpha;
        double vnorm2 = 0.0;
        for (double w : v) vnorm2 += w * w;
        reflectors[k] = v;

        for (std::size_t j = k; j < dim; ++j) {
            double dot = 0.0;
            for (std::size_t i = k; i < dim; ++i) dot += v[i - k] * m(i, j);
            double f = 2.0 * dot / vnorm2;
            for (std::size_t i = k; i < dim; ++i) m(i, j) -= f * v[i - k];
        }
    }

    // Q = H_0 ... H_(d-1), applied to the identity from the right end inward
    Matrix q = Matrix::identity(dim);
    for (std::size_t kk = dim; kk-- > 0;) {
        const std::vector<double>& v = reflectors[kk];
        double vnorm2 = 0.0;
        for (double w : v) vnorm2 += w * w;
        for (std::size_t j = 0; j < dim; ++j) {
            double dot = 0.0;
            for (std::size_t i = kk; i < dim; ++i) dot += v[i - kk] * q(i, j);
            double f = 2.0 * dot / vnorm2;
            for (std::size_t i = kk; i < dim; ++i) q(i, j) -= f * v[i - kk];
        }
    }
    for (std::size_t j = 0; j < dim; ++j)
        if (diag_sign[j] < 0.0)
            for (std::size_t i = 0; i < dim; ++i) q(i, j) = -q(i, j);
    return q;
}

// ---------------------------------------------------------------------------
// Two moons
// ---------------------------------------------------------------------------

struct TwoMoonsConfig {
    std::size_t samples = 1000;
    double noise_std = 0.1; // sqrt(0.01)
    std::uint64_t seed = 0;
};

/// Two interleaved half-circles: the upper moon is the unit arc over angles
/// [0, pi] (equally spaced, endpoints included); the lower moon is the same
/// arc reflected and shifted by (1, -0.5). Isotropic Gaussian noise on top.
inline Matrix sample_two_moons(const TwoMoonsConfig& cfg) {
    if (cfg.samples < 1) throw std::invalid_argument("sample_two_moons: need at least 1 sample");
    if (cfg.noise_std < 0.0) throw std::invalid_argument("sample_two_moons: negative noise");
    const std::size_t n_out = cfg.samples / 2;
    const std::size_t n_in = cfg.samples - n_out;

    Matrix x(cfg.samples, 2);
    for (std::size_t i = 0; i < n_out; ++i) {
        double t = n_out > 1 ? M_PI * static_cast<double>(i) / static_cast<double>(n_out - 1) : 0.0;
        x(i, 0) = std::cos(t);
        x(i, 1) = std::sin(t);
    }
    for (std::size_t i = 0; i < n_in; ++i) {
        double t = n_in > 1 ? M_PI * static_cast<double>(i) / static_cast<double>(n_in - 1) : 0.0;
        x(n_out + i, 0) = 1.0 - std::cos(t);
        x(n_out + i, 1) = 1.0 - std::sin(t) - 0.5;
    }
    if (cfg.noise_std > 0.0) {
        NormalSampler rng(cfg.seed);
        for (auto& v : x.a) v += cfg.noise_std * rng();
    }
    return x;
}

// ---------------------------------------------------------------------------
// 10-D torus
// ---------------------------------------------------------------------------

struct TorusDatasetConfig {
    std::size_t samples = 10000;
    std::uint64_t seed = 0;
    std::uint64_t rotation_seed = 1;
    bool rotate = true;
    bool normalize = true;
    std::size_t pairs = 10;
    // prefactors of the decaying sigma schedules; overridable per manifest
    double sigma_phi_scale = 0.07 * 2.0 * M_PI;
    double sigma_r_scale = 0.05;

    /// sigma_phi = scale * exp(-linspace(0, 1.5, pairs)), endpoints included.
    std::vector<double> sigma_phi() const {
        std::vector<double> s(pairs);
        for (std::size_t j = 0; j < pairs; ++j)
            s[j] = sigma_phi_scale * std::exp(-linspace_entry(j));
        return s;
    }

    std::vector<double> sigma_r() const {
        std::vector<double> s(pairs);
        for (std::size_t j = 0; j < pairs; ++j)
            s[j] = sigma_r_scale * std::exp(-linspace_entry(j));
        return s;
    }

private:
    double linspace_entry(std::size_t j) const {
        return pairs > 1 ? 1.5 * static_cast<double>(j) / static_cast<double>(pairs - 1) : 0.0;
    }
};

struct TorusDataset {
    Matrix x;         // N x 2*pairs, post rotation/normalization
    Matrix z_gt;      // N x 2*pairs ground-truth latents
    std::shared_ptr<TorusDecoder> decoder; // reproduces x from z_gt exactly
};

/// Number of samples used to freeze the normalization constants.
inline constexpr std::size_t kTorusNormalizationSamples = 100000;

/// z ~ N(0, I); x through the torus map, then the fixed seeded rotation, then
/// a per-coordinate standardization frozen from kTorusNormalizationSamples
/// draws (a deterministic function of the config, independent of N).
inline TorusDataset sample_torus(const TorusDatasetConfig& cfg) {
    if (cfg.samples < 1) throw std::invalid_argument("sample_torus: need at least 1 sample");
    const std::size_t d = 2 * cfg.pairs;

    std::optional<Matrix> rot;
    if (cfg.rotate) rot = make_random_rotation(d, cfg.rotation_seed);

    std::optional<std::pair<std::vector<double>, std::vector<double>>> norm;
    if (cfg.normalize) {
        TorusDecoder raw(cfg.sigma_phi(), cfg.sigma_r(), rot, std::nullopt);
        NormalSampler rng(cfg.rotation_seed + 0x9e3779b97f4a7c15ull);
        std::vector<double> mean(d, 0.0), sq(d, 0.0), z(d), x(d);
        for (std::size_t i = 0; i < kTorusNormalizationSamples; ++i) {
            for (auto& v : z) v = rng();
            raw.decode_value(z, x);
            for (std::size_t j = 0; j < d; ++j) {
                mean[j] += x[j];
                sq[j] += x[j] * x[j];
            }
        }
        std::vector<double> scale(d);
        for (std::size_t j = 0; j < d; ++j) {
            mean[j] /= static_cast<double>(kTorusNormalizationSamples);
            double var = sq[j] / static_cast<double>(kTorusNormalizationSamples) - mean[j] * mean[j];
            scale[j] = std::sqrt(var);
        }
        norm = std::make_pair(std::move(mean), std::move(scale));
    }

    TorusDataset out;
    out.decoder = std::make_shared<TorusDecoder>(cfg.sigma_phi(), cfg.sigma_r(), rot, norm,
                                                 "torus-gt");
    out.z_gt = Matrix(cfg.samples, d);
    out.x = Matrix(cfg.samples, d);
    NormalSampler rng(cfg.seed);
    std::vector<double> z(d), x(d);
    for (std::size_t i = 0; i < cfg.samples; ++i) {
        for (auto& v : z) v = rng();
        out.decoder->decode_value(z, x);
        for (std::size_t j = 0; j < d; ++j) {
            out.z_gt(i, j) = z[j];
            out.x(i, j) = x[j];
        }
    }
    return out;
}

/// Latent prior draw: N x dim standard normal rows, seed-deterministic.
inline Matrix sample_prior(std::size_t n, std::size_t dim, std::uint64_t seed) {
    Matrix z(n, dim);
    NormalSampler rng(seed);
    for (auto& v : z.a) v = rng();
    return z;
}

} // namespace manent
