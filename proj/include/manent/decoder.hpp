#pragma once

// The decoder abstraction the metrics consume: a deterministic map z -> x with
// column-sliceable Jacobian access. Concrete decoders evaluate through one
// scalar-generic template, so plain values, forward tangents and tape
// variables all share the same arithmetic.

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "manent/autodiff.hpp"
#include "manent/errors.hpp"
#include "manent/indexset.hpp"
#include "manent/linalg.hpp"

namespace manent {

class Decoder {
public:
    virtual ~Decoder() = default;

    virtual std::size_t latent_dim() const = 0;
    virtual std::size_t data_dim() const = 0;
    virtual std::string name() const = 0;

    virtual void decode_value(std::span<const double> z, std::span<double> x) const = 0;
    virtual void decode_fwd(std::span<const DualChunk> z, std::span<DualChunk> x) const = 0;
    virtual void decode_rev(std::span<const Rev> z, std::span<Rev> x) const = 0;

    virtual bool has_analytic_jacobian() const { return false; }
    virtual Matrix analytic_jacobian(std::span<const double>) const {
        throw capability_error(name() + ": no analytic Jacobian");
    }

    virtual bool has_encoder() const { return false; }
    virtual void encode(std::span<const double>, std::span<double>) const {
        throw capability_error(name() + ": no encoder");
    }
};

/// Implements the three scalar instantiations from Derived::eval<S>().
template <class Derived>
class DecoderBase : public Decoder {
public:
    void decode_value(std::span<const double> z, std::span<double> x) const override {
        self().template eval<double>(z, x);
    }
    void decode_fwd(std::span<const DualChunk> z, std::span<DualChunk> x) const override {
        self().template eval<DualChunk>(z, x);
    }
    void decode_rev(std::span<const Rev> z, std::span<Rev> x) const override {
        self().template eval<Rev>(z, x);
    }

private:
    const Derived& self() const { return static_cast<const Derived&>(*this); }
};

/// decode with input/output validation; the error paths name the decoder.
inline std::vector<double> decode(const Decoder& g, std::span<const double> z) {
    if (z.size() != g.latent_dim())
        throw std::invalid_argument(g.name() + ": latent vector has dimension " +
                                    std::to_string(z.size()) + ", expected " +
                                    std::to_string(g.latent_dim()));
    for (double v : z)
        if (!std::isfinite(v)) throw std::invalid_argument(g.name() + ": non-finite latent input");
    std::vector<double> x(g.data_dim());
    g.decode_value(z, x);
    for (double v : x)
        if (!std::isfinite(v)) throw evaluation_error(g.name() + ": non-finite decoder output");
    return x;
}

inline std::vector<double> encode(const Decoder& g, std::span<const double> x) {
    if (x.size() != g.data_dim())
        throw std::invalid_argument(g.name() + ": data vector has dimension " +
                                    std::to_string(x.size()) + ", expected " +
                                    std::to_string(g.data_dim()));
    std::vector<double> z(g.latent_dim());
    g.encode(x, z);
    return z;
}

// ---------------------------------------------------------------------------
// Jacobian extraction
// ---------------------------------------------------------------------------

enum class JacobianMode { Auto, Analytic, Forward, Reverse, FiniteDifference };

namespace detail {

inline Matrix jacobian_forward(const Decoder& g, std::span<const double> z) {
    const std::size_t dz = g.latent_dim(), dx = g.data_dim();
    Matrix jac(dx, dz);
    std::vector<DualChunk> in(dz), out(dx);
    for (std::size_t base = 0; base < dz; base += kJacobianChunk) {
        const std::size_t width = std::min<std::size_t>(kJacobianChunk, dz - base);
        for (std::size_t i = 0; i < dz; ++i) in[i] = DualChunk(z[i]);
        for (std::size_t k = 0; k < width; ++k) in[base + k].d[k] = 1.0;
        g.decode_fwd(in, out);
        for (std::size_t i = 0; i < dx; ++i)
            for (std::size_t k = 0; k < width; ++k) jac(i, base + k) = out[i].d[k];
    }
    return jac;
}

inline Matrix jacobian_reverse(const Decoder& g, std::span<const double> z) {
    const std::size_t dz = g.latent_dim(), dx = g.data_dim();
    Tape tape;
    std::vector<Rev> in(dz), out(dx);
    for (std::size_t i = 0; i < dz; ++i) in[i] = Rev::input(tape, z[i]);
    g.decode_rev(in, out);
    Matrix jac(dx, dz);
    for (std::size_t k = 0; k < dx; ++k) {
        const auto& adj = tape.backward(out[k].ix);
        for (std::size_t j = 0; j < dz; ++j)
            jac(k, j) = out[k].tracked() ? adj[static_cast<std::size_t>(in[j].ix)] : 0.0;
    }
    return jac;
}

} // namespace detail

/// Full D_x x D_z Jacobian at z. Auto prefers the analytic Jacobian, then
/// forward mode (one pass per kJacobianChunk latent dimensions).
inline Matrix decoder_jacobian(const Decoder& g, std::span<const double> z,
                               JacobianMode mode = JacobianMode::Auto,
                               double fd_step = 1e-5) {
    if (mode == JacobianMode::Auto)
        mode = g.has_analytic_jacobian() ? JacobianMode::Analytic : JacobianMode::Forward;
    switch (mode) {
        case JacobianMode::Analytic:
            return g.analytic_jacobian(z);
        case JacobianMode::Forward:
            return detail::jacobian_forward(g, z);
        case JacobianMode::Reverse:
            return detail::jacobian_reverse(g, z);
        case JacobianMode::FiniteDifference:
            return finite_difference_jacobian(
                [&](std::span<const double> p) { return decode(g, p); }, z, fd_step);
        default:
            throw std::invalid_argument("decoder_jacobian: bad mode");
    }
}

/// The S-columns of the Jacobian; identical to slicing the full Jacobian.
inline Matrix decoder_jacobian_columns(const Decoder& g, std::span<const double> z,
                                       const IndexSet& s,
                                       JacobianMode mode = JacobianMode::Auto) {
    Matrix full = decoder_jacobian(g, z, mode);
    return full.columns(s.indices());
}

/// Per-sample Jacobians over a batch of latent rows (z_batch is N x D_z).
/// Samples whose Jacobian contains non-finite entries are flagged, never
/// silently dropped.
struct JacobianBatch {
    std::vector<Matrix> jac;
    std::vector<bool> degenerate;
    std::size_t flagged = 0;
};

inline JacobianBatch jacobian_batch(const Decoder& g, const Matrix& z_batch,
                                    JacobianMode mode = JacobianMode::Auto) {
    if (z_batch.rows == 0) throw std::invalid_argument("jacobian_batch: empty batch");
    if (z_batch.cols != g.latent_dim())
        throw std::invalid_argument("jacobian_batch: latent dimension mismatch");
    JacobianBatch out;
    out.jac.reserve(z_batch.rows);
    out.degenerate.assign(z_batch.rows, false);
    for (std::size_t n = 0; n < z_batch.rows; ++n) {
        std::span<const double> z(&z_batch(n, 0), z_batch.cols);
        Matrix j = decoder_jacobian(g, z, mode);
        bool bad = false;
        for (double v : j.a)
            if (!std::isfinite(v)) bad = true;
        if (bad) {
            out.degenerate[n] = true;
            ++out.flagged;
        }
        out.jac.push_back(std::move(j));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Concrete decoders
// ---------------------------------------------------------------------------

/// g(z) = A z + b with constant Jacobian A. Invertible (and an encoder is
/// available) when A is square and nonsingular.
class AffineDecoder : public DecoderBase<AffineDecoder> {
public:
    AffineDecoder(Matrix a, std::vector<double> b, std::string label = "affine")
        : a_(std::move(a)), b_(std::move(b)), label_(std::move(label)) {
        if (a_.rows != b_.size())
            throw std::invalid_argument("AffineDecoder: offset length must match rows of A");
        if (a_.rows < a_.cols)
            throw std::invalid_argument("AffineDecoder: needs data_dim >= latent_dim");
        if (a_.rows == a_.cols) try {
            inv_ = invert(a_);
        } catch (const degenerate_jacobian_error&) {
            // square but singular: decoder stays valid, encoder unavailable
        }
    }

    static AffineDecoder diagonal(std::vector<double> diag) {
        Matrix a(diag.size(), diag.size());
        for (std::size_t i = 0; i < diag.size(); ++i) a(i, i) = diag[i];
        return AffineDecoder(std::move(a), std::vector<double>(diag.size(), 0.0));
    }

    static AffineDecoder identity(std::size_t dim, std::string label = "identity") {
        return AffineDecoder(Matrix::identity(dim), std::vector<double>(dim, 0.0),
                             std::move(label));
    }

    std::size_t latent_dim() const override { return a_.cols; }
    std::size_t data_dim() const override { return a_.rows; }
    std::string name() const override { return label_; }

    template <class S>
    void eval(std::span<const S> z, std::span<S> x) const {
        for (std::size_t i = 0; i < a_.rows; ++i) {
            S acc(b_[i]);
            for (std::size_t j = 0; j < a_.cols; ++j) acc += a_(i, j) * z[j];
            x[i] = acc;
        }
    }

    bool has_analytic_jacobian() const override { return true; }
    Matrix analytic_jacobian(std::span<const double>) const override { return a_; }

    bool has_encoder() const override { return inv_.has_value(); }
    void encode(std::span<const double> x, std::span<double> z) const override {
        if (!inv_) throw capability_error(label_ + ": affine map is not invertible");
        for (std::size_t i = 0; i < inv_->rows; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < inv_->cols; ++j) acc += (*inv_)(i, j) * (x[j] - b_[j]);
            z[i] = acc;
        }
    }

    const Matrix& matrix() const { return a_; }
    const std::vector<double>& offset() const { return b_; }

private:
    static Matrix invert(const Matrix& a) {
        const std::size_t n = a.rows;
        Matrix work = a, inv = Matrix::identity(n);
        for (std::size_t k = 0; k < n; ++k) {
            std::size_t pivot = k;
            for (std::size_t i = k + 1; i < n; ++i)
                if (std::abs(work(i, k)) > std::abs(work(pivot, k))) pivot = i;
            if (std::abs(work(pivot, k)) < 1e-300)
                throw degenerate_jacobian_error("AffineDecoder: singular matrix",
                                                static_cast<int>(n));
            if (pivot != k)
                for (std::size_t j = 0; j < n; ++j) {
                    std::swap(work(k, j), work(pivot, j));
                    std::swap(inv(k, j), inv(pivot, j));
                }
            double d = work(k, k);
            for (std::size_t j = 0; j < n; ++j) {
                work(k, j) /= d;
                inv(k, j) /= d;
            }
            for (std::size_t i = 0; i < n; ++i) {
                if (i == k) continue;
                double f = work(i, k);
                if (f == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j) {
                    work(i, j) -= f * work(k, j);
                    inv(i, j) -= f * inv(k, j);
                }
            }
        }
        return inv;
    }

    Matrix a_;
    std::vector<double> b_;
    std::string label_;
    std::optional<Matrix> inv_;
};

/// PCA closed form: b = empirical mean, A = U Lambda^(1/2) from the
/// eigendecomposition of the empirical covariance, eigenvalues descending.
inline AffineDecoder pca_fit(const Matrix& data) {
    const std::size_t n = data.rows, d = data.cols;
    if (n <= d) throw fit_error("pca_fit: needs more samples than dimensions");

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += data(i, j);
    for (double& m : mean) m /= static_cast<double>(n);

    Matrix cov(d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double cj = data(i, j) - mean[j];
            for (std::size_t k = j; k < d; ++k)
                cov(j, k) += cj * (data(i, k) - mean[k]);
        }
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = j; k < d; ++k) {
            cov(j, k) /= static_cast<double>(n - 1);
            cov(k, j) = cov(j, k);
        }

    SymmetricEigen eig = symmetric_eigen(cov);
    if (eig.values.back() <= 1e-12 * std::max(eig.values.front(), 1e-300))
        throw fit_error("pca_fit: covariance is numerically rank deficient");

    Matrix a(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) a(i, j) = eig.vectors(i, j) * std::sqrt(eig.values[j]);
    return AffineDecoder(std::move(a), std::move(mean), "pca");
}

/// The 10-D torus data-generating decoder: pairwise polar coordinates
/// phi_j = sigma_phi_j z_j, r_j = 1 + sigma_r_j z_(n+j) mapped to Cartesian
/// pairs, optionally followed by a fixed rotation and a per-coordinate
/// standardization. The Jacobian is analytic.
class TorusDecoder : public DecoderBase<TorusDecoder> {
public:
    TorusDecoder(std::vector<double> sigma_phi, std::vector<double> sigma_r,
                 std::optional<Matrix> rotation = std::nullopt,
                 std::optional<std::pair<std::vector<double>, std::vector<double>>>
                     normalization = std::nullopt,
                 std::string label = "torus")
        : sigma_phi_(std::move(sigma_phi)),
          sigma_r_(std::move(sigma_r)),
          rotation_(std::move(rotation)),
          label_(std::move(label)) {
        if (sigma_phi_.size() != sigma_r_.size())
            throw std::invalid_argument("TorusDecoder: sigma vectors must have equal length");
        const std::size_t d = 2 * sigma_phi_.size();
        if (rotation_ && (rotation_->rows != d || rotation_->cols != d))
            throw std::invalid_argument("TorusDecoder: rotation must be " + std::to_string(d) +
                                        "x" + std::to_string(d));
        if (normalization) {
            offset_ = std::move(normalization->first);
            scale_ = std::move(normalization->second);
            if (offset_.size() != d || scale_.size() != d)
                throw std::invalid_argument("TorusDecoder: normalization size mismatch");
        }
    }

    std::size_t pairs() const { return sigma_phi_.size(); }
    std::size_t latent_dim() const override { return 2 * pairs(); }
    std::size_t data_dim() const override { return 2 * pairs(); }
    std::string name() const override { return label_; }

    template <class S>
    void eval(std::span<const S> z, std::span<S> x) const {
        const std::size_t n = pairs();
        std::vector<S> pre(2 * n, S(0.0));
        for (std::size_t j = 0; j < n; ++j) {
            S phi = sigma_phi_[j] * z[j];
            S r = 1.0 + sigma_r_[j] * z[n + j];
            pre[2 * j] = r * cos(phi);
            pre[2 * j + 1] = r * sin(phi);
        }
        if (rotation_) {
            for (std::size_t i = 0; i < 2 * n; ++i) {
                S acc(0.0);
                for (std::size_t k = 0; k < 2 * n; ++k) acc += (*rotation_)(i, k) * pre[k];
                x[i] = acc;
            }
        } else {
            for (std::size_t i = 0; i < 2 * n; ++i) x[i] = pre[i];
        }
        if (!offset_.empty())
            for (std::size_t i = 0; i < 2 * n; ++i) x[i] = (x[i] - offset_[i]) / scale_[i];
    }

    bool has_analytic_jacobian() const override { return true; }

    /// Column j in the core set touches only rows 2j, 2j+1 (before rotation):
    /// sigma_phi_j (-r sin phi, r cos phi); column n+j gives sigma_r_j (cos, sin).
    Matrix analytic_jacobian(std::span<const double> z) const override {
        const std::size_t n = pairs();
        Matrix jac(2 * n, 2 * n);
        for (std::size_t j = 0; j < n; ++j) {
            double phi = sigma_phi_[j] * z[j];
            double r = 1.0 + sigma_r_[j] * z[n + j];
            double c = std::cos(phi), s = std::sin(phi);
            jac(2 * j, j) = sigma_phi_[j] * (-r * s);
            jac(2 * j + 1, j) = sigma_phi_[j] * (r * c);
            jac(2 * j, n + j) = sigma_r_[j] * c;
            jac(2 * j + 1, n + j) = sigma_r_[j] * s;
        }
        if (rotation_) jac = matmul(*rotation_, jac);
        if (!offset_.empty())
            for (std::size_t i = 0; i < 2 * n; ++i)
                for (std::size_t k = 0; k < 2 * n; ++k) jac(i, k) /= scale_[i];
        return jac;
    }

    /// Exact inverse on the principal branch |phi_j| < pi (amply covered by a
    /// standard-normal prior times the paper's sigma scales).
    bool has_encoder() const override { return true; }
    void encode(std::span<const double> x, std::span<double> z) const override {
        const std::size_t n = pairs();
        std::vector<double> pre(x.begin(), x.end());
        if (!offset_.empty())
            for (std::size_t i = 0; i < 2 * n; ++i) pre[i] = pre[i] * scale_[i] + offset_[i];
        if (rotation_) {
            std::vector<double> tmp(2 * n, 0.0);
            for (std::size_t i = 0; i < 2 * n; ++i)
                for (std::size_t k = 0; k < 2 * n; ++k) tmp[k] += (*rotation_)(i, k) * pre[i];
            pre = std::move(tmp);
        }
        for (std::size_t j = 0; j < n; ++j) {
            double c = pre[2 * j], s = pre[2 * j + 1];
            double r = std::sqrt(c * c + s * s);
            if (r <= 0.0) throw evaluation_error(label_ + ": radius collapsed, cannot encode");
            z[j] = std::atan2(s, c) / sigma_phi_[j];
            z[n + j] = (r - 1.0) / sigma_r_[j];
        }
    }

    const std::vector<double>& sigma_phi() const { return sigma_phi_; }
    const std::vector<double>& sigma_r() const { return sigma_r_; }
    const std::optional<Matrix>& rotation() const { return rotation_; }
    const std::vector<double>& norm_offset() const { return offset_; }
    const std::vector<double>& norm_scale() const { return scale_; }

private:
    std::vector<double> sigma_phi_, sigma_r_;
    std::optional<Matrix> rotation_;
    std::vector<double> offset_, scale_;
    std::string label_;
};

enum class Activation { Tanh, Relu, Softplus, Identity };

inline std::string activation_name(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
        case Activation::Softplus: return "softplus";
        case Activation::Identity: return "identity";
    }
    return "?";
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    if (s == "softplus") return Activation::Softplus;
    if (s == "identity") return Activation::Identity;
    throw format_error("unknown activation '" + s + "'");
}

/// Plain fully connected decoder (e.g. an externally trained VAE decoder used
/// deterministically). Jacobians come from AD.
class MlpDecoder : public DecoderBase<MlpDecoder> {
public:
    struct Layer {
        Matrix weight; // out x in, row-major
        std::vector<double> bias;
    };

    MlpDecoder(std::vector<Layer> layers, Activation act, std::string label = "mlp")
        : layers_(std::move(layers)), act_(act), label_(std::move(label)) {
        if (layers_.empty()) throw std::invalid_argument("MlpDecoder: no layers");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            if (layers_[l].weight.rows != layers_[l].bias.size())
                throw format_error("MlpDecoder: bias/weight shape mismatch in layer " +
                                   std::to_string(l + 1));
            if (l > 0 && layers_[l].weight.cols != layers_[l - 1].weight.rows)
                throw format_error("MlpDecoder: layer " + std::to_string(l + 1) +
                                   " input width does not match previous output");
        }
    }

    std::size_t latent_dim() const override { return layers_.front().weight.cols; }
    std::size_t data_dim() const override { return layers_.back().weight.rows; }
    std::string name() const override { return label_; }

    template <class S>
    void eval(std::span<const S> z, std::span<S> x) const {
        std::vector<S> cur(z.begin(), z.end()), next;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const Layer& layer = layers_[l];
            next.assign(layer.weight.rows, S(0.0));
            for (std::size_t i = 0; i < layer.weight.rows; ++i) {
                S acc(layer.bias[i]);
                for (std::size_t j = 0; j < layer.weight.cols; ++j)
                    acc += layer.weight(i, j) * cur[j];
                next[i] = (l + 1 < layers_.size()) ? activate(acc) : acc;
            }
            cur = std::move(next);
        }
        for (std::size_t i = 0; i < cur.size(); ++i) x[i] = cur[i];
    }

    const std::vector<Layer>& layers() const { return layers_; }
    Activation activation() const { return act_; }

private:
    template <class S>
    S activate(const S& v) const {
        switch (act_) {
            case Activation::Tanh: return tanh(v);
            case Activation::Relu: return value_of(v) > 0.0 ? v : S(0.0);
            case Activation::Softplus: return softplus(v);
            case Activation::Identity: return v;
        }
        return v;
    }

    std::vector<Layer> layers_;
    Activation act_;
    std::string label_;
};

// ---------------------------------------------------------------------------
// Composition wrappers (fixed data-space rotation, latent permutation)
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void decode_as(const Decoder& g, std::span<const S> z, std::span<S> x);

template <>
inline void decode_as<double>(const Decoder& g, std::span<const double> z, std::span<double> x) {
    g.decode_value(z, x);
}
template <>
inline void decode_as<DualChunk>(const Decoder& g, std::span<const DualChunk> z,
                                 std::span<DualChunk> x) {
    g.decode_fwd(z, x);
}
template <>
inline void decode_as<Rev>(const Decoder& g, std::span<const Rev> z, std::span<Rev> x) {
    g.decode_rev(z, x);
}

} // namespace detail

/// h(z) = Q g(z) for a fixed data-space orthogonal Q. Gram volumes of every
/// column set are unchanged, which the metric tests assert.
class RotatedDecoder : public DecoderBase<RotatedDecoder> {
public:
    RotatedDecoder(std::shared_ptr<const Decoder> inner, Matrix q)
        : inner_(std::move(inner)), q_(std::move(q)) {
        if (q_.rows != q_.cols || q_.rows != inner_->data_dim())
            throw std::invalid_argument("RotatedDecoder: rotation shape mismatch");
    }

    std::size_t latent_dim() const override { return inner_->latent_dim(); }
    std::size_t data_dim() const override { return inner_->data_dim(); }
    std::string name() const override { return inner_->name() + "+rotation"; }

    template <class S>
    void eval(std::span<const S> z, std::span<S> x) const {
        std::vector<S> inner_x(inner_->data_dim(), S(0.0));
        detail::decode_as<S>(*inner_, z, inner_x);
        for (std::size_t i = 0; i < q_.rows; ++i) {
            S acc(0.0);
            for (std::size_t k = 0; k < q_.cols; ++k) acc += q_(i, k) * inner_x[k];
            x[i] = acc;
        }
    }

    bool has_analytic_jacobian() const override { return inner_->has_analytic_jacobian(); }
    Matrix analytic_jacobian(std::span<const double> z) const override {
        return matmul(q_, inner_->analytic_jacobian(z));
    }

    bool has_encoder() const override { return inner_->has_encoder(); }
    void encode(std::span<const double> x, std::span<double> z) const override {
        std::vector<double> unrot(q_.rows, 0.0);
        for (std::size_t i = 0; i < q_.rows; ++i)
            for (std::size_t k = 0; k < q_.cols; ++k) unrot[k] += q_(i, k) * x[i];
        inner_->encode(unrot, z);
    }

private:
    std::shared_ptr<const Decoder> inner_;
    Matrix q_;
};

/// h(z) = g(w) with w_i = z_perm[i]; column perm[i] of J_h is column i of J_g.
class LatentPermutedDecoder : public DecoderBase<LatentPermutedDecoder> {
public:
    LatentPermutedDecoder(std::shared_ptr<const Decoder> inner, std::vector<std::size_t> perm)
        : inner_(std::move(inner)), perm_(std::move(perm)) {
        if (perm_.size() != inner_->latent_dim())
            throw std::invalid_argument("LatentPermutedDecoder: permutation length mismatch");
        std::vector<bool> seen(perm_.size(), false);
        for (std::size_t p : perm_) {
            if (p >= perm_.size() || seen[p])
                throw std::invalid_argument("LatentPermutedDecoder: not a permutation");
            seen[p] = true;
        }
    }

    std::size_t latent_dim() const override { return inner_->latent_dim(); }
    std::size_t data_dim() const override { return inner_->data_dim(); }
    std::string name() const override { return inner_->name() + "+permutation"; }

    template <class S>
    void eval(std::span<const S> z, std::span<S> x) const {
        std::vector<S> w(z.size(), S(0.0));
        for (std::size_t i = 0; i < perm_.size(); ++i) w[i] = z[perm_[i]];
        detail::decode_as<S>(*inner_, w, x);
    }

    bool has_analytic_jacobian() const override { return inner_->has_analytic_jacobian(); }
    Matrix analytic_jacobian(std::span<const double> z) const override {
        std::vector<double> w(z.size());
        for (std::size_t i = 0; i < perm_.size(); ++i) w[i] = z[perm_[i]];
        Matrix inner_jac = inner_->analytic_jacobian(w);
        Matrix jac(inner_jac.rows, inner_jac.cols);
        for (std::size_t i = 0; i < perm_.size(); ++i)
            for (std::size_t r = 0; r < jac.rows; ++r) jac(r, perm_[i]) = inner_jac(r, i);
        return jac;
    }

    bool has_encoder() const override { return inner_->has_encoder(); }
    void encode(std::span<const double> x, std::span<double> z) const override {
        std::vector<double> w(z.size());
        inner_->encode(x, w);
        for (std::size_t i = 0; i < perm_.size(); ++i) z[perm_[i]] = w[i];
    }

private:
    std::shared_ptr<const Decoder> inner_;
    std::vector<std::size_t> perm_;
};

} // namespace manent
