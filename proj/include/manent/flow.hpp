#pragma once

// Invertible normalizing-flow building blocks: rational-quadratic-spline
// couplings with MLP conditioners, Householder orthogonal layers and fixed
// permutations, stacked into an encoder/decoder pair with analytic
// log-determinants. All evaluation code is generic over the scalar, so the
// same stack runs on doubles, forward tangents, tape variables and
// forward-over-reverse duals.

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "manent/autodiff.hpp"
#include "manent/decoder.hpp"
#include "manent/errors.hpp"
#include "manent/rng.hpp"

namespace manent {

// ---------------------------------------------------------------------------
// Rational quadratic splines (Durkan et al. parameterization)
// ---------------------------------------------------------------------------

struct RqsConfig {
    int bins = 4;
    double tail_bound = 4.0;  // identity-linear outside [-B, B]
    double min_bin = 1e-3;    // floor on bin widths and heights
    double min_derivative = 1e-3;

    /// Raw (unconstrained) parameters per transformed coordinate:
    /// K widths, K heights, K-1 interior derivatives.
    std::size_t params_per_coord() const { return 3 * static_cast<std::size_t>(bins) - 1; }
};

namespace detail {

/// softplus offset that makes a zero raw parameter map to derivative one.
inline double rqs_derivative_offset(const RqsConfig& cfg) {
    return std::log(std::expm1(1.0 - cfg.min_derivative));
}

/// Knot positions/heights from raw widths via a stabilized softmax with the
/// minimum bin size folded in; both axes run from -B to B.
template <class S>
void rqs_knots(const RqsConfig& cfg, std::span<const S> raw, std::vector<S>& xs,
               std::vector<S>& ys, std::vector<S>& ds) {
    const int k = cfg.bins;
    const double span = 2.0 * cfg.tail_bound;

    auto cumulative = [&](std::span<const S> part, std::vector<S>& out) {
        double mx = value_of(part[0]);
        for (int i = 1; i < k; ++i) mx = std::max(mx, value_of(part[i]));
        std::vector<S> e(k, S(0.0));
        S denom(0.0);
        for (int i = 0; i < k; ++i) {
            e[i] = exp(part[i] - mx);
            denom += e[i];
        }
        S scale = (span - k * cfg.min_bin) / denom;
        out.assign(k + 1, S(0.0));
        out[0] = S(-cfg.tail_bound);
        for (int i = 0; i < k; ++i) out[i + 1] = out[i] + (cfg.min_bin + e[i] * scale);
    };
    cumulative(raw.subspan(0, k), xs);
    cumulative(raw.subspan(k, k), ys);

    const double c0 = rqs_derivative_offset(cfg);
    ds.assign(k + 1, S(1.0));
    for (int i = 0; i + 1 < k; ++i)
        ds[i + 1] = cfg.min_derivative + softplus(raw[2 * k + i] + c0);
}

template <class S>
int rqs_find_bin(const std::vector<S>& knots, double v) {
    int k = 0;
    const int bins = static_cast<int>(knots.size()) - 1;
    while (k + 1 < bins && v >= value_of(knots[k + 1])) ++k;
    return k;
}

/// y(x) and log dy/dx inside the interval.
template <class S>
S rqs_forward_core(const S& x, const std::vector<S>& xs, const std::vector<S>& ys,
                   const std::vector<S>& ds, S& log_deriv) {
    int k = rqs_find_bin(xs, value_of(x));
    S w = xs[k + 1] - xs[k];
    S h = ys[k + 1] - ys[k];
    S slope = h / w;
    S xi = (x - xs[k]) / w;
    S one_m = 1.0 - xi;
    S t = xi * one_m;
    S mid = ds[k + 1] + ds[k] - 2.0 * slope;
    S denom = slope + mid * t;
    S y = ys[k] + h * (slope * xi * xi + ds[k] * t) / denom;
    S deriv_num = slope * slope * (ds[k + 1] * xi * xi + 2.0 * slope * t + ds[k] * one_m * one_m);
    log_deriv = log(deriv_num) - 2.0 * log(denom);
    return y;
}

/// x(y) by solving the per-bin quadratic; log_deriv is the forward log dy/dx
/// evaluated at the recovered x.
template <class S>
S rqs_inverse_core(const S& y, const std::vector<S>& xs, const std::vector<S>& ys,
                   const std::vector<S>& ds, S& log_deriv) {
    int k = rqs_find_bin(ys, value_of(y));
    S w = xs[k + 1] - xs[k];
    S h = ys[k + 1] - ys[k];
    S slope = h / w;
    S mid = ds[k + 1] + ds[k] - 2.0 * slope;
    S dy = y - ys[k];
    S a = h * (slope - ds[k]) + dy * mid;
    S b = h * ds[k] - dy * mid;
    S c = -slope * dy;
    S xi = 2.0 * c / (-b - sqrt(b * b - 4.0 * a * c));
    S x = xs[k] + xi * w;
    S one_m = 1.0 - xi;
    S t = xi * one_m;
    S denom = slope + mid * t;
    S deriv_num = slope * slope * (ds[k + 1] * xi * xi + 2.0 * slope * t + ds[k] * one_m * one_m);
    log_deriv = log(deriv_num) - 2.0 * log(denom);
    return x;
}

} // namespace detail

/// One spline: config plus raw parameters for a single coordinate.
struct RqsSpline {
    RqsConfig config;
    std::vector<double> raw;

    static RqsSpline identity(RqsConfig cfg = {}) {
        return {cfg, std::vector<double>(cfg.params_per_coord(), 0.0)};
    }

    void validate() const {
        if (raw.size() != config.params_per_coord())
            throw std::invalid_argument("RqsSpline: raw parameter count mismatch");
        for (double v : raw)
            if (!std::isfinite(v)) throw evaluation_error("RqsSpline: non-finite parameter");
    }
};

/// (y, log dy/dx). Outside [-B, B] the transform is the identity with zero
/// log-derivative.
inline std::pair<double, double> rqs_forward(const RqsSpline& spline, double x) {
    spline.validate();
    if (std::abs(x) > spline.config.tail_bound) return {x, 0.0};
    std::vector<double> xs, ys, ds;
    detail::rqs_knots<double>(spline.config, spline.raw, xs, ys, ds);
    double log_deriv = 0.0;
    double y = detail::rqs_forward_core(x, xs, ys, ds, log_deriv);
    return {y, log_deriv};
}

/// (x, log dx/dy); the log-derivative is the negated forward one at x.
inline std::pair<double, double> rqs_inverse(const RqsSpline& spline, double y) {
    spline.validate();
    if (std::abs(y) > spline.config.tail_bound) return {y, 0.0};
    std::vector<double> xs, ys, ds;
    detail::rqs_knots<double>(spline.config, spline.raw, xs, ys, ds);
    double fwd_log_deriv = 0.0;
    double x = detail::rqs_inverse_core(y, xs, ys, ds, fwd_log_deriv);
    return {x, -fwd_log_deriv};
}

// ---------------------------------------------------------------------------
// Parameter access
// ---------------------------------------------------------------------------

/// Materializes stored parameters as constants of scalar S.
template <class S>
struct ConstParams {
    const double* p;
    S operator()(std::size_t i) const { return S(p[i]); }
};

/// Materializes parameters as tape leaves (leaf i lives at tape node base+i).
struct TapeParams {
    const double* p;
    Tape* tape;
    std::int32_t base;
    Rev operator()(std::size_t i) const {
        return Rev(p[i], base + static_cast<std::int32_t>(i), tape);
    }
};

/// Parameters as forward duals whose primal is a tape leaf (zero tangent).
template <int W>
struct TapeDualParams {
    TapeParams inner;
    Dual<Rev, W> operator()(std::size_t i) const { return Dual<Rev, W>(inner(i)); }
};

// ---------------------------------------------------------------------------
// Flow model
// ---------------------------------------------------------------------------

struct FlowArchitecture {
    std::size_t dim = 2;
    std::size_t blocks = 8;
    RqsConfig spline;
    std::vector<std::size_t> subnet_hidden{64, 64};
    bool final_orthogonal = true;
    std::uint64_t init_seed = 0;
};

/// Invertible layer stack. encode maps data to latent accumulating
/// log|df/dx|; decode is the exact inverse. An untrained model is the
/// identity map (zero conditioner output layers, paired Householder vectors).
class FlowModel {
public:
    struct CouplingDesc {
        std::vector<std::size_t> cond, trans;
        std::vector<std::size_t> net_widths; // conditioner: cond -> ... -> trans * ppc
        std::size_t param_offset = 0;
        std::size_t param_count = 0;
    };
    struct OrthogonalDesc {
        std::size_t reflectors = 0;
        std::size_t param_offset = 0; // reflectors * dim doubles
    };
    struct PermutationDesc {
        std::vector<std::size_t> perm; // encode: y[i] = x[perm[i]]
    };
    struct Layer {
        enum class Kind : std::uint8_t { Coupling = 0, Orthogonal = 1, Permutation = 2 };
        Kind kind;
        CouplingDesc coupling;
        OrthogonalDesc orthogonal;
        PermutationDesc permutation;
    };

    FlowModel(std::size_t dim, RqsConfig spline_cfg, std::vector<Layer> layers,
              std::vector<double> params)
        : dim_(dim), spline_(spline_cfg), layers_(std::move(layers)), params_(std::move(params)) {}

    std::size_t dim() const { return dim_; }
    const RqsConfig& spline_config() const { return spline_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    template <class S, class PG>
    void encode_generic(std::span<const S> x, std::span<S> z, S& log_det, const PG& pg) const {
        std::vector<S> cur(x.begin(), x.end());
        log_det = S(0.0);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            apply_layer<true>(layers_[l], cur, log_det, pg);
            check_finite(cur, l);
        }
        for (std::size_t i = 0; i < dim_; ++i) z[i] = cur[i];
    }

    /// log_det accumulates log|dg/dz| = -log|df/dx| at the matching point.
    template <class S, class PG>
    void decode_generic(std::span<const S> z, std::span<S> x, S& log_det, const PG& pg) const {
        std::vector<S> cur(z.begin(), z.end());
        log_det = S(0.0);
        for (std::size_t l = layers_.size(); l-- > 0;) {
            apply_layer<false>(layers_[l], cur, log_det, pg);
            check_finite(cur, l);
        }
        for (std::size_t i = 0; i < dim_; ++i) x[i] = cur[i];
    }

    std::pair<std::vector<double>, double> encode_with_logdet(std::span<const double> x) const {
        check_input(x);
        std::vector<double> z(dim_);
        double ld = 0.0;
        encode_generic<double>(x, z, ld, ConstParams<double>{params_.data()});
        for (double v : z)
            if (!std::isfinite(v))
                throw evaluation_error("flow encode produced a non-finite value");
        return {std::move(z), ld};
    }

    std::pair<std::vector<double>, double> decode_with_logdet(std::span<const double> z) const {
        check_input(z);
        std::vector<double> x(dim_);
        double ld = 0.0;
        decode_generic<double>(z, x, ld, ConstParams<double>{params_.data()});
        for (double v : x)
            if (!std::isfinite(v))
                throw evaluation_error("flow decode produced a non-finite value");
        return {std::move(x), ld};
    }

    std::vector<double> decode(std::span<const double> z) const {
        return decode_with_logdet(z).first;
    }

    /// -log q(x) up to the D/2 log 2pi constant: 0.5 |f(x)|^2 - log|df/dx|.
    double nll(std::span<const double> x) const {
        auto [z, ld] = encode_with_logdet(x);
        double sq = 0.0;
        for (double v : z) sq += v * v;
        return 0.5 * sq - ld;
    }

private:
    void check_input(std::span<const double> v) const {
        if (v.size() != dim_)
            throw std::invalid_argument("flow: input dimension mismatch");
        for (double u : v)
            if (!std::isfinite(u)) throw std::invalid_argument("flow: non-finite input");
    }

    template <class S>
    void check_finite(const std::vector<S>& cur, std::size_t layer_index) const {
        for (const S& v : cur)
            if (!std::isfinite(value_of(v))) {
                const char* kind = "?";
                switch (layers_[layer_index].kind) {
                    case Layer::Kind::Coupling: kind = "coupling"; break;
                    case Layer::Kind::Orthogonal: kind = "orthogonal"; break;
                    case Layer::Kind::Permutation: kind = "permutation"; break;
                }
                throw evaluation_error("flow: non-finite value after layer " +
                                       std::to_string(layer_index + 1) + " (" + kind + ")");
            }
    }

    template <bool Forward, class S, class PG>
    void apply_layer(const Layer& layer, std::vector<S>& cur, S& log_det, const PG& pg) const {
        switch (layer.kind) {
            case Layer::Kind::Coupling:
                apply_coupling<Forward>(layer.coupling, cur, log_det, pg);
                break;
            case Layer::Kind::Orthogonal:
                apply_orthogonal<Forward>(layer.orthogonal, cur, pg);
                break;
            case Layer::Kind::Permutation: {
                const auto& perm = layer.permutation.perm;
                std::vector<S> next(cur.size(), S(0.0));
                if constexpr (Forward)
                    for (std::size_t i = 0; i < perm.size(); ++i) next[i] = cur[perm[i]];
                else
                    for (std::size_t i = 0; i < perm.size(); ++i) next[perm[i]] = cur[i];
                cur = std::move(next);
                break;
            }
        }
    }

    template <bool Forward, class S, class PG>
    void apply_coupling(const CouplingDesc& c, std::vector<S>& cur, S& log_det,
                        const PG& pg) const {
        std::vector<S> cond(c.cond.size(), S(0.0));
        for (std::size_t i = 0; i < c.cond.size(); ++i) cond[i] = cur[c.cond[i]];

        std::vector<S> raw;
        conditioner(c, cond, raw, pg);

        const std::size_t ppc = spline_.params_per_coord();
        std::vector<S> xs, ys, ds;
        for (std::size_t t = 0; t < c.trans.size(); ++t) {
            std::span<const S> coord_raw(raw.data() + t * ppc, ppc);
            S& value = cur[c.trans[t]];
            if (std::abs(value_of(value)) > spline_.tail_bound) continue; // identity tails
            detail::rqs_knots<S>(spline_, coord_raw, xs, ys, ds);
            S ld(0.0);
            if constexpr (Forward) {
                value = detail::rqs_forward_core(value, xs, ys, ds, ld);
                log_det += ld;
            } else {
                value = detail::rqs_inverse_core(value, xs, ys, ds, ld);
                log_det -= ld;
            }
        }
    }

    template <class S, class PG>
    void conditioner(const CouplingDesc& c, const std::vector<S>& in, std::vector<S>& out,
                     const PG& pg) const {
        std::size_t p = c.param_offset;
        std::vector<S> cur = in, next;
        for (std::size_t l = 0; l + 1 < c.net_widths.size(); ++l) {
            const std::size_t rows = c.net_widths[l + 1], cols = c.net_widths[l];
            next.assign(rows, S(0.0));
            for (std::size_t i = 0; i < rows; ++i) {
                S acc = pg(p + rows * cols + i); // bias
                for (std::size_t j = 0; j < cols; ++j) acc += pg(p + i * cols + j) * cur[j];
                next[i] = (l + 2 < c.net_widths.size()) ? tanh(acc) : acc;
            }
            p += rows * cols + rows;
            cur = std::move(next);
        }
        out = std::move(cur);
    }

    /// Product of Householder reflections; encode applies H_(n-1)...H_0,
    /// decode the transposed order. Volume preserving.
    template <bool Forward, class S, class PG>
    void apply_orthogonal(const OrthogonalDesc& o, std::vector<S>& cur, const PG& pg) const {
        auto reflect = [&](std::size_t r) {
            const std::size_t base = o.param_offset + r * dim_;
            S vnorm2(0.0), dot(0.0);
            for (std::size_t i = 0; i < dim_; ++i) {
                S vi = pg(base + i);
                vnorm2 += vi * vi;
                dot += vi * cur[i];
            }
            S f = 2.0 * dot / vnorm2;
            for (std::size_t i = 0; i < dim_; ++i) cur[i] -= f * pg(base + i);
        };
        if constexpr (Forward)
            for (std::size_t r = 0; r < o.reflectors; ++r) reflect(r);
        else
            for (std::size_t r = o.reflectors; r-- > 0;) reflect(r);
    }

    std::size_t dim_;
    RqsConfig spline_;
    std::vector<Layer> layers_;
    std::vector<double> params_;
};

/// Builds the block stack: per block one coupling (alternating halves) and a
/// fixed seeded permutation, an unshuffle that cancels the accumulated
/// permutation after the last coupling, then one final orthogonal rotation
/// before the latent space. Conditioner output layers start at zero and the
/// Householder vectors come in identical pairs, so a fresh model is the
/// identity map.
inline FlowModel make_flow(const FlowArchitecture& arch) {
    if (arch.dim < 2) throw std::invalid_argument("make_flow: needs dim >= 2");
    NormalSampler rng(arch.init_seed);
    std::vector<FlowModel::Layer> layers;
    std::vector<double> params;

    const std::size_t half = arch.dim / 2;
    const std::size_t ppc = arch.spline.params_per_coord();

    // total(i): index in the original input feeding latent slot i so far
    std::vector<std::size_t> total(arch.dim);
    for (std::size_t i = 0; i < arch.dim; ++i) total[i] = i;

    for (std::size_t b = 0; b < arch.blocks; ++b) {
        FlowModel::Layer layer;
        layer.kind = FlowModel::Layer::Kind::Coupling;
        FlowModel::CouplingDesc& c = layer.coupling;
        for (std::size_t i = 0; i < arch.dim; ++i) {
            bool first_half = i < half;
            if (first_half == (b % 2 == 0))
                c.cond.push_back(i);
            else
                c.trans.push_back(i);
        }
        c.net_widths.push_back(c.cond.size());
        for (std::size_t h : arch.subnet_hidden) c.net_widths.push_back(h);
        c.net_widths.push_back(c.trans.size() * ppc);

        c.param_offset = params.size();
        for (std::size_t l = 0; l + 1 < c.net_widths.size(); ++l) {
            const std::size_t rows = c.net_widths[l + 1], cols = c.net_widths[l];
            const bool last = l + 2 == c.net_widths.size();
            for (std::size_t k = 0; k < rows * cols; ++k)
                params.push_back(last ? 0.0 : rng() / std::sqrt(static_cast<double>(cols)));
            for (std::size_t k = 0; k < rows; ++k) params.push_back(0.0);
        }
        c.param_count = params.size() - c.param_offset;
        layers.push_back(std::move(layer));

        if (b + 1 < arch.blocks) {
            FlowModel::Layer pl;
            pl.kind = FlowModel::Layer::Kind::Permutation;
            pl.permutation.perm = shuffled_indices(arch.dim, arch.init_seed ^ (0xabcd00ull + b));
            std::vector<std::size_t> next(arch.dim);
            for (std::size_t i = 0; i < arch.dim; ++i) next[i] = total[pl.permutation.perm[i]];
            total = next;
            layers.push_back(std::move(pl));
        }
    }

    bool shuffled = false;
    for (std::size_t i = 0; i < arch.dim; ++i) shuffled |= total[i] != i;
    if (shuffled) {
        FlowModel::Layer unshuffle;
        unshuffle.kind = FlowModel::Layer::Kind::Permutation;
        unshuffle.permutation.perm.resize(arch.dim);
        for (std::size_t i = 0; i < arch.dim; ++i) unshuffle.permutation.perm[total[i]] = i;
        layers.push_back(std::move(unshuffle));
    }

    if (arch.final_orthogonal) {
        FlowModel::Layer ol;
        ol.kind = FlowModel::Layer::Kind::Orthogonal;
        ol.orthogonal.reflectors = 2 * ((arch.dim + 1) / 2);
        ol.orthogonal.param_offset = params.size();
        for (std::size_t r = 0; r < ol.orthogonal.reflectors; r += 2) {
            std::vector<double> v(arch.dim);
            double n2 = 0.0;
            for (auto& w : v) {
                w = rng();
                n2 += w * w;
            }
            for (auto& w : v) w /= std::sqrt(n2);
            for (int rep = 0; rep < 2; ++rep)
                for (double w : v) params.push_back(w);
        }
        layers.push_back(std::move(ol));
    }

    return FlowModel(arch.dim, arch.spline, std::move(layers), std::move(params));
}

// ---------------------------------------------------------------------------
// Decoder bridge
// ---------------------------------------------------------------------------

/// Presents a flow (optionally composed with the training-time per-coordinate
/// standardization) as a Decoder in the original data space:
/// decode(z) = g_flow(z) * std + mean, encode(x) = f_flow((x - mean) / std).
class FlowDecoder : public DecoderBase<FlowDecoder> {
public:
    FlowDecoder(std::shared_ptr<const FlowModel> model, std::vector<double> data_mean = {},
                std::vector<double> data_std = {}, std::string label = "flow")
        : model_(std::move(model)), mean_(std::move(data_mean)), std_(std::move(data_std)),
          label_(std::move(label)) {
        if (!mean_.empty() && (mean_.size() != model_->dim() || std_.size() != model_->dim()))
            throw std::invalid_argument("FlowDecoder: standardization size mismatch");
    }

    std::size_t latent_dim() const override { return model_->dim(); }
    std::size_t data_dim() const override { return model_->dim(); }
    std::string name() const override { return label_; }

    template <class S>
    void eval(std::span<const S> z, std::span<S> x) const {
        S ld(0.0);
        model_->decode_generic<S>(z, x, ld, ConstParams<S>{model_->params().data()});
        if (!mean_.empty())
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] * std_[i] + mean_[i];
    }

    bool has_encoder() const override { return true; }
    void encode(std::span<const double> x, std::span<double> z) const override {
        std::vector<double> standardized(x.begin(), x.end());
        if (!mean_.empty())
            for (std::size_t i = 0; i < standardized.size(); ++i)
                standardized[i] = (standardized[i] - mean_[i]) / std_[i];
        auto [latent, ld] = model_->encode_with_logdet(standardized);
        for (std::size_t i = 0; i < latent.size(); ++i) z[i] = latent[i];
    }

    const FlowModel& model() const { return *model_; }
    const std::vector<double>& data_mean() const { return mean_; }
    const std::vector<double>& data_std() const { return std_; }

private:
    std::shared_ptr<const FlowModel> model_;
    std::vector<double> mean_, std_;
    std::string label_;
};

} // namespace manent
