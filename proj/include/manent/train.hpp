#pragma once

// Maximum-likelihood flow training with optional total-correlation and
// reconstruction regularizers. Gradients come from the reverse tape; the MTC
// term needs decoder Jacobian columns at z = f(x), which are propagated as
// forward duals whose components are tape variables (forward-over-reverse),
// so the column volumes stay differentiable wrt the parameters.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "manent/autodiff.hpp"
#include "manent/errors.hpp"
#include "manent/flow.hpp"
#include "manent/indexset.hpp"
#include "manent/linalg.hpp"
#include "manent/rng.hpp"

namespace manent {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m, v;
    std::size_t t = 0;
    std::size_t rejected = 0;
};

/// Bias-corrected Adam update. A non-finite gradient rejects the whole step
/// (parameters unchanged, rejection counted).
inline void adam_step(std::vector<double>& params, const std::vector<double>& grads,
                      AdamState& state, const AdamConfig& cfg) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: gradient size mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    for (double g : grads)
        if (!std::isfinite(g)) {
            ++state.rejected;
            return;
        }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class LossMode { Ml, MlMtc, MlRec };

inline std::string loss_mode_name(LossMode m) {
    switch (m) {
        case LossMode::Ml: return "ml";
        case LossMode::MlMtc: return "ml_mtc";
        case LossMode::MlRec: return "ml_rec";
    }
    return "?";
}

inline LossMode loss_mode_from_name(const std::string& s) {
    if (s == "ml") return LossMode::Ml;
    if (s == "ml_mtc") return LossMode::MlMtc;
    if (s == "ml_rec") return LossMode::MlRec;
    throw format_error("unknown loss mode '" + s + "'");
}

namespace detail {

template <class PG, class S, int W>
struct LiftParams {
    const PG* pg;
    Dual<S, W> operator()(std::size_t i) const { return Dual<S, W>((*pg)(i)); }
};

/// 0.5 |f(x)|^2 - log|df/dx| for one sample; z and the encoder log-det are
/// returned for reuse by the regularizers.
template <class S, class PG>
S sample_nll(const FlowModel& model, std::span<const double> x, const PG& pg,
             std::vector<S>& z_out, S& enc_logdet_out) {
    const std::size_t d = model.dim();
    std::vector<S> x_s(d, S(0.0));
    for (std::size_t i = 0; i < d; ++i) x_s[i] = S(x[i]);
    z_out.assign(d, S(0.0));
    model.encode_generic<S>(x_s, z_out, enc_logdet_out, pg);
    S sq(0.0);
    for (const S& v : z_out) sq += v * v;
    return 0.5 * sq - enc_logdet_out;
}

template <int W, class S, class PG>
void decoder_jacobian_duals(const FlowModel& model, const std::vector<S>& z, Mat<S>& jac,
                            const PG& pg) {
    using DS = Dual<S, W>;
    const std::size_t d = model.dim();
    LiftParams<PG, S, W> lifted{&pg};
    std::vector<DS> in(d), out(d);
    for (std::size_t base = 0; base < d; base += W) {
        const std::size_t width = std::min<std::size_t>(W, d - base);
        for (std::size_t i = 0; i < d; ++i) in[i] = DS(z[i]);
        for (std::size_t k = 0; k < width; ++k) in[base + k].d[k] = S(1.0);
        DS dual_ld(S(0.0));
        model.decode_generic<DS>(in, out, dual_ld, lifted);
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t k = 0; k < width; ++k) jac(r, base + k) = out[r].d[k];
    }
}

/// sum_set log|J_S(z)| - log|J(z)| with the decoder Jacobian assembled from
/// chunked forward tangents at z and the -log|J| term taken from the analytic
/// encoder log-det. When training runs on standardized data, row_scale (the
/// per-coordinate data stds) rescales the Jacobian so the integrand matches
/// the metric in the original data space; MTC is not invariant under
/// per-coordinate scaling. The chunk width adapts to the latent dimension so
/// narrow models do not drag dead tangent slots through the tape.
template <class S, class PG>
S sample_mtc(const FlowModel& model, const std::vector<S>& z, const S& enc_logdet,
             const Partition& partition, const PG& pg,
             std::span<const double> row_scale = {}) {
    const std::size_t d = model.dim();
    Mat<S> jac(d, d);
    if (d <= 2)
        decoder_jacobian_duals<2>(model, z, jac, pg);
    else if (d <= 4)
        decoder_jacobian_duals<4>(model, z, jac, pg);
    else
        decoder_jacobian_duals<kJacobianChunk>(model, z, jac, pg);

    double log_scale = 0.0;
    if (!row_scale.empty()) {
        for (std::size_t r = 0; r < d; ++r) {
            for (std::size_t cc = 0; cc < d; ++cc) jac(r, cc) = jac(r, cc) * row_scale[r];
            log_scale += std::log(row_scale[r]);
        }
    }

    S total(0.0);
    for (const IndexSet& set : partition) {
        if (set.size() == 1) {
            S sq(0.0);
            for (std::size_t r = 0; r < d; ++r) sq += jac(r, set[0]) * jac(r, set[0]);
            total += 0.5 * log(sq);
        } else {
            total += gram_log_volume(jac.columns(set.indices()));
        }
    }
    // log|diag(s) J_g(z)| = sum log s - log|J_f(x)|
    return total + (enc_logdet - log_scale);
}

/// 0.5 |x - g([z_C, 0])|^2 with one extra decoder pass.
template <class S, class PG>
S sample_rec(const FlowModel& model, std::span<const double> x, const std::vector<S>& z,
             const IndexSet& core, const PG& pg) {
    const std::size_t d = model.dim();
    std::vector<S> masked(d, S(0.0));
    for (std::size_t i : core) masked[i] = z[i];
    std::vector<S> x_rec(d, S(0.0));
    S ld(0.0);
    model.decode_generic<S>(masked, x_rec, ld, pg);
    S err(0.0);
    for (std::size_t i = 0; i < d; ++i) {
        S diff = x_rec[i] - x[i];
        err += diff * diff;
    }
    return 0.5 * err;
}

template <class S, class PG>
S sample_loss(const FlowModel& model, std::span<const double> x, LossMode mode, double lambda,
              const Partition& partition, const IndexSet& core, const PG& pg,
              std::span<const double> row_scale, S* nll_part, S* reg_part) {
    std::vector<S> z;
    S enc_logdet(0.0);
    S nll = sample_nll<S>(model, x, pg, z, enc_logdet);
    S reg(0.0);
    if (mode == LossMode::MlMtc)
        reg = sample_mtc<S>(model, z, enc_logdet, partition, pg, row_scale);
    else if (mode == LossMode::MlRec)
        reg = sample_rec<S>(model, x, z, core, pg);
    if (nll_part) *nll_part = nll;
    if (reg_part) *reg_part = reg;
    return nll + lambda * reg;
}

} // namespace detail

/// Mean 0.5|f(x)|^2 - log|df/dx| over the batch rows (the D/2 log 2pi
/// constant is deliberately omitted).
inline double nll_loss(const FlowModel& model, const Matrix& x_batch) {
    if (x_batch.rows == 0) throw std::invalid_argument("nll_loss: empty batch");
    ConstParams<double> pg{model.params().data()};
    double total = 0.0;
    for (std::size_t n = 0; n < x_batch.rows; ++n) {
        std::vector<double> z;
        double ld = 0.0;
        double nll = detail::sample_nll<double>(
            model, std::span<const double>(&x_batch(n, 0), x_batch.cols), pg, z, ld);
        if (!std::isfinite(nll))
            throw evaluation_error("nll_loss: non-finite loss at batch index " +
                                   std::to_string(n));
        total += nll;
    }
    return total / static_cast<double>(x_batch.rows);
}

/// Mean per-sample manifold-total-correlation integrand at z = f(x).
/// row_scale carries the training-time data standardization so the value
/// agrees with the metric in the original data space.
inline double mtc_regularizer(const FlowModel& model, const Matrix& x_batch,
                              const Partition& partition,
                              std::span<const double> row_scale = {}) {
    if (x_batch.rows == 0) throw std::invalid_argument("mtc_regularizer: empty batch");
    ConstParams<double> pg{model.params().data()};
    double total = 0.0;
    std::size_t skipped = 0;
    for (std::size_t n = 0; n < x_batch.rows; ++n) {
        std::vector<double> z;
        double ld = 0.0;
        detail::sample_nll<double>(model, std::span<const double>(&x_batch(n, 0), x_batch.cols),
                                   pg, z, ld);
        try {
            total += detail::sample_mtc<double>(model, z, ld, partition, pg, row_scale);
        } catch (const degenerate_jacobian_error&) {
            ++skipped;
        }
    }
    if (skipped == x_batch.rows)
        throw degenerate_jacobian_error("mtc_regularizer: every sample degenerate", 0);
    return total / static_cast<double>(x_batch.rows - skipped);
}

/// Mean 0.5 |x - g([z_C = f_C(x), 0])|^2.
inline double reconstruction_loss(const FlowModel& model, const Matrix& x_batch,
                                  const IndexSet& core) {
    if (x_batch.rows == 0) throw std::invalid_argument("reconstruction_loss: empty batch");
    if (core.empty() || core.size() >= model.dim())
        throw std::invalid_argument("reconstruction_loss: core must be a nonempty proper subset");
    ConstParams<double> pg{model.params().data()};
    double total = 0.0;
    for (std::size_t n = 0; n < x_batch.rows; ++n) {
        std::vector<double> z;
        double ld = 0.0;
        detail::sample_nll<double>(model, std::span<const double>(&x_batch(n, 0), x_batch.cols),
                                   pg, z, ld);
        total += detail::sample_rec<double>(
            model, std::span<const double>(&x_batch(n, 0), x_batch.cols), z, core, pg);
    }
    return total / static_cast<double>(x_batch.rows);
}

struct BatchGradient {
    double loss = 0.0;
    double nll = 0.0;
    double reg = 0.0;
    std::vector<double> grad;
};

/// Mean loss and its gradient over the batch. Each sample is recorded on the
/// tape, swept backward and truncated away, so memory stays at
/// one-sample scale.
inline BatchGradient batch_loss_and_grad(const FlowModel& model, const Matrix& x_batch,
                                         LossMode mode, double lambda,
                                         const Partition& partition, const IndexSet& core,
                                         Tape& tape, std::span<const double> row_scale = {}) {
    const std::size_t n_params = model.params().size();
    const double inv_n = 1.0 / static_cast<double>(x_batch.rows);

    tape.clear();
    for (std::size_t i = 0; i < n_params; ++i) tape.leaf();
    TapeParams pg{model.params().data(), &tape, 0};

    BatchGradient out;
    std::vector<double> adj(n_params, 0.0);
    for (std::size_t n = 0; n < x_batch.rows; ++n) {
        Rev nll_part(0.0), reg_part(0.0);
        Rev loss = detail::sample_loss<Rev>(
            model, std::span<const double>(&x_batch(n, 0), x_batch.cols), mode, lambda,
            partition, core, pg, row_scale, &nll_part, &reg_part);
        if (!std::isfinite(loss.v))
            throw evaluation_error("training loss is non-finite at batch index " +
                                   std::to_string(n));
        out.loss += loss.v * inv_n;
        out.nll += nll_part.v * inv_n;
        out.reg += reg_part.v * inv_n;
        tape.backward_into(loss.ix, adj, n_params); // leaf adjoints accumulate
        tape.truncate(n_params);
    }
    out.grad.assign(n_params, 0.0);
    for (std::size_t i = 0; i < n_params; ++i) out.grad[i] = adj[i] * inv_n;
    return out;
}

/// Plain value of the training objective (used by the finite-difference
/// gradient checks).
inline double batch_loss_value(const FlowModel& model, const Matrix& x_batch, LossMode mode,
                               double lambda, const Partition& partition, const IndexSet& core,
                               std::span<const double> row_scale = {}) {
    ConstParams<double> pg{model.params().data()};
    double total = 0.0;
    for (std::size_t n = 0; n < x_batch.rows; ++n)
        total += detail::sample_loss<double>(
            model, std::span<const double>(&x_batch(n, 0), x_batch.cols), mode, lambda,
            partition, core, pg, row_scale, nullptr, nullptr);
    return total / static_cast<double>(x_batch.rows);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    FlowArchitecture arch;
    LossMode mode = LossMode::Ml;
    double lambda = 1.0;
    std::vector<std::size_t> core; // 0-based core set for ml_rec
    AdamConfig adam;
    std::size_t batch_size = 256;
    std::size_t iterations = 3000;
    /// Plain-ML iterations before the regularizer switches on; the density
    /// has to fit before its Jacobian geometry is worth shaping.
    std::size_t warmup_iterations = 0;
    /// Batch size once the regularizer is active (0: same as batch_size).
    std::size_t regularized_batch_size = 0;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every_epochs = 0; // 0: only the final state
    double grad_clip = 10.0;
    bool cosine_decay = true;
    bool standardize = true;
};

struct TrainHistory {
    std::vector<double> total, nll, reg, grad_norm, seconds;
    std::size_t epochs() const { return total.size(); }
};

struct TrainResult {
    FlowModel model{0, RqsConfig{}, {}, {}};
    std::vector<double> data_mean, data_std; // per-coordinate standardization
    TrainHistory history;
    std::size_t iterations_run = 0;
};

/// Deterministic single-threaded training: fixed shuffles, fixed reduction
/// order. Aborts with divergence_error when the epoch NLL stays an order of
/// magnitude above its starting point for three consecutive epochs.
inline TrainResult train(const TrainConfig& cfg, const Matrix& data,
                         const std::function<void(std::size_t, const TrainResult&)>&
                             epoch_callback = nullptr) {
    if (data.rows < 2) throw std::invalid_argument("train: needs at least 2 samples");
    if (data.cols != cfg.arch.dim)
        throw std::invalid_argument("train: data dimension does not match the architecture");
    if (cfg.lambda < 0.0) throw std::invalid_argument("train: lambda must be >= 0");

    TrainResult result;
    result.data_mean.assign(data.cols, 0.0);
    result.data_std.assign(data.cols, 1.0);
    Matrix x = data;
    if (cfg.standardize) {
        for (std::size_t j = 0; j < data.cols; ++j) {
            double mean = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < data.rows; ++i) mean += data(i, j);
            mean /= static_cast<double>(data.rows);
            for (std::size_t i = 0; i < data.rows; ++i)
                sq += (data(i, j) - mean) * (data(i, j) - mean);
            double sd = std::sqrt(sq / static_cast<double>(data.rows - 1));
            if (!(sd > 0.0)) throw std::invalid_argument("train: constant data column");
            result.data_mean[j] = mean;
            result.data_std[j] = sd;
            for (std::size_t i = 0; i < data.rows; ++i) x(i, j) = (data(i, j) - mean) / sd;
        }
    }

    result.model = make_flow(cfg.arch);
    const std::size_t dim = cfg.arch.dim;
    Partition partition = Partition::singletons(dim);
    IndexSet core = cfg.core.empty() ? IndexSet() : IndexSet(cfg.core);
    if (cfg.mode == LossMode::MlRec && (core.empty() || core.size() >= dim))
        throw std::invalid_argument("train: ml_rec needs a nonempty proper core set");

    AdamState adam;
    Tape tape;
    Matrix batch(std::min(cfg.batch_size, data.rows), dim);
    std::size_t iter = 0;
    double initial_nll = 0.0;
    int high_nll_epochs = 0;

    for (std::size_t epoch = 0; iter < cfg.iterations; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order = shuffled_indices(data.rows, cfg.seed ^ (epoch * 2654435761ull + 1));
        double ep_total = 0.0, ep_nll = 0.0, ep_reg = 0.0, ep_gnorm = 0.0;
        std::size_t ep_batches = 0;

        for (std::size_t bstart = 0; bstart < data.rows && iter < cfg.iterations;) {
            const bool warm = iter < cfg.warmup_iterations;
            const LossMode mode = warm ? LossMode::Ml : cfg.mode;
            std::size_t want = cfg.batch_size;
            if (!warm && cfg.regularized_batch_size > 0 && cfg.mode != LossMode::Ml)
                want = cfg.regularized_batch_size;
            const std::size_t bsize = std::min(want, data.rows - bstart);
            if (batch.rows != bsize) batch = Matrix(bsize, dim);
            for (std::size_t r = 0; r < bsize; ++r)
                for (std::size_t j = 0; j < dim; ++j) batch(r, j) = x(order[bstart + r], j);

            std::span<const double> row_scale =
                cfg.standardize ? std::span<const double>(result.data_std)
                                : std::span<const double>();
            BatchGradient g = batch_loss_and_grad(result.model, batch, mode, cfg.lambda,
                                                  partition, core, tape, row_scale);
            if (iter == 0) initial_nll = g.nll; // untrained level, before any step
            double gnorm = 0.0;
            for (double v : g.grad) gnorm += v * v;
            gnorm = std::sqrt(gnorm);
            if (cfg.grad_clip > 0.0 && gnorm > cfg.grad_clip) {
                double s = cfg.grad_clip / gnorm;
                for (double& v : g.grad) v *= s;
            }

            AdamConfig step_cfg = cfg.adam;
            if (cfg.cosine_decay) {
                double progress = static_cast<double>(iter) /
                                  static_cast<double>(std::max<std::size_t>(1, cfg.iterations));
                step_cfg.lr = cfg.adam.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
            }
            adam_step(result.model.params(), g.grad, adam, step_cfg);

            ep_total += g.loss;
            ep_nll += g.nll;
            ep_reg += g.reg;
            ep_gnorm += gnorm;
            ++ep_batches;
            ++iter;
            bstart += bsize;
        }

        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.total.push_back(ep_total / static_cast<double>(ep_batches));
        result.history.nll.push_back(ep_nll / static_cast<double>(ep_batches));
        result.history.reg.push_back(ep_reg / static_cast<double>(ep_batches));
        result.history.grad_norm.push_back(ep_gnorm / static_cast<double>(ep_batches));
        result.history.seconds.push_back(secs);
        result.iterations_run = iter;

        double threshold = 10.0 * std::max(1.0, std::abs(initial_nll));
        if (result.history.nll.back() > threshold)
            ++high_nll_epochs;
        else
            high_nll_epochs = 0;
        if (high_nll_epochs >= 3)
            throw divergence_error(
                "training diverged: epoch NLL " + std::to_string(result.history.nll.back()) +
                " exceeded 10x the initial level (" + std::to_string(initial_nll) +
                ") for 3 consecutive epochs");

        if (epoch_callback &&
            (cfg.checkpoint_every_epochs == 0 || (epoch + 1) % cfg.checkpoint_every_epochs == 0 ||
             iter >= cfg.iterations))
            epoch_callback(epoch, result);
    }
    return result;
}

} // namespace manent
