#pragma once

// Manifold entropic metrics as Monte Carlo estimators over decoder Jacobians:
// total entropy, per-set manifold entropy, manifold total correlation,
// pairwise and cross-model manifold mutual information, plus the Pearson
// cross-correlation comparison and convergence diagnostics.
//
// Every per-set volume goes through gram_log_volume (an orthogonal
// factorization of the column block; the Gram matrix itself is never formed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "manent/decoder.hpp"
#include "manent/dgp.hpp"
#include "manent/indexset.hpp"
#include "manent/linalg.hpp"

namespace manent {

inline double entropy_constant(std::size_t dims) {
    return 0.5 * (1.0 + std::log(2.0 * M_PI)) * static_cast<double>(dims);
}

struct EstimatorOptions {
    std::size_t samples = 1000;
    std::uint64_t seed = 0;
    JacobianMode mode = JacobianMode::Auto;
    /// When set, expectations run over these latent rows (e.g. encoder-pushed
    /// z = f(x)) instead of fresh prior samples. Default is the prior.
    std::optional<Matrix> z_batch;
    /// Error out when more than this fraction of samples is degenerate.
    double max_excluded_fraction = 0.01;
};

struct Estimate {
    double value = 0.0;
    double stderr_ = 0.0;
    std::size_t samples = 0;
};

struct SpectrumEntry {
    std::size_t dim = 0; // 0-based internally; serialization is 1-based
    double value = 0.0;
    double stderr_ = 0.0;
};

enum class EntryFlag : std::uint8_t { Value = 0, Unbounded, Undefined };

/// Dense matrix whose entries may carry "unbounded" (reported as inf) or
/// "undefined" (reported as nan) markers instead of a float.
struct FlaggedMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> value;
    std::vector<EntryFlag> flag;

    FlaggedMatrix() = default;
    FlaggedMatrix(std::size_t r, std::size_t c)
        : rows(r), cols(c), value(r * c, 0.0), flag(r * c, EntryFlag::Value) {}

    double& val(std::size_t i, std::size_t j) { return value[i * cols + j]; }
    double val(std::size_t i, std::size_t j) const { return value[i * cols + j]; }
    EntryFlag& at_flag(std::size_t i, std::size_t j) { return flag[i * cols + j]; }
    EntryFlag at_flag(std::size_t i, std::size_t j) const { return flag[i * cols + j]; }

    FlaggedMatrix reordered(const std::vector<std::size_t>& row_order,
                            const std::vector<std::size_t>& col_order) const {
        FlaggedMatrix out(rows, cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) {
                out.val(i, j) = val(row_order[i], col_order[j]);
                out.at_flag(i, j) = at_flag(row_order[i], col_order[j]);
            }
        return out;
    }
};

struct MetricsReport {
    std::string decoder;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    Estimate total_entropy;
    std::vector<Estimate> manifold_entropy; // indexed by latent dim
    Estimate mtc;
    std::optional<FlaggedMatrix> mpmi; // diagonal undefined
    std::size_t excluded = 0;
};

struct CrossReport {
    std::string model_a, model_b;
    FlaggedMatrix mcpmi;
    std::optional<FlaggedMatrix> pearson_sq;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
};

namespace detail {

/// Neumaier-compensated accumulation keeps the decomposition identities at
/// the 1e-10 level regardless of summation order.
struct KahanSum {
    double sum = 0.0, comp = 0.0;
    void add(double x) {
        double t = sum + x;
        if (std::abs(sum) >= std::abs(x))
            comp += (sum - t) + x;
        else
            comp += (x - t) + sum;
        sum = t;
    }
    double get() const { return sum + comp; }
};

inline Estimate mean_estimate(const std::vector<double>& xs) {
    Estimate e;
    e.samples = xs.size();
    KahanSum s;
    for (double x : xs) s.add(x);
    double mean = s.get() / static_cast<double>(xs.size());
    KahanSum sq;
    for (double x : xs) sq.add((x - mean) * (x - mean));
    e.value = mean;
    e.stderr_ = xs.size() > 1
        ? std::sqrt(sq.get() / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()))
        : 0.0;
    return e;
}

struct BatchJacobians {
    Matrix z;
    std::vector<Matrix> jac;
};

inline BatchJacobians batch_jacobians(const Decoder& g, const EstimatorOptions& opt) {
    BatchJacobians b;
    if (opt.z_batch) {
        b.z = *opt.z_batch;
        if (b.z.cols != g.latent_dim())
            throw std::invalid_argument("estimator: z batch dimension mismatch");
    } else {
        b.z = sample_prior(opt.samples, g.latent_dim(), opt.seed);
    }
    if (b.z.rows < 2) throw std::invalid_argument("estimator: needs at least 2 samples");
    JacobianBatch jb = jacobian_batch(g, b.z, opt.mode);
    b.jac = std::move(jb.jac);
    return b;
}

inline void check_exclusions(std::size_t excluded, std::size_t total, double max_fraction,
                             const std::string& what) {
    if (excluded == total)
        throw degenerate_jacobian_error(what + ": every sample was degenerate", 0);
    if (static_cast<double>(excluded) > max_fraction * static_cast<double>(total))
        throw degenerate_jacobian_error(
            what + ": " + std::to_string(excluded) + " of " + std::to_string(total) +
                " samples degenerate (exceeds the allowed fraction)",
            0);
}

/// log |J| for a (possibly rectangular) full Jacobian.
inline double full_log_volume(const Matrix& j) {
    return j.rows == j.cols ? log_abs_det(j) : gram_log_volume(j);
}

inline double column_log_norm(const Matrix& j, std::size_t c) {
    double s = 0.0;
    for (std::size_t i = 0; i < j.rows; ++i) s += j(i, c) * j(i, c);
    if (!(s > 0.0) || !std::isfinite(s))
        throw degenerate_jacobian_error("column norm vanished", 1);
    return std::log(std::sqrt(s));
}

/// Pair integrand log|J_i| + log|J_j| - |[J_i, J_j]| with columns possibly
/// taken from two different Jacobians. Returns nullopt when the columns are
/// collinear beyond the unbounded-entry threshold.
inline std::optional<double> pair_integrand(const Matrix& ja, std::size_t i, const Matrix& jb,
                                            std::size_t j) {
    double nii = 0.0, njj = 0.0, dot = 0.0;
    for (std::size_t r = 0; r < ja.rows; ++r) {
        nii += ja(r, i) * ja(r, i);
        njj += jb(r, j) * jb(r, j);
        dot += ja(r, i) * jb(r, j);
    }
    if (!(nii > 0.0) || !(njj > 0.0))
        throw degenerate_jacobian_error("column norm vanished", 1);
    double cos2 = (dot * dot) / (nii * njj);
    if (cos2 > 1.0 - 1e-12) return std::nullopt;

    Matrix block(ja.rows, 2);
    for (std::size_t r = 0; r < ja.rows; ++r) {
        block(r, 0) = ja(r, i);
        block(r, 1) = jb(r, j);
    }
    return 0.5 * std::log(nii) + 0.5 * std::log(njj) - gram_log_volume(block);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Entropies
// ---------------------------------------------------------------------------

/// H(q) = D/2 (1 + log 2pi) + E_z log|J(z)|, z ~ N(0, I_D).
inline Estimate total_entropy(const Decoder& g, const EstimatorOptions& opt = {}) {
    detail::BatchJacobians b = detail::batch_jacobians(g, opt);
    std::vector<double> terms;
    std::size_t excluded = 0;
    for (const Matrix& j : b.jac) {
        try {
            terms.push_back(detail::full_log_volume(j));
        } catch (const degenerate_jacobian_error&) {
            ++excluded;
        }
    }
    detail::check_exclusions(excluded, b.jac.size(), opt.max_excluded_fraction, "total_entropy");
    Estimate e = detail::mean_estimate(terms);
    e.value += entropy_constant(g.latent_dim());
    return e;
}

/// H(q_S) = |S|/2 (1 + log 2pi) + E_z log|J_S(z)|, expectation over the full
/// prior z ~ N(0, I_D), not just z_S.
inline Estimate manifold_entropy(const Decoder& g, const IndexSet& s,
                                 const EstimatorOptions& opt = {}) {
    if (s.empty()) throw std::invalid_argument("manifold_entropy: empty index set");
    detail::BatchJacobians b = detail::batch_jacobians(g, opt);
    std::vector<double> terms;
    std::size_t excluded = 0;
    for (const Matrix& j : b.jac) {
        try {
            if (s.size() == 1)
                terms.push_back(detail::column_log_norm(j, s[0]));
            else
                terms.push_back(gram_log_volume(j.columns(s.indices())));
        } catch (const degenerate_jacobian_error&) {
            ++excluded;
        }
    }
    detail::check_exclusions(excluded, b.jac.size(), opt.max_excluded_fraction, "manifold_entropy");
    Estimate e = detail::mean_estimate(terms);
    e.value += entropy_constant(s.size());
    return e;
}

/// I_P = E_z [ sum_S log|J_S| - log|J| ], averaged per sample.
inline Estimate manifold_total_correlation(const Decoder& g, const Partition& p,
                                           const EstimatorOptions& opt = {}) {
    detail::BatchJacobians b = detail::batch_jacobians(g, opt);
    std::vector<double> terms;
    std::size_t excluded = 0;
    for (const Matrix& j : b.jac) {
        try {
            detail::KahanSum integrand;
            for (const IndexSet& s : p)
                integrand.add(s.size() == 1 ? detail::column_log_norm(j, s[0])
                                            : gram_log_volume(j.columns(s.indices())));
            integrand.add(-detail::full_log_volume(j));
            terms.push_back(integrand.get());
        } catch (const degenerate_jacobian_error&) {
            ++excluded;
        }
    }
    detail::check_exclusions(excluded, b.jac.size(), opt.max_excluded_fraction,
                             "manifold_total_correlation");
    return detail::mean_estimate(terms);
}

/// I(q_S, q_T) = E_z [ log|J_S| + log|J_T| - log|J_{S u T}| ] for disjoint
/// nonempty S, T.
inline Estimate manifold_mutual_information(const Decoder& g, const IndexSet& s,
                                            const IndexSet& t,
                                            const EstimatorOptions& opt = {}) {
    if (s.empty() || t.empty())
        throw std::invalid_argument("manifold_mutual_information: empty index set");
    if (!s.disjoint_with(t))
        throw std::invalid_argument("manifold_mutual_information: index sets overlap");
    IndexSet joint = s.unioned_with(t);
    detail::BatchJacobians b = detail::batch_jacobians(g, opt);
    std::vector<double> terms;
    std::size_t excluded = 0;
    for (const Matrix& j : b.jac) {
        try {
            double vs = s.size() == 1 ? detail::column_log_norm(j, s[0])
                                      : gram_log_volume(j.columns(s.indices()));
            double vt = t.size() == 1 ? detail::column_log_norm(j, t[0])
                                      : gram_log_volume(j.columns(t.indices()));
            double vst = gram_log_volume(j.columns(joint.indices()));
            terms.push_back(vs + vt - vst);
        } catch (const degenerate_jacobian_error&) {
            ++excluded;
        }
    }
    detail::check_exclusions(excluded, b.jac.size(), opt.max_excluded_fraction,
                             "manifold_mutual_information");
    return detail::mean_estimate(terms);
}

/// Per-dimension manifold entropies sorted descending (stable: ties keep the
/// original dimension order).
inline std::vector<SpectrumEntry> manifold_entropy_spectrum(const Decoder& g,
                                                            const EstimatorOptions& opt = {}) {
    detail::BatchJacobians b = detail::batch_jacobians(g, opt);
    const std::size_t dz = g.latent_dim();
    std::vector<SpectrumEntry> spectrum(dz);
    std::size_t excluded_max = 0;
    for (std::size_t c = 0; c < dz; ++c) {
        std::vector<double> terms;
        std::size_t excluded = 0;
        for (const Matrix& j : b.jac) {
            try {
                terms.push_back(detail::column_log_norm(j, c));
            } catch (const degenerate_jacobian_error&) {
                ++excluded;
            }
        }
        detail::check_exclusions(excluded, b.jac.size(), opt.max_excluded_fraction,
                                 "manifold_entropy_spectrum");
        excluded_max = std::max(excluded_max, excluded);
        Estimate e = detail::mean_estimate(terms);
        spectrum[c] = {c, e.value + entropy_constant(1), e.stderr_};
    }
    std::stable_sort(spectrum.begin(), spectrum.end(),
                     [](const SpectrumEntry& a, const SpectrumEntry& bb) {
                         return a.value > bb.value;
                     });
    return spectrum;
}

/// The descending-ME order of latent dimensions (what "ME-sorted" means).
inline std::vector<std::size_t> me_order(const Decoder& g, const EstimatorOptions& opt = {}) {
    std::vector<SpectrumEntry> s = manifold_entropy_spectrum(g, opt);
    std::vector<std::size_t> order(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) order[k] = s[k].dim;
    return order;
}

// ---------------------------------------------------------------------------
// Mutual-information matrices
// ---------------------------------------------------------------------------

namespace detail {

/// MPMI from an already computed Jacobian batch (the D(D-1)/2 pair volumes
/// reuse it; nothing is re-evaluated).
inline FlaggedMatrix mpmi_from_batch(const BatchJacobians& b, std::size_t dz,
                                     const EstimatorOptions& opt) {
    FlaggedMatrix out(dz, dz);
    for (std::size_t i = 0; i < dz; ++i) out.at_flag(i, i) = EntryFlag::Undefined;

    for (std::size_t i = 0; i < dz; ++i) {
        for (std::size_t j = i + 1; j < dz; ++j) {
            detail::KahanSum acc;
            std::size_t n = 0, excluded = 0;
            bool unbounded = false;
            for (const Matrix& jac : b.jac) {
                try {
                    auto term = detail::pair_integrand(jac, i, jac, j);
                    if (!term) {
                        unbounded = true;
                        break;
                    }
                    acc.add(*term);
                    ++n;
                } catch (const degenerate_jacobian_error&) {
                    ++excluded;
                }
            }
            if (unbounded) {
                out.at_flag(i, j) = out.at_flag(j, i) = EntryFlag::Unbounded;
                continue;
            }
            detail::check_exclusions(excluded, b.jac.size(), opt.max_excluded_fraction,
                                     "mpmi_matrix");
            double v = acc.get() / static_cast<double>(n);
            out.val(i, j) = out.val(j, i) = v;
        }
    }
    return out;
}

} // namespace detail

/// MPMI matrix: entry (i,j) = E_z[ log|J_i| + log|J_j| - log|J_{ij}| ],
/// symmetric, diagonal undefined. Near-collinear column pairs (cos^2 within
/// 1e-12 of 1) are reported as unbounded, never as a float.
inline FlaggedMatrix mpmi_matrix(const Decoder& g, const EstimatorOptions& opt = {}) {
    const std::size_t dz = g.latent_dim();
    if (dz < 2) throw std::invalid_argument("mpmi_matrix: needs at least 2 latent dimensions");
    detail::BatchJacobians b = detail::batch_jacobians(g, opt);
    return detail::mpmi_from_batch(b, dz, opt);
}

/// MCPMI matrix across two decoders sharing the latent prior: entry (i,j) =
/// E_z[ log|J^a_i| + log|J^b_j| - log|[J^a_i, J^b_j]| ]. All entries are
/// meaningful; identical manifolds show up as unbounded flags.
inline FlaggedMatrix mcpmi_matrix(const Decoder& a, const Decoder& b,
                                  const EstimatorOptions& opt = {}) {
    if (a.latent_dim() != b.latent_dim())
        throw std::invalid_argument("mcpmi_matrix: latent dimensions differ");
    if (a.data_dim() != b.data_dim())
        throw std::invalid_argument("mcpmi_matrix: data dimensions differ");
    const std::size_t dz = a.latent_dim();

    EstimatorOptions opt_b = opt;
    detail::BatchJacobians ba = detail::batch_jacobians(a, opt);
    opt_b.z_batch = ba.z; // same z samples feed both decoders
    detail::BatchJacobians bb = detail::batch_jacobians(b, opt_b);

    FlaggedMatrix out(dz, dz);
    for (std::size_t i = 0; i < dz; ++i) {
        for (std::size_t j = 0; j < dz; ++j) {
            detail::KahanSum acc;
            std::size_t n = 0, excluded = 0;
            bool unbounded = false;
            for (std::size_t k = 0; k < ba.jac.size(); ++k) {
                try {
                    auto term = detail::pair_integrand(ba.jac[k], i, bb.jac[k], j);
                    if (!term) {
                        unbounded = true;
                        break;
                    }
                    acc.add(*term);
                    ++n;
                } catch (const degenerate_jacobian_error&) {
                    ++excluded;
                }
            }
            if (unbounded) {
                out.at_flag(i, j) = EntryFlag::Unbounded;
                continue;
            }
            detail::check_exclusions(excluded, ba.jac.size(), opt.max_excluded_fraction,
                                     "mcpmi_matrix");
            out.val(i, j) = acc.get() / static_cast<double>(n);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Densities, mean columns, variance spectra
// ---------------------------------------------------------------------------

/// log q_S(x) = log p_S(z_S) - log|J_S(z)| at z = encode(x); needs an
/// invertible decoder.
inline double manifold_log_density(const Decoder& g, std::span<const double> x,
                                   const IndexSet& s) {
    if (!g.has_encoder())
        throw capability_error(g.name() + ": manifold_log_density needs an invertible decoder");
    if (s.empty()) throw std::invalid_argument("manifold_log_density: empty index set");
    std::vector<double> z = encode(g, x);
    double log_p = 0.0;
    for (std::size_t i : s) log_p += -0.5 * (std::log(2.0 * M_PI) + z[i] * z[i]);
    Matrix cols = decoder_jacobian_columns(g, z, s);
    return log_p - gram_log_volume(cols);
}

/// mean_z J_i(z): the average unnormalized tangent of latent manifold i.
inline std::vector<double> mean_jacobian_column(const Decoder& g, std::size_t column,
                                                const EstimatorOptions& opt = {}) {
    if (column >= g.latent_dim())
        throw std::invalid_argument("mean_jacobian_column: column out of range");
    detail::BatchJacobians b = detail::batch_jacobians(g, opt);
    std::vector<detail::KahanSum> acc(g.data_dim());
    for (const Matrix& j : b.jac)
        for (std::size_t r = 0; r < j.rows; ++r) acc[r].add(j(r, column));
    std::vector<double> mean(g.data_dim());
    for (std::size_t r = 0; r < mean.size(); ++r)
        mean[r] = acc[r].get() / static_cast<double>(b.jac.size());
    return mean;
}

/// Per-dimension empirical std of encode(x), sorted descending (the
/// encoder-variance sorting used by GIN, for contrast with the ME spectrum).
inline std::vector<SpectrumEntry> latent_variance_spectrum(const Decoder& g, const Matrix& data) {
    if (!g.has_encoder())
        throw capability_error(g.name() + ": latent_variance_spectrum needs an encoder");
    if (data.rows < 2)
        throw std::invalid_argument("latent_variance_spectrum: needs at least 2 rows");
    const std::size_t dz = g.latent_dim();
    Matrix z(data.rows, dz);
    std::vector<double> zi(dz);
    for (std::size_t n = 0; n < data.rows; ++n) {
        std::span<const double> row(&data(n, 0), data.cols);
        g.encode(row, zi);
        for (std::size_t j = 0; j < dz; ++j) z(n, j) = zi[j];
    }
    std::vector<SpectrumEntry> spectrum(dz);
    for (std::size_t j = 0; j < dz; ++j) {
        double mean = 0.0;
        for (std::size_t n = 0; n < z.rows; ++n) mean += z(n, j);
        mean /= static_cast<double>(z.rows);
        double sq = 0.0;
        for (std::size_t n = 0; n < z.rows; ++n) sq += (z(n, j) - mean) * (z(n, j) - mean);
        spectrum[j] = {j, std::sqrt(sq / static_cast<double>(z.rows - 1)), 0.0};
    }
    std::stable_sort(spectrum.begin(), spectrum.end(),
                     [](const SpectrumEntry& a, const SpectrumEntry& b) {
                         return a.value > b.value;
                     });
    return spectrum;
}

/// Squared Pearson cross-correlation between ground-truth latents and the
/// model's encoded latents, in the simplified normalized form
/// (E[z_gt_i * z_pred_j])^2. predicted_order (e.g. the ME order) permutes the
/// predicted dimensions; empty means identity. Zero-variance predicted
/// dimensions are flagged undefined.
inline FlaggedMatrix pearson_cross_correlation(const Matrix& z_gt, const Matrix& data,
                                               const Decoder& model,
                                               std::vector<std::size_t> predicted_order = {}) {
    if (!model.has_encoder())
        throw capability_error(model.name() + ": pearson_cross_correlation needs an encoder");
    if (z_gt.rows != data.rows)
        throw std::invalid_argument("pearson_cross_correlation: row mismatch between latents and data");
    const std::size_t d = model.latent_dim();
    if (z_gt.cols != d)
        throw std::invalid_argument("pearson_cross_correlation: latent dimension mismatch");
    if (predicted_order.empty()) {
        predicted_order.resize(d);
        for (std::size_t j = 0; j < d; ++j) predicted_order[j] = j;
    }

    Matrix z_pred(data.rows, d);
    std::vector<double> zi(d);
    for (std::size_t n = 0; n < data.rows; ++n) {
        std::span<const double> row(&data(n, 0), data.cols);
        model.encode(row, zi);
        for (std::size_t j = 0; j < d; ++j) z_pred(n, j) = zi[j];
    }

    std::vector<bool> degenerate(d, false);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t n = 0; n < z_pred.rows; ++n) {
            mean += z_pred(n, j);
            sq += z_pred(n, j) * z_pred(n, j);
        }
        mean /= static_cast<double>(z_pred.rows);
        degenerate[j] = sq / static_cast<double>(z_pred.rows) - mean * mean < 1e-24;
    }

    FlaggedMatrix out(d, d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t jj = 0; jj < d; ++jj) {
            std::size_t j = predicted_order[jj];
            if (degenerate[j]) {
                out.at_flag(i, jj) = EntryFlag::Undefined;
                continue;
            }
            detail::KahanSum acc;
            for (std::size_t n = 0; n < z_gt.rows; ++n) acc.add(z_gt(n, i) * z_pred(n, j));
            double r = acc.get() / static_cast<double>(z_gt.rows);
            out.val(i, jj) = r * r;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports and diagnostics
// ---------------------------------------------------------------------------

/// Full report from one shared sample batch, so the decomposition
/// sum_i H(q_i) - H(q) = MTC holds on the emitted numbers.
inline MetricsReport evaluate_metrics(const Decoder& g, const EstimatorOptions& opt = {},
                                      bool with_mpmi = true) {
    MetricsReport rep;
    rep.decoder = g.name();
    rep.seed = opt.seed;

    detail::BatchJacobians b = detail::batch_jacobians(g, opt);
    rep.samples = b.z.rows;
    const std::size_t dz = g.latent_dim();

    std::vector<double> logdet_terms;
    std::vector<std::vector<double>> col_terms(dz);
    std::vector<double> mtc_terms;
    std::size_t excluded = 0;
    for (const Matrix& j : b.jac) {
        try {
            double logdet = detail::full_log_volume(j);
            std::vector<double> cols(dz);
            for (std::size_t c = 0; c < dz; ++c) cols[c] = detail::column_log_norm(j, c);
            logdet_terms.push_back(logdet);
            detail::KahanSum integrand;
            for (std::size_t c = 0; c < dz; ++c) {
                col_terms[c].push_back(cols[c]);
                integrand.add(cols[c]);
            }
            integrand.add(-logdet);
            mtc_terms.push_back(integrand.get());
        } catch (const degenerate_jacobian_error&) {
            ++excluded;
        }
    }
    detail::check_exclusions(excluded, b.jac.size(), opt.max_excluded_fraction,
                             "evaluate_metrics");
    rep.excluded = excluded;

    rep.total_entropy = detail::mean_estimate(logdet_terms);
    rep.total_entropy.value += entropy_constant(dz);
    rep.manifold_entropy.resize(dz);
    for (std::size_t c = 0; c < dz; ++c) {
        rep.manifold_entropy[c] = detail::mean_estimate(col_terms[c]);
        rep.manifold_entropy[c].value += entropy_constant(1);
    }
    rep.mtc = detail::mean_estimate(mtc_terms);

    if (with_mpmi && dz >= 2) rep.mpmi = detail::mpmi_from_batch(b, dz, opt);
    return rep;
}

/// Metrics of the analytic torus decoder; the per-dimension entropies track
/// log(sigma) and the MTC vanishes because the Jacobian columns are exactly
/// orthogonal before any per-coordinate scaling.
inline MetricsReport torus_ground_truth_metrics(const TorusDecoder& g,
                                                const EstimatorOptions& opt = {}) {
    EstimatorOptions o = opt;
    o.mode = JacobianMode::Analytic;
    return evaluate_metrics(g, o, false);
}

struct ConvergenceRow {
    std::size_t n = 0;
    double mean = 0.0;
    double std_over_repeats = 0.0;
};

struct MetricKind {
    enum class Kind { TotalEntropy, ManifoldEntropy, Mtc } kind = Kind::ManifoldEntropy;
    std::size_t dim = 0; // for ManifoldEntropy

    static MetricKind total_entropy() { return {Kind::TotalEntropy, 0}; }
    static MetricKind manifold(std::size_t dim) { return {Kind::ManifoldEntropy, dim}; }
    static MetricKind mtc() { return {Kind::Mtc, 0}; }
};

/// Repeats the chosen estimator at several sample sizes with distinct seeds
/// and reports the spread over repeats per sample size.
inline std::vector<ConvergenceRow> convergence_diagnostic(const Decoder& g, MetricKind metric,
                                                          const std::vector<std::size_t>& sizes,
                                                          std::size_t repeats,
                                                          std::uint64_t seed,
                                                          JacobianMode mode = JacobianMode::Auto) {
    if (repeats < 2) throw std::invalid_argument("convergence_diagnostic: needs repeats >= 2");
    std::vector<ConvergenceRow> rows;
    for (std::size_t n : sizes) {
        std::vector<double> values;
        for (std::size_t r = 0; r < repeats; ++r) {
            EstimatorOptions opt;
            opt.samples = n;
            opt.seed = seed + 1000003ull * (r + 1);
            opt.mode = mode;
            double v = 0.0;
            switch (metric.kind) {
                case MetricKind::Kind::TotalEntropy:
                    v = total_entropy(g, opt).value;
                    break;
                case MetricKind::Kind::ManifoldEntropy:
                    v = manifold_entropy(g, IndexSet::single(metric.dim), opt).value;
                    break;
                case MetricKind::Kind::Mtc:
                    v = manifold_total_correlation(g, Partition::singletons(g.latent_dim()), opt)
                            .value;
                    break;
            }
            values.push_back(v);
        }
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double sq = 0.0;
        for (double v : values) sq += (v - mean) * (v - mean);
        rows.push_back({n, mean, std::sqrt(sq / static_cast<double>(values.size() - 1))});
    }
    return rows;
}

} // namespace manent
