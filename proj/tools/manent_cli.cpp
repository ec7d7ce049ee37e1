// manent: manifold entropic metrics over deterministic decoders.
//
// Subcommands tie dataset generation, flow training, metric evaluation,
// cross-model comparison and convergence diagnostics into reproducible runs:
// every command writes its resolved manifest beside its outputs, and
// identical manifests + seeds reproduce every CSV/SVG byte for byte.
//
// Exit codes: 0 success, 1 usage, 2 numerical/degenerate, 3 divergence.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "manent/dgp.hpp"
#include "manent/manifest.hpp"
#include "manent/metrics.hpp"
#include "manent/report_io.hpp"
#include "manent/svg.hpp"
#include "manent/train.hpp"

namespace fs = std::filesystem;
using namespace manent;

namespace {

struct CommonOptions {
    std::string manifest_path;
    std::optional<std::size_t> samples;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool svg = false;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
    cmd->add_option("--manifest", opt.manifest_path, "run manifest (JSON)")->required();
    cmd->add_option("--samples", opt.samples, "override the manifest sample count");
    cmd->add_option("--seed", opt.seed, "override the manifest seed");
    cmd->add_option("--out", opt.out_dir, "output directory (default: MANENT_OUT_ROOT or .)");
    cmd->add_flag("--svg", opt.svg, "also emit SVG plots");
}

fs::path prepare_out_dir(const CommonOptions& opt) {
    fs::path dir;
    if (!opt.out_dir.empty()) {
        dir = opt.out_dir;
    } else if (const char* root = std::getenv("MANENT_OUT_ROOT")) {
        dir = root;
    } else {
        dir = ".";
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw usage_error("output directory '" + dir.string() + "' is not writable");
    return dir;
}

void write_resolved_manifest(const fs::path& dir, const std::string& command,
                             nlohmann::ordered_json body, const CommonOptions& opt) {
    nlohmann::ordered_json doc;
    doc["command"] = command;
    doc["manifest"] = std::move(body);
    if (opt.samples) doc["samples_override"] = *opt.samples;
    if (opt.seed) doc["seed_override"] = *opt.seed;
    write_text_file((dir / "manifest.json").string(), doc.dump(2) + "\n");
}

// -------------------------------------------------------------------------
// generate
// -------------------------------------------------------------------------

int cmd_generate(const CommonOptions& opt) {
    auto j = load_json_file(opt.manifest_path);
    DatasetManifest m = DatasetManifest::from_json(j);
    if (opt.samples) {
        m.moons.samples = *opt.samples;
        m.torus.samples = *opt.samples;
    }
    if (opt.seed) {
        m.moons.seed = *opt.seed;
        m.torus.seed = *opt.seed;
    }
    fs::path dir = prepare_out_dir(opt);

    nlohmann::ordered_json summary;
    summary["kind"] = m.kind;
    Matrix x;
    if (m.kind == "two_moons") {
        x = sample_two_moons(m.moons);
    } else {
        TorusDataset data = sample_torus(m.torus);
        x = data.x;
        summary["sigma_phi"] = data.decoder->sigma_phi();
        summary["sigma_r"] = data.decoder->sigma_r();
        if (data.decoder->rotation()) {
            nlohmann::ordered_json rot = nlohmann::ordered_json::array();
            const Matrix& q = *data.decoder->rotation();
            for (std::size_t i = 0; i < q.rows; ++i) {
                nlohmann::ordered_json row = nlohmann::ordered_json::array();
                for (std::size_t jj = 0; jj < q.cols; ++jj) row.push_back(q(i, jj));
                rot.push_back(std::move(row));
            }
            summary["rotation"] = std::move(rot);
        }
        if (!data.decoder->norm_offset().empty()) {
            summary["normalization_offset"] = data.decoder->norm_offset();
            summary["normalization_scale"] = data.decoder->norm_scale();
        }
    }
    summary["samples"] = x.rows;
    summary["dims"] = x.cols;
    nlohmann::ordered_json means = nlohmann::ordered_json::array();
    nlohmann::ordered_json stds = nlohmann::ordered_json::array();
    for (std::size_t jx = 0; jx < x.cols; ++jx) {
        double mean = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) mean += x(i, jx);
        mean /= static_cast<double>(x.rows);
        for (std::size_t i = 0; i < x.rows; ++i) sq += (x(i, jx) - mean) * (x(i, jx) - mean);
        means.push_back(mean);
        stds.push_back(x.rows > 1 ? std::sqrt(sq / static_cast<double>(x.rows - 1)) : 0.0);
    }
    summary["mean"] = std::move(means);
    summary["std"] = std::move(stds);

    write_text_file((dir / "dataset_summary.json").string(), summary.dump(2) + "\n");
    write_resolved_manifest(dir, "generate", m.to_json(), opt);
    std::cout << "wrote " << (dir / "dataset_summary.json").string() << "\n";
    return 0;
}

// -------------------------------------------------------------------------
// train
// -------------------------------------------------------------------------

int cmd_train(const CommonOptions& opt) {
    auto j = load_json_file(opt.manifest_path);
    TrainManifest m = TrainManifest::from_json(j);
    if (opt.seed) m.config.seed = *opt.seed;
    fs::path dir = prepare_out_dir(opt);

    Matrix data = m.dataset.materialize();
    auto checkpoint_writer = [&](std::size_t epoch, const TrainResult& r) {
        if (m.config.checkpoint_every_epochs > 0) {
            fs::path p = dir / ("checkpoint_epoch_" + std::to_string(epoch + 1) + ".mnfc");
            save_model(p.string(), r.model, r.data_mean, r.data_std);
        }
    };

    TrainResult result = train(m.config, data, checkpoint_writer);
    save_model((dir / "checkpoint.mnfc").string(), result.model, result.data_mean,
               result.data_std);
    write_text_file((dir / "history.csv").string(), history_csv(result.history));
    write_resolved_manifest(dir, "train", m.to_json(), opt);
    std::cout << "trained " << result.iterations_run << " iterations over "
              << result.history.epochs() << " epochs; final nll " << result.history.nll.back()
              << "\nwrote " << (dir / "checkpoint.mnfc").string() << "\n";
    return 0;
}

// -------------------------------------------------------------------------
// eval
// -------------------------------------------------------------------------

int cmd_eval(const CommonOptions& opt) {
    auto j = load_json_file(opt.manifest_path);
    detail::check_keys(j, "eval manifest", {"decoder", "metrics", "samples", "seed"});
    if (!j.contains("decoder")) throw usage_error("eval manifest: missing 'decoder'");
    std::string ref = j.at("decoder").get<std::string>();
    std::vector<std::string> which =
        detail::get_or<std::vector<std::string>>(j, "metrics", {"summary", "spectrum", "mpmi"});
    EstimatorOptions est;
    est.samples = opt.samples ? *opt.samples : detail::get_or<std::size_t>(j, "samples", 1000);
    est.seed = opt.seed ? *opt.seed : detail::get_or<std::uint64_t>(j, "seed", 0);

    std::shared_ptr<Decoder> dec = resolve_decoder(ref);
    fs::path dir = prepare_out_dir(opt);

    bool want_summary = false, want_spectrum = false, want_mpmi = false;
    for (const std::string& w : which) {
        if (w == "summary")
            want_summary = true;
        else if (w == "spectrum")
            want_spectrum = true;
        else if (w == "mpmi")
            want_mpmi = true;
        else
            throw usage_error("eval manifest: unknown metric '" + w + "'");
    }

    MetricsReport rep = evaluate_metrics(*dec, est, want_mpmi);
    if (want_summary)
        write_text_file((dir / "summary.json").string(), metrics_report_json(rep).dump(2) + "\n");
    if (want_spectrum) {
        std::vector<SpectrumEntry> spectrum(rep.manifold_entropy.size());
        for (std::size_t i = 0; i < spectrum.size(); ++i)
            spectrum[i] = {i, rep.manifold_entropy[i].value, rep.manifold_entropy[i].stderr_};
        std::stable_sort(spectrum.begin(), spectrum.end(),
                         [](const SpectrumEntry& a, const SpectrumEntry& b) {
                             return a.value > b.value;
                         });
        write_text_file((dir / "spectrum.csv").string(), spectrum_csv(spectrum));
        if (opt.svg)
            write_text_file((dir / "spectrum.svg").string(),
                            spectrum_svg(spectrum, "manifold entropy spectrum: " + dec->name()));
    }
    if (want_mpmi && rep.mpmi) {
        write_text_file((dir / "mpmi.csv").string(), matrix_csv(*rep.mpmi));
        if (opt.svg)
            write_text_file((dir / "mpmi.svg").string(),
                            heatmap_svg(*rep.mpmi, "MPMI: " + dec->name()));
    }

    nlohmann::ordered_json resolved;
    resolved["decoder"] = ref;
    resolved["metrics"] = which;
    resolved["samples"] = est.samples;
    resolved["seed"] = est.seed;
    write_resolved_manifest(dir, "eval", std::move(resolved), opt);
    std::cout << "H(q) = " << fmt_g17(rep.total_entropy.value)
              << "  MTC = " << fmt_g17(rep.mtc.value) << " ("
              << fmt_g17(rep.mtc.value / static_cast<double>(dec->latent_dim()))
              << " nats/dim)\n";
    return 0;
}

// -------------------------------------------------------------------------
// compare
// -------------------------------------------------------------------------

int cmd_compare(const CommonOptions& opt) {
    auto j = load_json_file(opt.manifest_path);
    detail::check_keys(j, "compare manifest",
                       {"model_a", "model_b", "dataset", "samples", "seed", "pearson_samples"});
    if (!j.contains("model_a") || !j.contains("model_b"))
        throw usage_error("compare manifest: needs 'model_a' and 'model_b'");
    std::string ref_a = j.at("model_a").get<std::string>();
    std::string ref_b = j.at("model_b").get<std::string>();

    EstimatorOptions est;
    est.samples = opt.samples ? *opt.samples : detail::get_or<std::size_t>(j, "samples", 1000);
    est.seed = opt.seed ? *opt.seed : detail::get_or<std::uint64_t>(j, "seed", 0);
    std::size_t pearson_samples = detail::get_or<std::size_t>(j, "pearson_samples", 2000);

    std::optional<DatasetManifest> dataset;
    std::optional<TorusDataset> torus_data;
    if (j.contains("dataset")) dataset = DatasetManifest::from_json(j.at("dataset"));

    auto resolve = [&](const std::string& ref) -> std::shared_ptr<Decoder> {
        if (ref == "ground-truth") {
            if (!dataset || dataset->kind != "torus")
                throw usage_error(
                    "compare: 'ground-truth' needs a torus dataset entry in the manifest");
            TorusDatasetConfig cfg = dataset->torus;
            cfg.samples = std::max<std::size_t>(pearson_samples, 1);
            torus_data = sample_torus(cfg);
            return torus_data->decoder;
        }
        return resolve_decoder(ref);
    };
    std::shared_ptr<Decoder> a = resolve(ref_a);
    std::shared_ptr<Decoder> b = resolve(ref_b);
    if (a->latent_dim() != b->latent_dim())
        throw usage_error("compare: latent dimensions differ (" +
                          std::to_string(a->latent_dim()) + " vs " +
                          std::to_string(b->latent_dim()) + ")");

    fs::path dir = prepare_out_dir(opt);

    // shared prior samples for both ME sorts and the MCPMI
    std::vector<std::size_t> order_a = me_order(*a, est);
    std::vector<std::size_t> order_b = me_order(*b, est);

    CrossReport rep;
    rep.model_a = a->name();
    rep.model_b = b->name();
    rep.samples = est.samples;
    rep.seed = est.seed;
    rep.mcpmi = mcpmi_matrix(*a, *b, est).reordered(order_a, order_b);

    // Pearson cross-correlation against the ground-truth latents, when a
    // torus ground truth is in play and the other model has an encoder
    const Decoder* model = nullptr;
    std::vector<std::size_t> model_order;
    bool gt_is_a = ref_a == "ground-truth";
    if (torus_data && (gt_is_a ? ref_b : ref_a) != "ground-truth") {
        model = gt_is_a ? b.get() : a.get();
        model_order = gt_is_a ? order_b : order_a;
    }
    std::vector<SpectrumEntry> std_spectrum;
    if (model && model->has_encoder()) {
        FlaggedMatrix r2 = pearson_cross_correlation(torus_data->z_gt, torus_data->x, *model,
                                                     model_order);
        std::vector<std::size_t> gt_order = gt_is_a ? order_a : order_b;
        std::vector<std::size_t> ident(r2.rows);
        for (std::size_t i = 0; i < ident.size(); ++i) ident[i] = i;
        rep.pearson_sq = r2.reordered(gt_order, ident); // columns already ME-sorted

        // encoder-variance sorting, for contrast with the ME sorting
        std_spectrum = latent_variance_spectrum(*model, torus_data->x);
    }

    // diagonal dominance of the sorted MCPMI (finite entries only)
    double diag_sum = 0.0, off_sum = 0.0;
    std::size_t diag_n = 0, off_n = 0, unbounded_diag = 0;
    for (std::size_t i = 0; i < rep.mcpmi.rows; ++i)
        for (std::size_t jj = 0; jj < rep.mcpmi.cols; ++jj) {
            if (rep.mcpmi.at_flag(i, jj) == EntryFlag::Unbounded && i == jj) ++unbounded_diag;
            if (rep.mcpmi.at_flag(i, jj) != EntryFlag::Value) continue;
            if (i == jj) {
                diag_sum += rep.mcpmi.val(i, jj);
                ++diag_n;
            } else {
                off_sum += rep.mcpmi.val(i, jj);
                ++off_n;
            }
        }

    write_text_file((dir / "mcpmi.csv").string(), matrix_csv(rep.mcpmi));
    if (opt.svg)
        write_text_file((dir / "mcpmi.svg").string(),
                        heatmap_svg(rep.mcpmi, "MCPMI (ME-sorted): " + rep.model_a + " vs " +
                                                   rep.model_b));
    if (rep.pearson_sq) {
        write_text_file((dir / "pearson.csv").string(), matrix_csv(*rep.pearson_sq));
        if (opt.svg)
            write_text_file((dir / "pearson.svg").string(),
                            heatmap_svg(*rep.pearson_sq, "squared Pearson cross-correlation"));
    }

    nlohmann::ordered_json doc = cross_report_json(rep);
    // orders serialize as the sorted dimension lists (1-based)
    {
        nlohmann::ordered_json oa = nlohmann::ordered_json::array(),
                               ob = nlohmann::ordered_json::array();
        for (std::size_t d : order_a) oa.push_back(d + 1);
        for (std::size_t d : order_b) ob.push_back(d + 1);
        doc["me_order_a"] = std::move(oa);
        doc["me_order_b"] = std::move(ob);
    }
    doc["diag_mean"] = diag_n ? diag_sum / static_cast<double>(diag_n) : 0.0;
    doc["offdiag_mean"] = off_n ? off_sum / static_cast<double>(off_n) : 0.0;
    doc["unbounded_diagonal_entries"] = unbounded_diag;
    if (!std_spectrum.empty()) {
        // Spearman rank correlation between the ME order and the
        // encoder-std order of the compared model
        const std::vector<std::size_t>& order = model_order;
        const std::size_t d = order.size();
        std::vector<double> me_rank(d), std_rank(d);
        for (std::size_t r = 0; r < d; ++r) me_rank[order[r]] = static_cast<double>(r);
        nlohmann::ordered_json std_order = nlohmann::ordered_json::array();
        for (std::size_t r = 0; r < d; ++r) {
            std_rank[std_spectrum[r].dim] = static_cast<double>(r);
            std_order.push_back(std_spectrum[r].dim + 1);
        }
        double mean = (static_cast<double>(d) - 1.0) / 2.0, num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            num += (me_rank[i] - mean) * (std_rank[i] - mean);
            den += (me_rank[i] - mean) * (me_rank[i] - mean);
        }
        doc["latent_std_order"] = std::move(std_order);
        doc["me_vs_std_rank_correlation"] = den > 0.0 ? num / den : 0.0;
    }
    double ratio = (off_n && off_sum > 0.0 && diag_n)
                       ? (diag_sum / static_cast<double>(diag_n)) /
                             (off_sum / static_cast<double>(off_n))
                       : 0.0;
    doc["diag_offdiag_ratio"] = ratio;
    write_text_file((dir / "compare.json").string(), doc.dump(2) + "\n");

    nlohmann::ordered_json resolved;
    resolved["model_a"] = ref_a;
    resolved["model_b"] = ref_b;
    if (dataset) resolved["dataset"] = dataset->to_json();
    resolved["samples"] = est.samples;
    resolved["seed"] = est.seed;
    resolved["pearson_samples"] = pearson_samples;
    write_resolved_manifest(dir, "compare", std::move(resolved), opt);
    std::cout << "mcpmi diag mean " << fmt_g17(doc["diag_mean"].get<double>()) << ", offdiag mean "
              << fmt_g17(doc["offdiag_mean"].get<double>()) << ", ratio " << fmt_g17(ratio)
              << "\n";
    return 0;
}

// -------------------------------------------------------------------------
// convergence
// -------------------------------------------------------------------------

int cmd_convergence(const CommonOptions& opt) {
    auto j = load_json_file(opt.manifest_path);
    detail::check_keys(j, "convergence manifest",
                       {"decoder", "metric", "sample_sizes", "repeats", "seed"});
    if (!j.contains("decoder")) throw usage_error("convergence manifest: missing 'decoder'");
    std::string ref = j.at("decoder").get<std::string>();
    std::string metric_name = detail::get_or<std::string>(j, "metric", "manifold_entropy:1");
    std::vector<std::size_t> sizes =
        detail::get_or<std::vector<std::size_t>>(j, "sample_sizes", {100, 1000});
    std::size_t repeats = detail::get_or<std::size_t>(j, "repeats", 10);
    std::uint64_t seed = opt.seed ? *opt.seed : detail::get_or<std::uint64_t>(j, "seed", 0);

    MetricKind metric;
    if (metric_name == "total_entropy") {
        metric = MetricKind::total_entropy();
    } else if (metric_name == "mtc") {
        metric = MetricKind::mtc();
    } else if (metric_name.rfind("manifold_entropy:", 0) == 0) {
        std::size_t dim = 0;
        try {
            dim = std::stoul(metric_name.substr(17));
        } catch (...) {
            throw usage_error("bad metric '" + metric_name + "'");
        }
        if (dim == 0) throw usage_error("manifold_entropy dims are 1-based");
        metric = MetricKind::manifold(dim - 1);
    } else {
        throw usage_error("convergence manifest: unknown metric '" + metric_name + "'");
    }

    std::shared_ptr<Decoder> dec = resolve_decoder(ref);
    fs::path dir = prepare_out_dir(opt);
    std::vector<ConvergenceRow> rows = convergence_diagnostic(*dec, metric, sizes, repeats, seed);
    write_text_file((dir / "convergence.csv").string(), convergence_csv(rows));
    if (opt.svg)
        write_text_file((dir / "convergence.svg").string(),
                        convergence_svg(rows, metric_name + ": " + dec->name()));

    nlohmann::ordered_json resolved;
    resolved["decoder"] = ref;
    resolved["metric"] = metric_name;
    resolved["sample_sizes"] = sizes;
    resolved["repeats"] = repeats;
    resolved["seed"] = seed;
    write_resolved_manifest(dir, "convergence", std::move(resolved), opt);
    for (const ConvergenceRow& r : rows)
        std::cout << "N=" << r.n << " mean " << fmt_g17(r.mean) << " std "
                  << fmt_g17(r.std_over_repeats) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"manifold entropic metrics over deterministic decoders"};
    app.require_subcommand(1);

    CommonOptions gen_opt, train_opt, eval_opt, cmp_opt, conv_opt;
    CLI::App* gen = app.add_subcommand("generate", "materialize a dataset and its summary");
    add_common(gen, gen_opt);
    CLI::App* trn = app.add_subcommand("train", "train a flow per the manifest");
    add_common(trn, train_opt);
    CLI::App* evl = app.add_subcommand("eval", "evaluate metrics of a decoder");
    add_common(evl, eval_opt);
    CLI::App* cmp = app.add_subcommand("compare", "cross-model MCPMI / Pearson comparison");
    add_common(cmp, cmp_opt);
    CLI::App* cnv = app.add_subcommand("convergence", "sample-size convergence diagnostic");
    add_common(cnv, conv_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_opt);
        if (trn->parsed()) return cmd_train(train_opt);
        if (evl->parsed()) return cmd_eval(eval_opt);
        if (cmp->parsed()) return cmd_compare(cmp_opt);
        if (cnv->parsed()) return cmd_convergence(conv_opt);
        return 1;
    } catch (const usage_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const divergence_error& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return 3;
    } catch (const degenerate_jacobian_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const evaluation_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const fit_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
