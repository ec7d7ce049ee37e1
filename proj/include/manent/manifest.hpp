#pragma once

// JSON experiment manifests: dataset configs, training configs and the
// decoder references used by eval/compare/convergence. Keys are validated
// strictly; an unknown key is a usage error naming the key. Index sets and
// latent dimensions are 1-based here (user-facing I/O) and converted exactly
// once.

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "manent/dgp.hpp"
#include "manent/errors.hpp"
#include "manent/flow.hpp"
#include "manent/flow_io.hpp"
#include "manent/train.hpp"

namespace manent {

/// Bad user input on the CLI surface (maps to exit code 1).
class usage_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void check_keys(const nlohmann::ordered_json& obj, const std::string& where,
                       std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw usage_error(where + ": expected a JSON object");
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* k : allowed)
            if (item.key() == k) ok = true;
        if (!ok) throw usage_error(where + ": unknown key '" + item.key() + "'");
    }
}

template <class T>
T get_or(const nlohmann::ordered_json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw usage_error(std::string("key '") + key + "' has the wrong type");
    }
}

} // namespace detail

inline nlohmann::ordered_json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw usage_error("cannot open manifest '" + path + "'");
    try {
        return nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw usage_error("manifest '" + path + "' is not valid JSON: " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Dataset manifests
// ---------------------------------------------------------------------------

struct DatasetManifest {
    std::string kind; // "two_moons" | "torus"
    TwoMoonsConfig moons;
    TorusDatasetConfig torus;

    static DatasetManifest from_json(const nlohmann::ordered_json& j) {
        DatasetManifest m;
        detail::check_keys(j, "dataset",
                           {"kind", "samples", "seed", "noise_std", "rotation_seed", "rotate",
                            "normalize", "pairs", "sigma_phi_scale", "sigma_r_scale"});
        m.kind = detail::get_or<std::string>(j, "kind", "");
        if (m.kind == "two_moons") {
            m.moons.samples = detail::get_or<std::size_t>(j, "samples", 10000);
            m.moons.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
            m.moons.noise_std = detail::get_or<double>(j, "noise_std", 0.1);
            for (const char* k :
                 {"rotation_seed", "rotate", "normalize", "pairs", "sigma_phi_scale",
                  "sigma_r_scale"})
                if (j.contains(k))
                    throw usage_error(std::string("dataset: key '") + k +
                                      "' does not apply to two_moons");
        } else if (m.kind == "torus") {
            m.torus.samples = detail::get_or<std::size_t>(j, "samples", 20000);
            m.torus.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
            m.torus.rotation_seed = detail::get_or<std::uint64_t>(j, "rotation_seed", 1);
            m.torus.rotate = detail::get_or<bool>(j, "rotate", true);
            m.torus.normalize = detail::get_or<bool>(j, "normalize", true);
            m.torus.pairs = detail::get_or<std::size_t>(j, "pairs", 10);
            m.torus.sigma_phi_scale =
                detail::get_or<double>(j, "sigma_phi_scale", m.torus.sigma_phi_scale);
            m.torus.sigma_r_scale =
                detail::get_or<double>(j, "sigma_r_scale", m.torus.sigma_r_scale);
            if (j.contains("noise_std"))
                throw usage_error("dataset: key 'noise_std' does not apply to torus");
        } else {
            throw usage_error("dataset: kind must be 'two_moons' or 'torus'");
        }
        return m;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["kind"] = kind;
        if (kind == "two_moons") {
            j["samples"] = moons.samples;
            j["seed"] = moons.seed;
            j["noise_std"] = moons.noise_std;
        } else {
            j["samples"] = torus.samples;
            j["seed"] = torus.seed;
            j["rotation_seed"] = torus.rotation_seed;
            j["rotate"] = torus.rotate;
            j["normalize"] = torus.normalize;
            j["pairs"] = torus.pairs;
            j["sigma_phi_scale"] = torus.sigma_phi_scale;
            j["sigma_r_scale"] = torus.sigma_r_scale;
        }
        return j;
    }

    std::size_t data_dim() const { return kind == "two_moons" ? 2 : 2 * torus.pairs; }

    Matrix materialize() const {
        if (kind == "two_moons") return sample_two_moons(moons);
        return sample_torus(torus).x;
    }
};

// ---------------------------------------------------------------------------
// Training manifests
// ---------------------------------------------------------------------------

struct TrainManifest {
    DatasetManifest dataset;
    TrainConfig config;

    static TrainManifest from_json(const nlohmann::ordered_json& j) {
        TrainManifest m;
        detail::check_keys(j, "train manifest",
                           {"dataset", "architecture", "loss", "optimizer", "batch_size",
                            "iterations", "warmup_iterations", "regularized_batch_size", "seed",
                            "checkpoint_every_epochs", "grad_clip", "cosine_decay",
                            "standardize"});
        if (!j.contains("dataset")) throw usage_error("train manifest: missing 'dataset'");
        m.dataset = DatasetManifest::from_json(j.at("dataset"));

        TrainConfig& cfg = m.config;
        cfg.arch.dim = m.dataset.data_dim();
        if (j.contains("architecture")) {
            const auto& a = j.at("architecture");
            detail::check_keys(a, "architecture",
                               {"blocks", "bins", "subnet_hidden", "tail_bound", "init_seed",
                                "final_orthogonal"});
            cfg.arch.blocks = detail::get_or<std::size_t>(a, "blocks", 8);
            cfg.arch.spline.bins = detail::get_or<int>(a, "bins", 4);
            cfg.arch.spline.tail_bound = detail::get_or<double>(a, "tail_bound", 4.0);
            cfg.arch.subnet_hidden =
                detail::get_or<std::vector<std::size_t>>(a, "subnet_hidden", {24, 24});
            cfg.arch.init_seed = detail::get_or<std::uint64_t>(a, "init_seed", 0);
            cfg.arch.final_orthogonal = detail::get_or<bool>(a, "final_orthogonal", true);
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            detail::check_keys(l, "loss", {"mode", "lambda", "core"});
            cfg.mode = loss_mode_from_name(detail::get_or<std::string>(l, "mode", "ml"));
            cfg.lambda = detail::get_or<double>(l, "lambda",
                                                cfg.mode == LossMode::MlRec ? 5.0 : 1.0);
            if (l.contains("core")) {
                auto one_based = l.at("core").get<std::vector<std::size_t>>();
                cfg.core = IndexSet::from_one_based(one_based).indices();
            }
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            detail::check_keys(o, "optimizer", {"lr", "beta1", "beta2", "eps"});
            cfg.adam.lr = detail::get_or<double>(o, "lr", 1e-3);
            cfg.adam.beta1 = detail::get_or<double>(o, "beta1", 0.9);
            cfg.adam.beta2 = detail::get_or<double>(o, "beta2", 0.999);
            cfg.adam.eps = detail::get_or<double>(o, "eps", 1e-8);
        }
        cfg.batch_size = detail::get_or<std::size_t>(j, "batch_size", 256);
        cfg.iterations = detail::get_or<std::size_t>(j, "iterations", 3000);
        cfg.warmup_iterations = detail::get_or<std::size_t>(j, "warmup_iterations", 0);
        cfg.regularized_batch_size =
            detail::get_or<std::size_t>(j, "regularized_batch_size", 0);
        cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
        cfg.checkpoint_every_epochs =
            detail::get_or<std::size_t>(j, "checkpoint_every_epochs", 0);
        cfg.grad_clip = detail::get_or<double>(j, "grad_clip", 10.0);
        cfg.cosine_decay = detail::get_or<bool>(j, "cosine_decay", true);
        cfg.standardize = detail::get_or<bool>(j, "standardize", true);
        return m;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["dataset"] = dataset.to_json();
        nlohmann::ordered_json a;
        a["blocks"] = config.arch.blocks;
        a["bins"] = config.arch.spline.bins;
        a["tail_bound"] = config.arch.spline.tail_bound;
        a["subnet_hidden"] = config.arch.subnet_hidden;
        a["init_seed"] = config.arch.init_seed;
        a["final_orthogonal"] = config.arch.final_orthogonal;
        j["architecture"] = std::move(a);
        nlohmann::ordered_json l;
        l["mode"] = loss_mode_name(config.mode);
        l["lambda"] = config.lambda;
        if (!config.core.empty())
            l["core"] = IndexSet(config.core).to_one_based();
        j["loss"] = std::move(l);
        nlohmann::ordered_json o;
        o["lr"] = config.adam.lr;
        o["beta1"] = config.adam.beta1;
        o["beta2"] = config.adam.beta2;
        o["eps"] = config.adam.eps;
        j["optimizer"] = std::move(o);
        j["batch_size"] = config.batch_size;
        j["iterations"] = config.iterations;
        j["warmup_iterations"] = config.warmup_iterations;
        j["regularized_batch_size"] = config.regularized_batch_size;
        j["seed"] = config.seed;
        j["checkpoint_every_epochs"] = config.checkpoint_every_epochs;
        j["grad_clip"] = config.grad_clip;
        j["cosine_decay"] = config.cosine_decay;
        j["standardize"] = config.standardize;
        return j;
    }
};

// ---------------------------------------------------------------------------
// Decoder references ("identity:D", "affine:diag:...", "torus", checkpoints)
// ---------------------------------------------------------------------------

/// Resolves a decoder reference: the builtin registry covers
///   identity:<D>            identity map in D dimensions
///   affine:diag:<a,b,...>   diagonal affine decoder
///   torus                   analytic torus decoder (no rotation/normalization)
///   torus:<rotation_seed>   analytic torus decoder with a fixed rotation
/// anything else is treated as a checkpoint path (flow) or, with the extension
/// .mnmd, an MLP decoder weight file.
inline std::shared_ptr<Decoder> resolve_decoder(const std::string& ref) {
    auto split = [](const std::string& s, char sep) {
        std::vector<std::string> parts;
        std::size_t pos = 0;
        while (pos <= s.size()) {
            std::size_t next = s.find(sep, pos);
            if (next == std::string::npos) {
                parts.push_back(s.substr(pos));
                break;
            }
            parts.push_back(s.substr(pos, next - pos));
            pos = next + 1;
        }
        return parts;
    };

    if (ref.rfind("identity:", 0) == 0) {
        std::size_t d = 0;
        try {
            d = std::stoul(ref.substr(9));
        } catch (...) {
            throw usage_error("bad identity decoder spec '" + ref + "'");
        }
        if (d == 0) throw usage_error("identity decoder needs a positive dimension");
        return std::make_shared<AffineDecoder>(AffineDecoder::identity(d, ref));
    }
    if (ref.rfind("affine:diag:", 0) == 0) {
        std::vector<double> diag;
        for (const std::string& tok : split(ref.substr(12), ',')) {
            try {
                diag.push_back(std::stod(tok));
            } catch (...) {
                throw usage_error("bad diagonal entry '" + tok + "' in '" + ref + "'");
            }
        }
        if (diag.empty()) throw usage_error("affine:diag needs at least one entry");
        auto dec = std::make_shared<AffineDecoder>(AffineDecoder::diagonal(diag));
        return dec;
    }
    if (ref == "torus" || ref.rfind("torus:", 0) == 0) {
        TorusDatasetConfig cfg;
        std::optional<Matrix> rot;
        if (ref.size() > 6) {
            try {
                rot = make_random_rotation(2 * cfg.pairs, std::stoull(ref.substr(6)));
            } catch (const usage_error&) {
                throw;
            } catch (...) {
                throw usage_error("bad torus rotation seed in '" + ref + "'");
            }
        }
        return std::make_shared<TorusDecoder>(cfg.sigma_phi(), cfg.sigma_r(), rot, std::nullopt,
                                              ref);
    }
    if (ref.size() > 5 && ref.substr(ref.size() - 5) == ".mnmd")
        return std::make_shared<MlpDecoder>(load_mlp_decoder(ref));

    FlowCheckpoint ckpt = load_model(ref);
    return std::make_shared<FlowDecoder>(std::make_shared<FlowModel>(std::move(ckpt.model)),
                                         std::move(ckpt.data_mean), std::move(ckpt.data_std),
                                         "flow:" + ref);
}

} // namespace manent
