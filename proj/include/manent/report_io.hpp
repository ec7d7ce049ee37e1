#pragma once

// CSV and JSON serialization for metric reports. CSV floats are written with
// 17 significant digits and a '.' decimal point, so 64-bit values round-trip
// losslessly and identical runs produce identical bytes. Unbounded matrix
// entries serialize as "inf", undefined ones as "nan".

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "manent/errors.hpp"
#include "manent/metrics.hpp"
#include "manent/train.hpp"

namespace manent {

using json = nlohmann::ordered_json;

inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw format_error("write to '" + path + "' failed");
}

inline std::string entry_to_string(const FlaggedMatrix& m, std::size_t i, std::size_t j) {
    switch (m.at_flag(i, j)) {
        case EntryFlag::Unbounded: return "inf";
        case EntryFlag::Undefined: return "nan";
        default: return fmt_g17(m.val(i, j));
    }
}

/// Spectrum CSV: columns dim (1-based), H, stderr.
inline std::string spectrum_csv(const std::vector<SpectrumEntry>& spectrum,
                                const std::string& value_name = "H") {
    std::string out = "dim," + value_name + ",stderr\n";
    for (const SpectrumEntry& e : spectrum) {
        out += std::to_string(e.dim + 1);
        out += ',';
        out += fmt_g17(e.value);
        out += ',';
        out += fmt_g17(e.stderr_);
        out += '\n';
    }
    return out;
}

/// Dense matrix CSV, no header, one row per line.
inline std::string matrix_csv(const FlaggedMatrix& m) {
    std::string out;
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j) out += ',';
            out += entry_to_string(m, i, j);
        }
        out += '\n';
    }
    return out;
}

inline std::string convergence_csv(const std::vector<ConvergenceRow>& rows) {
    std::string out = "samples,mean,std\n";
    for (const ConvergenceRow& r : rows) {
        out += std::to_string(r.n);
        out += ',';
        out += fmt_g17(r.mean);
        out += ',';
        out += fmt_g17(r.std_over_repeats);
        out += '\n';
    }
    return out;
}

inline std::string history_csv(const TrainHistory& h) {
    std::string out = "epoch,nll,reg,total,grad_norm,seconds\n";
    for (std::size_t e = 0; e < h.epochs(); ++e) {
        out += std::to_string(e + 1);
        out += ',';
        out += fmt_g17(h.nll[e]);
        out += ',';
        out += fmt_g17(h.reg[e]);
        out += ',';
        out += fmt_g17(h.total[e]);
        out += ',';
        out += fmt_g17(h.grad_norm[e]);
        out += ',';
        out += fmt_g17(h.seconds[e]);
        out += '\n';
    }
    return out;
}

inline json flagged_matrix_json(const FlaggedMatrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < m.cols; ++j) {
            switch (m.at_flag(i, j)) {
                case EntryFlag::Unbounded: row.push_back("inf"); break;
                case EntryFlag::Undefined: row.push_back("nan"); break;
                default: row.push_back(m.val(i, j));
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json estimate_json(const Estimate& e) {
    return json{{"value", e.value}, {"stderr", e.stderr_}, {"samples", e.samples}};
}

/// The full MetricsReport as a structured document; manifold entropies are
/// listed per dimension (1-based) in latent order.
inline json metrics_report_json(const MetricsReport& rep) {
    json doc;
    doc["decoder"] = rep.decoder;
    doc["samples"] = rep.samples;
    doc["seed"] = rep.seed;
    doc["excluded_samples"] = rep.excluded;
    doc["total_entropy"] = estimate_json(rep.total_entropy);
    json mes = json::array();
    for (std::size_t i = 0; i < rep.manifold_entropy.size(); ++i) {
        json e = estimate_json(rep.manifold_entropy[i]);
        e["dim"] = i + 1;
        mes.push_back(std::move(e));
    }
    doc["manifold_entropy"] = std::move(mes);
    doc["mtc"] = estimate_json(rep.mtc);
    doc["mtc_per_dim"] = rep.mtc.value / static_cast<double>(rep.manifold_entropy.size());
    if (rep.mpmi) doc["mpmi"] = flagged_matrix_json(*rep.mpmi);
    return doc;
}

inline json cross_report_json(const CrossReport& rep) {
    json doc;
    doc["model_a"] = rep.model_a;
    doc["model_b"] = rep.model_b;
    doc["samples"] = rep.samples;
    doc["seed"] = rep.seed;
    doc["mcpmi"] = flagged_matrix_json(rep.mcpmi);
    if (rep.pearson_sq) doc["pearson_squared"] = flagged_matrix_json(*rep.pearson_sq);
    return doc;
}

} // namespace manent
