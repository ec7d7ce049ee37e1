#pragma once

// Versioned binary containers: flow checkpoints and MLP decoder weights.
// Header (magic, version, descriptors) followed by little-endian 64-bit
// float parameter blocks in declaration order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "manent/decoder.hpp"
#include "manent/errors.hpp"
#include "manent/flow.hpp"

namespace manent {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace detail {

class BinWriter {
public:
    explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw format_error("cannot open '" + path + "' for writing");
    }
    void u8(std::uint8_t v) { out_.write(reinterpret_cast<const char*>(&v), 1); }
    void u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), 4); }
    void u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
    void f64(double v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
    void f64s(const std::vector<double>& vs) {
        out_.write(reinterpret_cast<const char*>(vs.data()),
                   static_cast<std::streamsize>(vs.size() * 8));
    }
    void magic(const char m[5]) { out_.write(m, 4); }
    bool good() const { return static_cast<bool>(out_); }

private:
    std::ofstream out_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw format_error("cannot open '" + path + "'");
    }
    std::uint8_t u8() { std::uint8_t v; read(&v, 1); return v; }
    std::uint32_t u32() { std::uint32_t v; read(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; read(&v, 8); return v; }
    double f64() { double v; read(&v, 8); return v; }
    std::vector<double> f64s(std::size_t n) {
        std::vector<double> vs(n);
        read(vs.data(), n * 8);
        return vs;
    }
    void expect_magic(const char m[5], const std::string& what) {
        char got[4];
        read(got, 4);
        if (std::memcmp(got, m, 4) != 0)
            throw format_error(path_ + ": not a " + what + " file (bad magic)");
    }

private:
    void read(void* dst, std::size_t n) {
        in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n))
            throw format_error(path_ + ": truncated file");
    }
    std::ifstream in_;
    std::string path_;
};

} // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct FlowCheckpoint {
    FlowModel model{0, RqsConfig{}, {}, {}};
    std::vector<double> data_mean, data_std; // empty when no standardization
};

inline void save_model(const std::string& path, const FlowModel& model,
                       const std::vector<double>& data_mean = {},
                       const std::vector<double>& data_std = {}) {
    detail::BinWriter w(path);
    w.magic("MNFC");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(model.dim()));
    const RqsConfig& cfg = model.spline_config();
    w.u32(static_cast<std::uint32_t>(cfg.bins));
    w.f64(cfg.tail_bound);
    w.f64(cfg.min_bin);
    w.f64(cfg.min_derivative);

    w.u32(static_cast<std::uint32_t>(model.layers().size()));
    for (const auto& layer : model.layers()) {
        w.u8(static_cast<std::uint8_t>(layer.kind));
        switch (layer.kind) {
            case FlowModel::Layer::Kind::Coupling: {
                const auto& c = layer.coupling;
                w.u32(static_cast<std::uint32_t>(c.cond.size()));
                for (std::size_t i : c.cond) w.u32(static_cast<std::uint32_t>(i));
                w.u32(static_cast<std::uint32_t>(c.trans.size()));
                for (std::size_t i : c.trans) w.u32(static_cast<std::uint32_t>(i));
                w.u32(static_cast<std::uint32_t>(c.net_widths.size()));
                for (std::size_t i : c.net_widths) w.u32(static_cast<std::uint32_t>(i));
                w.u64(c.param_offset);
                w.u64(c.param_count);
                break;
            }
            case FlowModel::Layer::Kind::Orthogonal:
                w.u64(layer.orthogonal.reflectors);
                w.u64(layer.orthogonal.param_offset);
                break;
            case FlowModel::Layer::Kind::Permutation:
                w.u32(static_cast<std::uint32_t>(layer.permutation.perm.size()));
                for (std::size_t i : layer.permutation.perm)
                    w.u32(static_cast<std::uint32_t>(i));
                break;
        }
    }
    w.u64(model.params().size());
    w.f64s(model.params());

    w.u8(data_mean.empty() ? 0 : 1);
    if (!data_mean.empty()) {
        if (data_mean.size() != model.dim() || data_std.size() != model.dim())
            throw std::invalid_argument("save_model: standardization size mismatch");
        w.f64s(data_mean);
        w.f64s(data_std);
    }
    if (!w.good()) throw format_error("write to '" + path + "' failed");
}

inline FlowCheckpoint load_model(const std::string& path) {
    detail::BinReader r(path);
    r.expect_magic("MNFC", "flow checkpoint");
    std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw format_error(path + ": unsupported checkpoint version " + std::to_string(version));
    std::size_t dim = r.u32();
    RqsConfig cfg;
    cfg.bins = static_cast<int>(r.u32());
    cfg.tail_bound = r.f64();
    cfg.min_bin = r.f64();
    cfg.min_derivative = r.f64();

    std::size_t n_layers = r.u32();
    std::vector<FlowModel::Layer> layers;
    layers.reserve(n_layers);
    std::size_t expected_params = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        FlowModel::Layer layer;
        std::uint8_t kind = r.u8();
        if (kind > 2) throw format_error(path + ": unknown layer kind");
        layer.kind = static_cast<FlowModel::Layer::Kind>(kind);
        switch (layer.kind) {
            case FlowModel::Layer::Kind::Coupling: {
                auto& c = layer.coupling;
                c.cond.resize(r.u32());
                for (auto& i : c.cond) i = r.u32();
                c.trans.resize(r.u32());
                for (auto& i : c.trans) i = r.u32();
                c.net_widths.resize(r.u32());
                for (auto& i : c.net_widths) i = r.u32();
                c.param_offset = r.u64();
                c.param_count = r.u64();
                for (std::size_t i : c.cond)
                    if (i >= dim) throw format_error(path + ": coupling index out of range");
                for (std::size_t i : c.trans)
                    if (i >= dim) throw format_error(path + ": coupling index out of range");
                if (c.net_widths.size() < 2 || c.net_widths.front() != c.cond.size() ||
                    c.net_widths.back() != c.trans.size() * cfg.params_per_coord())
                    throw format_error(path + ": conditioner widths inconsistent with split");
                expected_params = std::max(expected_params, c.param_offset + c.param_count);
                break;
            }
            case FlowModel::Layer::Kind::Orthogonal:
                layer.orthogonal.reflectors = r.u64();
                layer.orthogonal.param_offset = r.u64();
                expected_params = std::max(expected_params, layer.orthogonal.param_offset +
                                                                layer.orthogonal.reflectors * dim);
                break;
            case FlowModel::Layer::Kind::Permutation: {
                layer.permutation.perm.resize(r.u32());
                for (auto& i : layer.permutation.perm) i = r.u32();
                if (layer.permutation.perm.size() != dim)
                    throw format_error(path + ": permutation length mismatch");
                std::vector<bool> seen(dim, false);
                for (std::size_t i : layer.permutation.perm) {
                    if (i >= dim || seen[i])
                        throw format_error(path + ": corrupt permutation table");
                    seen[i] = true;
                }
                break;
            }
        }
        layers.push_back(std::move(layer));
    }

    std::size_t n_params = r.u64();
    if (n_params < expected_params)
        throw format_error(path + ": parameter block smaller than the layers require");
    std::vector<double> params = r.f64s(n_params);

    FlowCheckpoint out{FlowModel(dim, cfg, std::move(layers), std::move(params)), {}, {}};
    if (r.u8()) {
        out.data_mean = r.f64s(dim);
        out.data_std = r.f64s(dim);
    }
    return out;
}

// ---------------------------------------------------------------------------
// MLP decoder weights
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kMlpVersion = 1;

inline void save_mlp_decoder(const std::string& path, const MlpDecoder& g) {
    detail::BinWriter w(path);
    w.magic("MNMD");
    w.u32(kMlpVersion);
    const auto& layers = g.layers();
    w.u32(static_cast<std::uint32_t>(layers.size()));
    w.u32(static_cast<std::uint32_t>(layers.front().weight.cols));
    for (const auto& layer : layers) w.u32(static_cast<std::uint32_t>(layer.weight.rows));
    std::string act = activation_name(g.activation());
    w.u32(static_cast<std::uint32_t>(act.size()));
    for (char c : act) w.u8(static_cast<std::uint8_t>(c));
    for (const auto& layer : layers) {
        w.f64s(layer.weight.a);
        w.f64s(layer.bias);
    }
    if (!w.good()) throw format_error("write to '" + path + "' failed");
}

inline MlpDecoder load_mlp_decoder(const std::string& path) {
    detail::BinReader r(path);
    r.expect_magic("MNMD", "MLP decoder");
    std::uint32_t version = r.u32();
    if (version != kMlpVersion)
        throw format_error(path + ": unsupported MLP decoder version " + std::to_string(version));
    std::size_t n_layers = r.u32();
    if (n_layers == 0) throw format_error(path + ": no layers");
    std::vector<std::size_t> widths(n_layers + 1);
    widths[0] = r.u32();
    for (std::size_t l = 0; l < n_layers; ++l) widths[l + 1] = r.u32();
    std::string act(r.u32(), '\0');
    for (char& c : act) c = static_cast<char>(r.u8());
    Activation activation = activation_from_name(act);

    std::vector<MlpDecoder::Layer> layers(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        layers[l].weight = Matrix(widths[l + 1], widths[l]);
        layers[l].weight.a = r.f64s(widths[l + 1] * widths[l]);
        layers[l].bias = r.f64s(widths[l + 1]);
    }
    return MlpDecoder(std::move(layers), activation, "mlp:" + path);
}

} // namespace manent
