#pragma once

// Low-rank adapters on the weight matrices of a base network. The effective
// weight of an adapted layer is W + (scale / rank) * B * A, with A (rank x n_in)
// random and B (n_out x rank) zero at attach time. Gradients through an
// AdaptedModel are taken with respect to the adapter coordinates only; the
// base parameters are never written until merge_lora.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "orthograd/error.hpp"
#include "orthograd/kvtext.hpp"
#include "orthograd/linalg.hpp"
#include "orthograd/net.hpp"
#include "orthograd/rng.hpp"

namespace orthograd {

inline constexpr std::size_t kDefaultLoraRank = 8;
inline constexpr double kDefaultLoraScale = 32.0;

struct AdapterBlock {
    std::size_t layer = 0;
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    std::size_t a_offset = 0;  // rank x n_in, row-major
    std::size_t b_offset = 0;  // n_out x rank, row-major
};

struct LoraAdapterSet {
    std::size_t rank = kDefaultLoraRank;
    double scale = kDefaultLoraScale;
    std::vector<AdapterBlock> blocks;  // ordered by layer index
    Vector flat;                       // adapter parameters

    double multiplier() const noexcept { return scale / static_cast<double>(rank); }

    std::vector<std::size_t> layers() const {
        std::vector<std::size_t> out;
        for (const auto& b : blocks) out.push_back(b.layer);
        return out;
    }

    const AdapterBlock* find(std::size_t layer) const {
        for (const auto& b : blocks)
            if (b.layer == layer) return &b;
        return nullptr;
    }
};

inline std::vector<std::size_t> all_layers(const NetworkSpec& spec) {
    std::vector<std::size_t> v(spec.depth());
    for (std::size_t l = 0; l < v.size(); ++l) v[l] = l;
    return v;
}

inline LoraAdapterSet make_adapter_layout(const NetworkSpec& spec, std::size_t rank, double scale,
                                          std::vector<std::size_t> layers) {
    detail::require(rank >= 1, "lora: rank must be >= 1");
    detail::require(scale > 0.0 && std::isfinite(scale), "lora: scale must be positive");
    detail::require(!layers.empty(), "lora: adapted layer set is empty");
    std::sort(layers.begin(), layers.end());
    detail::require(std::adjacent_find(layers.begin(), layers.end()) == layers.end(), "lora: duplicate layer index");
    LoraAdapterSet set;
    set.rank = rank;
    set.scale = scale;
    std::size_t offset = 0;
    for (std::size_t l : layers) {
        detail::require(l < spec.depth(), "lora: layer index " + std::to_string(l) + " out of range");
        AdapterBlock b;
        b.layer = l;
        b.n_in = spec.layer_sizes[l];
        b.n_out = spec.layer_sizes[l + 1];
        detail::require(rank <= std::min(b.n_in, b.n_out),
                        "lora: rank " + std::to_string(rank) + " exceeds min(" + std::to_string(b.n_in) + ", " +
                            std::to_string(b.n_out) + ") for layer " + std::to_string(l));
        b.a_offset = offset;
        offset += rank * b.n_in;
        b.b_offset = offset;
        offset += b.n_out * rank;
        set.blocks.push_back(b);
    }
    set.flat.assign(offset, 0.0);
    return set;
}

struct AdaptedModel {
    ParamVector base;
    LoraAdapterSet adapters;

    std::span<double> trainable() { return adapters.flat; }
    std::span<const double> trainable() const { return adapters.flat; }
    std::size_t trainable_size() const noexcept { return adapters.flat.size(); }
};

class AdaptedStack {
public:
    explicit AdaptedStack(const AdaptedModel& m) : m_(m), dense_(m.base) {}

    const NetworkSpec& spec() const { return m_.base.spec; }

    void affine(std::size_t l, std::span<const double> in, std::span<double> out) const {
        dense_.affine(l, in, out);
        const AdapterBlock* blk = m_.adapters.find(l);
        if (!blk) return;
        const std::size_t r = m_.adapters.rank;
        const double mult = m_.adapters.multiplier();
        const double* a = m_.adapters.flat.data() + blk->a_offset;
        const double* b = m_.adapters.flat.data() + blk->b_offset;
        Vector u(r, 0.0);
        for (std::size_t p = 0; p < r; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < blk->n_in; ++j) s += a[p * blk->n_in + j] * in[j];
            u[p] = s;
        }
        for (std::size_t i = 0; i < blk->n_out; ++i) {
            double s = 0.0;
            for (std::size_t p = 0; p < r; ++p) s += b[i * r + p] * u[p];
            if (s != 0.0) out[i] += mult * s;
        }
    }

    void transpose(std::size_t l, std::span<const double> in, std::span<double> out) const {
        dense_.transpose(l, in, out);
        const AdapterBlock* blk = m_.adapters.find(l);
        if (!blk) return;
        const std::size_t r = m_.adapters.rank;
        const double mult = m_.adapters.multiplier();
        const double* a = m_.adapters.flat.data() + blk->a_offset;
        const double* b = m_.adapters.flat.data() + blk->b_offset;
        Vector w(r, 0.0);
        for (std::size_t i = 0; i < blk->n_out; ++i)
            for (std::size_t p = 0; p < r; ++p) w[p] += b[i * r + p] * in[i];
        for (std::size_t p = 0; p < r; ++p) {
            if (w[p] == 0.0) continue;
            for (std::size_t j = 0; j < blk->n_in; ++j) out[j] += mult * w[p] * a[p * blk->n_in + j];
        }
    }

private:
    const AdaptedModel& m_;
    DenseStack dense_;
};

namespace detail {

// Gradient w.r.t. adapter coordinates for one sample:
//   dB = mult * delta (A a)^T,   dA = mult * (B^T delta) a^T
inline void scatter_adapters(const LoraAdapterSet& set, const SampleTrace& t, std::span<double> out) {
    const std::size_t r = set.rank;
    const double mult = set.multiplier();
    for (const auto& blk : set.blocks) {
        const Vector& delta = t.deltas[blk.layer];
        const Vector& a_in = t.inputs[blk.layer];
        const double* a = set.flat.data() + blk.a_offset;
        const double* b = set.flat.data() + blk.b_offset;
        Vector u(r, 0.0);
        Vector w(r, 0.0);
        for (std::size_t p = 0; p < r; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < blk.n_in; ++j) s += a[p * blk.n_in + j] * a_in[j];
            u[p] = s;
        }
        for (std::size_t i = 0; i < blk.n_out; ++i)
            for (std::size_t p = 0; p < r; ++p) w[p] += b[i * r + p] * delta[i];
        for (std::size_t p = 0; p < r; ++p) {
            double* da = out.data() + blk.a_offset + p * blk.n_in;
            for (std::size_t j = 0; j < blk.n_in; ++j) da[j] = mult * w[p] * a_in[j];
        }
        for (std::size_t i = 0; i < blk.n_out; ++i) {
            double* db = out.data() + blk.b_offset + i * r;
            for (std::size_t p = 0; p < r; ++p) db[p] = mult * delta[i] * u[p];
        }
    }
}

}  // namespace detail

inline AdaptedModel attach_lora(const ParamVector& base, std::size_t rank, double scale,
                                const std::vector<std::size_t>& layers, std::uint64_t seed) {
    AdaptedModel m;
    m.base = base;
    m.adapters = make_adapter_layout(base.spec, rank, scale, layers);
    Rng rng = Rng::stream(seed, 0x10A4);
    for (const auto& blk : m.adapters.blocks) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(blk.n_in));
        double* a = m.adapters.flat.data() + blk.a_offset;
        for (std::size_t i = 0; i < rank * blk.n_in; ++i) a[i] = sd * rng.normal();
    }
    return m;
}

inline AdaptedModel attach_lora(const ParamVector& base, std::size_t rank = kDefaultLoraRank,
                                double scale = kDefaultLoraScale, std::uint64_t seed = 0) {
    return attach_lora(base, rank, scale, all_layers(base.spec), seed);
}

// W_l += (scale / rank) * B_l A_l for each adapted layer; everything else is copied.
inline ParamVector merge_lora(const ParamVector& base, const LoraAdapterSet& adapters) {
    detail::require(adapters.flat.size() ==
                        make_adapter_layout(base.spec, adapters.rank, adapters.scale, adapters.layers()).flat.size(),
                    "merge_lora: adapter shapes do not match the base network");
    ParamVector out = base;
    const std::size_t r = adapters.rank;
    const double mult = adapters.multiplier();
    for (const auto& blk : adapters.blocks) {
        detail::require(blk.n_in == base.layout[blk.layer].n_in && blk.n_out == base.layout[blk.layer].n_out,
                        "merge_lora: shape mismatch at layer " + std::to_string(blk.layer));
        const double* a = adapters.flat.data() + blk.a_offset;
        const double* b = adapters.flat.data() + blk.b_offset;
        auto w = out.weights(blk.layer);
        for (std::size_t i = 0; i < blk.n_out; ++i) {
            for (std::size_t j = 0; j < blk.n_in; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < r; ++p) s += b[i * r + p] * a[p * blk.n_in + j];
                if (s != 0.0) w[i * blk.n_in + j] += mult * s;
            }
        }
    }
    return out;
}

inline ParamVector merge_lora(const AdaptedModel& m) { return merge_lora(m.base, m.adapters); }

inline std::vector<Vector> forward(const AdaptedModel& m, const Samples& inputs) {
    return detail::forward_impl(AdaptedStack(m), inputs);
}

inline LossGrad mean_loss_and_grad(const AdaptedModel& m, const Batch& batch) {
    return detail::mean_loss_and_grad_impl(AdaptedStack(m), batch, m.trainable_size(),
                                           [&](const detail::SampleTrace& t, std::span<double> out) {
                                               detail::scatter_adapters(m.adapters, t, out);
                                           });
}

inline DenseMatrix per_sample_grads(const AdaptedModel& m, const Batch& batch) {
    return detail::per_sample_grads_impl(AdaptedStack(m), batch, m.trainable_size(),
                                         [&](const detail::SampleTrace& t, std::span<double> out) {
                                             detail::scatter_adapters(m.adapters, t, out);
                                         });
}

inline Vector per_sample_losses(const AdaptedModel& m, const Batch& batch) {
    return detail::per_sample_losses_impl(AdaptedStack(m), batch);
}

inline double mean_loss(const AdaptedModel& m, const Batch& batch) {
    return detail::anchored_mean(per_sample_losses(m, batch));
}

inline double evaluate_accuracy(const AdaptedModel& m, const Samples& data) {
    return detail::accuracy_impl(AdaptedStack(m), data);
}

// ---------------------------------------------------------------------------
// Adapter checkpoints share the base checkpoint framing with their own magic.

inline constexpr const char* kLoraCheckpointMagic = "ORTHOGRAD-LORA v1";

struct LoraCheckpoint {
    NetworkSpec spec;
    LoraAdapterSet adapters;
    std::uint64_t seed = 0;
};

inline void write_lora_checkpoint(std::ostream& out, const NetworkSpec& spec, const LoraAdapterSet& adapters,
                                  std::uint64_t seed) {
    std::string layers;
    for (std::size_t l : adapters.layers()) layers += (layers.empty() ? "" : ",") + std::to_string(l);
    char scale[64];
    std::snprintf(scale, sizeof scale, "%.17g", adapters.scale);
    out << kLoraCheckpointMagic << '\n'
        << "[checkpoint]\n"
        << "layers = " << format_layers(spec) << '\n'
        << "activation = " << to_string(spec.activation) << '\n'
        << "seed = " << seed << '\n'
        << "d = " << adapters.flat.size() << '\n'
        << "[lora]\n"
        << "rank = " << adapters.rank << '\n'
        << "scale = " << scale << '\n'
        << "adapted_layers = " << layers << '\n'
        << "[payload]\n";
    detail::write_f64_le(out, adapters.flat);
}

inline LoraCheckpoint read_lora_checkpoint(std::istream& in, const std::string& source) {
    detail::expect_magic(in, kLoraCheckpointMagic, source);
    const KvDocument meta = KvDocument::parse(in, source, "[payload]");
    if (!meta.stopped()) throw ParseError(source + ": missing [payload] marker");
    meta.check_keys("checkpoint", {"layers", "activation", "seed", "d"});
    meta.check_keys("lora", {"rank", "scale", "adapted_layers"});
    LoraCheckpoint ck;
    ck.spec.layer_sizes = parse_size_list(meta.require("checkpoint", "layers"), meta.where("checkpoint", "layers"));
    ck.spec.activation = parse_activation(meta.require("checkpoint", "activation"));
    ck.spec.validate();
    ck.seed = static_cast<std::uint64_t>(meta.get_int("checkpoint", "seed", 0));
    const auto rank = static_cast<std::size_t>(meta.get_int("lora", "rank", 0));
    const double scale = meta.get_double("lora", "scale", 0.0);
    const auto layers =
        parse_size_list(meta.require("lora", "adapted_layers"), meta.where("lora", "adapted_layers"));
    try {
        ck.adapters = make_adapter_layout(ck.spec, rank, scale, layers);
    } catch (const InvalidInput& e) {
        throw ParseError(source + ": " + e.what());
    }
    const auto d = static_cast<std::size_t>(meta.get_int("checkpoint", "d", -1));
    if (d != ck.adapters.flat.size()) throw ParseError(source + ": d does not match adapter layout");
    ck.adapters.flat = detail::read_f64_le(in, d, source);
    return ck;
}

inline void save_lora_checkpoint(const std::string& path, const NetworkSpec& spec, const LoraAdapterSet& adapters,
                                 std::uint64_t seed) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write adapter checkpoint '" + path + "'");
    write_lora_checkpoint(out, spec, adapters, seed);
    if (!out) throw IoError("failed writing adapter checkpoint '" + path + "'");
}

inline LoraCheckpoint load_lora_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open adapter checkpoint '" + path + "'");
    return read_lora_checkpoint(in, path);
}

}  // namespace orthograd
