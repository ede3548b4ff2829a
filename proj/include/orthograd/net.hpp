#pragma once

// Fully connected classifier with softmax cross-entropy loss.
//
// Parameters live in one flat vector: for each layer, the row-major
// n_out x n_in weight block followed by the n_out bias block. Gradients are
// produced in the same layout, either as a batch mean or one column per
// sample.

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "orthograd/error.hpp"
#include "orthograd/kvtext.hpp"
#include "orthograd/linalg.hpp"
#include "orthograd/rng.hpp"
#include "orthograd/samples.hpp"

namespace orthograd {

enum class Activation { relu, tanh };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ParseError("unknown activation '" + s + "' (expected relu or tanh)");
}

struct NetworkSpec {
    std::vector<std::size_t> layer_sizes;  // n_0 (inputs) ... n_L (classes)
    Activation activation = Activation::relu;

    std::size_t depth() const noexcept { return layer_sizes.empty() ? 0 : layer_sizes.size() - 1; }
    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t classes() const { return layer_sizes.back(); }

    std::size_t param_count() const {
        std::size_t d = 0;
        for (std::size_t l = 0; l < depth(); ++l) d += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
        return d;
    }

    void validate() const {
        detail::require(layer_sizes.size() >= 2, "NetworkSpec: need at least one layer");
        for (std::size_t n : layer_sizes) detail::require(n >= 1, "NetworkSpec: layer sizes must be >= 1");
    }

    bool operator==(const NetworkSpec&) const = default;
};

inline std::string format_layers(const NetworkSpec& spec) {
    std::string s;
    for (std::size_t i = 0; i < spec.layer_sizes.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(spec.layer_sizes[i]);
    }
    return s;
}

inline std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& where) {
    std::vector<std::size_t> out;
    for (const auto& item : detail::split(text, ',')) {
        const auto v = detail::parse_int(item, where);
        if (v < 0) throw ParseError(where + ": negative size");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

struct LayerBlock {
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
};

inline std::vector<LayerBlock> make_layout(const NetworkSpec& spec) {
    std::vector<LayerBlock> layout;
    std::size_t offset = 0;
    for (std::size_t l = 0; l < spec.depth(); ++l) {
        LayerBlock b;
        b.n_in = spec.layer_sizes[l];
        b.n_out = spec.layer_sizes[l + 1];
        b.weight_offset = offset;
        offset += b.n_in * b.n_out;
        b.bias_offset = offset;
        offset += b.n_out;
        layout.push_back(b);
    }
    return layout;
}

struct ParamVector {
    NetworkSpec spec;
    std::vector<LayerBlock> layout;
    Vector flat;

    static ParamVector zeros(const NetworkSpec& spec) {
        spec.validate();
        ParamVector p;
        p.spec = spec;
        p.layout = make_layout(spec);
        p.flat.assign(spec.param_count(), 0.0);
        return p;
    }

    std::size_t size() const noexcept { return flat.size(); }

    std::span<double> weights(std::size_t l) {
        const auto& b = layout[l];
        return {flat.data() + b.weight_offset, b.n_in * b.n_out};
    }
    std::span<const double> weights(std::size_t l) const {
        const auto& b = layout[l];
        return {flat.data() + b.weight_offset, b.n_in * b.n_out};
    }
    std::span<double> bias(std::size_t l) {
        const auto& b = layout[l];
        return {flat.data() + b.bias_offset, b.n_out};
    }
    std::span<const double> bias(std::size_t l) const {
        const auto& b = layout[l];
        return {flat.data() + b.bias_offset, b.n_out};
    }
};

struct LossGrad {
    double loss = 0.0;
    Vector grad;
};

// A stack of affine layers as seen by the backprop engine. `affine` computes
// W_l x + b_l and `transpose` computes W_l^T y for the effective weights.
template <typename S>
concept LayerStack = requires(const S& s, std::size_t l, std::span<const double> in, std::span<double> out) {
    { s.spec() } -> std::convertible_to<const NetworkSpec&>;
    s.affine(l, in, out);
    s.transpose(l, in, out);
};

class DenseStack {
public:
    explicit DenseStack(const ParamVector& p) : p_(p) {}

    const NetworkSpec& spec() const { return p_.spec; }

    void affine(std::size_t l, std::span<const double> in, std::span<double> out) const {
        const auto& blk = p_.layout[l];
        const double* w = p_.flat.data() + blk.weight_offset;
        const double* b = p_.flat.data() + blk.bias_offset;
        for (std::size_t i = 0; i < blk.n_out; ++i) {
            double s = 0.0;
            const double* row = w + i * blk.n_in;
            for (std::size_t j = 0; j < blk.n_in; ++j) s += row[j] * in[j];
            out[i] = s + b[i];
        }
    }

    void transpose(std::size_t l, std::span<const double> in, std::span<double> out) const {
        const auto& blk = p_.layout[l];
        const double* w = p_.flat.data() + blk.weight_offset;
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t i = 0; i < blk.n_out; ++i) {
            const double* row = w + i * blk.n_in;
            for (std::size_t j = 0; j < blk.n_in; ++j) out[j] += row[j] * in[i];
        }
    }

private:
    const ParamVector& p_;
};

namespace detail {

// Per-sample record of one forward/backward pass. inputs[l] is the input to
// layer l; deltas[l] is d(loss)/d(pre-activation output of layer l).
struct SampleTrace {
    std::vector<Vector> inputs;
    std::vector<Vector> deltas;
    double loss = 0.0;
};

inline void check_batch(const NetworkSpec& spec, const Samples& batch, const char* who) {
    require(!batch.empty(), std::string(who) + ": empty batch");
    require(batch.dim == spec.input_dim(), std::string(who) + ": input dimension " + std::to_string(batch.dim) +
                                               " does not match network input " + std::to_string(spec.input_dim()));
    require(batch.inputs.size() == batch.size() * batch.dim, std::string(who) + ": malformed batch");
    for (int y : batch.labels)
        require(y >= 0 && static_cast<std::size_t>(y) < spec.classes(),
                std::string(who) + ": label " + std::to_string(y) + " out of range");
}

inline void activate(Activation act, std::span<double> z) {
    if (act == Activation::relu) {
        for (double& x : z) x = x > 0.0 ? x : 0.0;
    } else {
        for (double& x : z) x = std::tanh(x);
    }
}

// Softmax cross-entropy with max subtraction; writes d(loss)/d(logits).
inline double softmax_xent(std::span<const double> logits, int label, std::span<double> dlogits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        dlogits[c] = std::exp(logits[c] - mx);
        sum += dlogits[c];
    }
    for (double& p : dlogits) p /= sum;
    dlogits[static_cast<std::size_t>(label)] -= 1.0;
    return std::log(sum) - (logits[static_cast<std::size_t>(label)] - mx);
}

template <LayerStack S>
Vector forward_one(const S& stack, std::span<const double> x) {
    const NetworkSpec& spec = stack.spec();
    Vector cur(x.begin(), x.end());
    for (std::size_t l = 0; l < spec.depth(); ++l) {
        Vector next(spec.layer_sizes[l + 1]);
        stack.affine(l, cur, next);
        if (l + 1 < spec.depth()) activate(spec.activation, next);
        cur = std::move(next);
    }
    return cur;
}

template <LayerStack S>
SampleTrace backprop(const S& stack, std::span<const double> x, int label) {
    const NetworkSpec& spec = stack.spec();
    const std::size_t depth = spec.depth();
    SampleTrace t;
    t.inputs.resize(depth);
    t.deltas.resize(depth);
    t.inputs[0].assign(x.begin(), x.end());
    Vector logits;
    for (std::size_t l = 0; l < depth; ++l) {
        Vector z(spec.layer_sizes[l + 1]);
        stack.affine(l, t.inputs[l], z);
        if (l + 1 < depth) {
            activate(spec.activation, z);
            t.inputs[l + 1] = std::move(z);
        } else {
            logits = std::move(z);
        }
    }
    t.deltas[depth - 1].resize(spec.classes());
    t.loss = softmax_xent(logits, label, t.deltas[depth - 1]);
    for (std::size_t l = depth - 1; l > 0; --l) {
        Vector back(spec.layer_sizes[l]);
        stack.transpose(l, t.deltas[l], back);
        const Vector& a = t.inputs[l];
        for (std::size_t j = 0; j < back.size(); ++j) {
            if (spec.activation == Activation::relu) {
                back[j] = a[j] > 0.0 ? back[j] : 0.0;
            } else {
                back[j] *= 1.0 - a[j] * a[j];
            }
        }
        t.deltas[l - 1] = std::move(back);
    }
    return t;
}

// Writes the full-parameter gradient of one sample into `out`.
inline void scatter_dense(const std::vector<LayerBlock>& layout, const SampleTrace& t, std::span<double> out) {
    for (std::size_t l = 0; l < layout.size(); ++l) {
        const auto& blk = layout[l];
        const Vector& delta = t.deltas[l];
        const Vector& a = t.inputs[l];
        for (std::size_t i = 0; i < blk.n_out; ++i) {
            double* row = out.data() + blk.weight_offset + i * blk.n_in;
            for (std::size_t j = 0; j < blk.n_in; ++j) row[j] = delta[i] * a[j];
            out[blk.bias_offset + i] = delta[i];
        }
    }
}

// Mean of per-sample values, anchored at the first so that identical values
// average to themselves exactly.
inline double anchored_mean(std::span<const double> xs) {
    const double anchor = xs.front();
    double s = 0.0;
    for (double x : xs) s += x - anchor;
    return anchor + s / static_cast<double>(xs.size());
}

// Gradient computations shared by the full-parameter and adapter models.
// `scatter(trace, out)` maps one sample's trace to a gradient of size `dim`.
template <LayerStack S, typename Scatter>
DenseMatrix per_sample_grads_impl(const S& stack, const Batch& batch, std::size_t dim, Scatter&& scatter,
                                  Vector* losses = nullptr) {
    check_batch(stack.spec(), batch, "per_sample_grads");
    DenseMatrix g(dim, batch.size());
    if (losses) losses->resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const SampleTrace t = backprop(stack, batch.row(i), batch.labels[i]);
        scatter(t, g.col(i));
        if (losses) (*losses)[i] = t.loss;
    }
    return g;
}

template <LayerStack S, typename Scatter>
LossGrad mean_loss_and_grad_impl(const S& stack, const Batch& batch, std::size_t dim, Scatter&& scatter) {
    check_batch(stack.spec(), batch, "mean_loss_and_grad");
    LossGrad out;
    out.grad.assign(dim, 0.0);
    Vector column(dim);
    Vector losses(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const SampleTrace t = backprop(stack, batch.row(i), batch.labels[i]);
        scatter(t, column);
        axpy(1.0, column, out.grad);
        losses[i] = t.loss;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (double& x : out.grad) x *= inv;
    out.loss = anchored_mean(losses);
    return out;
}

template <LayerStack S>
std::vector<Vector> forward_impl(const S& stack, const Samples& inputs) {
    require(inputs.dim == stack.spec().input_dim(), "forward: input dimension mismatch");
    std::vector<Vector> logits;
    logits.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) logits.push_back(forward_one(stack, inputs.row(i)));
    return logits;
}

template <LayerStack S>
Vector per_sample_losses_impl(const S& stack, const Batch& batch) {
    check_batch(stack.spec(), batch, "per_sample_losses");
    Vector out(batch.size());
    Vector scratch(stack.spec().classes());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Vector z = forward_one(stack, batch.row(i));
        out[i] = softmax_xent(z, batch.labels[i], scratch);
    }
    return out;
}

// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> z) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < z.size(); ++c)
        if (z[c] > z[best]) best = c;
    return best;
}

template <LayerStack S>
double accuracy_impl(const S& stack, const Samples& data) {
    require(!data.empty(), "evaluate_accuracy: empty dataset");
    require(data.dim == stack.spec().input_dim(), "evaluate_accuracy: input dimension mismatch");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Vector z = forward_one(stack, data.row(i));
        if (static_cast<int>(argmax(z)) == data.labels[i]) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace detail

inline ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
    ParamVector p = ParamVector::zeros(spec);
    Rng rng(seed);
    for (std::size_t l = 0; l < spec.depth(); ++l) {
        const double fan_in = static_cast<double>(p.layout[l].n_in);
        const double var = spec.activation == Activation::relu ? 2.0 / fan_in : 1.0 / fan_in;
        const double sd = std::sqrt(var);
        for (double& w : p.weights(l)) w = sd * rng.normal();
    }
    return p;
}

inline std::vector<Vector> forward(const ParamVector& params, const Samples& inputs) {
    return detail::forward_impl(DenseStack(params), inputs);
}

inline LossGrad mean_loss_and_grad(const ParamVector& params, const Batch& batch) {
    return detail::mean_loss_and_grad_impl(DenseStack(params), batch, params.size(),
                                           [&](const detail::SampleTrace& t, std::span<double> out) {
                                               detail::scatter_dense(params.layout, t, out);
                                           });
}

inline DenseMatrix per_sample_grads(const ParamVector& params, const Batch& batch) {
    return detail::per_sample_grads_impl(DenseStack(params), batch, params.size(),
                                         [&](const detail::SampleTrace& t, std::span<double> out) {
                                             detail::scatter_dense(params.layout, t, out);
                                         });
}

inline Vector per_sample_losses(const ParamVector& params, const Batch& batch) {
    return detail::per_sample_losses_impl(DenseStack(params), batch);
}

inline double mean_loss(const ParamVector& params, const Batch& batch) {
    const Vector l = per_sample_losses(params, batch);
    return detail::anchored_mean(l);
}

inline double evaluate_accuracy(const ParamVector& params, const Samples& data) {
    return detail::accuracy_impl(DenseStack(params), data);
}

// params - lr * g over the full parameter vector.
inline void apply_update_inplace(std::span<double> params, std::span<const double> g, double lr) {
    detail::require(params.size() == g.size(), "apply_update: dimension mismatch (" + std::to_string(params.size()) +
                                                   " vs " + std::to_string(g.size()) + ")");
    detail::require(lr >= 0.0, "apply_update: learning rate must be non-negative");
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * g[i];
}

inline ParamVector apply_update(const ParamVector& params, std::span<const double> g, double lr) {
    ParamVector out = params;
    apply_update_inplace(out.flat, g, lr);
    return out;
}

// Mini-batch gradient descent with a fresh shuffle each epoch.
inline ParamVector pretrain(const NetworkSpec& spec, const Dataset& data, std::size_t epochs, std::size_t batch_size,
                            double lr, std::uint64_t seed) {
    detail::require(batch_size >= 1, "pretrain: batch size must be >= 1");
    detail::require(lr > 0.0, "pretrain: learning rate must be positive");
    ParamVector p = init_params(spec, seed);
    if (epochs == 0) return p;
    detail::check_batch(spec, data, "pretrain");
    Rng rng = Rng::stream(seed, 1);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t e = 0; e < epochs; ++e) {
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t n = std::min(batch_size, order.size() - start);
            const Batch batch = data.subset(std::span<const std::size_t>(order).subspan(start, n));
            const LossGrad lg = mean_loss_and_grad(p, batch);
            apply_update_inplace(p.flat, lg.grad, lr);
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Checkpoints: a magic line, a key=value metadata block closed by "[payload]",
// then the values as little-endian IEEE-754 binary64.

namespace detail {

inline void write_f64_le(std::ostream& out, std::span<const double> values) {
    std::vector<unsigned char> buf(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline Vector read_f64_le(std::istream& in, std::size_t count, const std::string& source) {
    std::vector<unsigned char> buf(count * 8);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size())
        throw ParseError(source + ": truncated payload (expected " + std::to_string(count) + " values)");
    if (in.peek() != std::char_traits<char>::eof()) throw ParseError(source + ": trailing bytes after payload");
    Vector out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
        out[i] = std::bit_cast<double>(bits);
    }
    return out;
}

inline void expect_magic(std::istream& in, const std::string& magic, const std::string& source) {
    std::string line;
    if (!std::getline(in, line) || line != magic)
        throw ParseError(source + ": missing header '" + magic + "'");
}

}  // namespace detail

inline constexpr const char* kCheckpointMagic = "ORTHOGRAD-CKPT v1";

struct Checkpoint {
    ParamVector params;
    std::uint64_t seed = 0;
};

inline void write_checkpoint(std::ostream& out, const ParamVector& params, std::uint64_t seed) {
    out << kCheckpointMagic << '\n'
        << "[checkpoint]\n"
        << "layers = " << format_layers(params.spec) << '\n'
        << "activation = " << to_string(params.spec.activation) << '\n'
        << "seed = " << seed << '\n'
        << "d = " << params.size() << '\n'
        << "[payload]\n";
    detail::write_f64_le(out, params.flat);
}

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source) {
    detail::expect_magic(in, kCheckpointMagic, source);
    const KvDocument meta = KvDocument::parse(in, source, "[payload]");
    if (!meta.stopped()) throw ParseError(source + ": missing [payload] marker");
    meta.check_keys("checkpoint", {"layers", "activation", "seed", "d"});
    NetworkSpec spec;
    spec.layer_sizes = parse_size_list(meta.require("checkpoint", "layers"), meta.where("checkpoint", "layers"));
    spec.activation = parse_activation(meta.require("checkpoint", "activation"));
    spec.validate();
    Checkpoint ck;
    ck.seed = static_cast<std::uint64_t>(meta.get_int("checkpoint", "seed", 0));
    const auto d = static_cast<std::size_t>(meta.get_int("checkpoint", "d", -1));
    if (d != spec.param_count())
        throw ParseError(source + ": d = " + std::to_string(d) + " does not match layers (" +
                         std::to_string(spec.param_count()) + ")");
    ck.params = ParamVector::zeros(spec);
    ck.params.flat = detail::read_f64_le(in, d, source);
    return ck;
}

inline void save_checkpoint(const std::string& path, const ParamVector& params, std::uint64_t seed) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    write_checkpoint(out, params, seed);
    if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    return read_checkpoint(in, path);
}

}  // namespace orthograd
