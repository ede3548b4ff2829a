#pragma once

// Unlearning updates and the epoch loop.
//
// OrthoGrad step, per unlearn batch B_u and retain batch B_r:
//
//   g_u   = mean gradient of the loss on B_u
//   G_r   = per-sample retain gradients (one column per sample of B_r)
//   Q     = orthonormal basis of span(G_r)   (span of mean(G_r) for the Mean variant)
//   g_u⊥  = g_u - Q Q^T g_u
//   g     = alpha * mean(G_r) - (1 - alpha) * g_u⊥
//   theta = theta - lr * g
//
// The unlearn term enters with a minus sign so that the step ascends the
// unlearn loss. Projection is linear, so projecting g_u and then negating is
// the same as projecting -g_u.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orthograd/data.hpp"
#include "orthograd/error.hpp"
#include "orthograd/eval.hpp"
#include "orthograd/linalg.hpp"
#include "orthograd/lora.hpp"
#include "orthograd/method.hpp"
#include "orthograd/net.hpp"
#include "orthograd/rng.hpp"

namespace orthograd {

struct StoppingRule {
    enum class Mode { random_forget, class_forget };
    Mode mode = Mode::random_forget;
    // Random mode: pretrained test accuracy. NaN means "fill in from the
    // pretrained model on the run's splits".
    double target = std::numeric_limits<double>::quiet_NaN();
    double threshold = 0.5;

    static StoppingRule random_forget(double target = std::numeric_limits<double>::quiet_NaN(),
                                      double threshold = 0.5) {
        return {Mode::random_forget, target, threshold};
    }
    static StoppingRule class_forget(double threshold = 1.0) {
        return {Mode::class_forget, std::numeric_limits<double>::quiet_NaN(), threshold};
    }
};

struct UnlearnConfig {
    Method method;
    double alpha = 0.9;
    double lr = 0.001;
    std::size_t unlearn_batch = 32;
    std::size_t retain_batch = 32;
    std::size_t max_epochs = 30;
    StoppingRule stopping;
    std::uint64_t seed = 0;
    std::size_t lora_rank = kDefaultLoraRank;
    double lora_scale = kDefaultLoraScale;
    double rank_tol = 0.0;  // 0 selects default_rank_tolerance(dim)

    void validate() const {
        detail::require(alpha >= 0.0 && alpha <= 1.0, "UnlearnConfig: alpha must lie in [0, 1]");
        detail::require(lr > 0.0 && std::isfinite(lr), "UnlearnConfig: learning rate must be positive");
        detail::require(unlearn_batch >= 1 && retain_batch >= 1, "UnlearnConfig: batch sizes must be >= 1");
        detail::require(stopping.threshold > 0.0, "UnlearnConfig: stopping threshold must be positive");
        detail::require(rank_tol >= 0.0, "UnlearnConfig: rank tolerance must be non-negative");
    }
};

struct StepDiagnostics {
    std::size_t basis_rank = 0;
    double max_abs_cos = 0.0;  // max_i |cos(g_u⊥, g_r^i)| over non-zero retain columns
    double unlearn_grad_norm = 0.0;
    double projected_grad_norm = 0.0;
    double unlearn_loss = 0.0;
};

// alpha * retain_mean - (1 - alpha) * unlearn_perp. A zero weight drops its
// term entirely, so alpha = 1 returns retain_mean bit for bit.
inline Vector combine_update(std::span<const double> retain_mean, std::span<const double> unlearn_perp, double alpha) {
    detail::require(retain_mean.size() == unlearn_perp.size(), "combine_update: dimension mismatch");
    detail::require(alpha >= 0.0 && alpha <= 1.0, "combine_update: alpha must lie in [0, 1]");
    const double beta = 1.0 - alpha;
    Vector g(retain_mean.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = alpha * retain_mean[i];
        if (beta != 0.0) g[i] -= beta * unlearn_perp[i];
    }
    return g;
}

inline std::span<double> trainable(ParamVector& p) { return p.flat; }
inline std::span<double> trainable(AdaptedModel& m) { return m.trainable(); }

template <typename Model>
concept UnlearnModel = requires(Model& m, const Model& cm, const Batch& b) {
    { trainable(m) } -> std::same_as<std::span<double>>;
    { mean_loss_and_grad(cm, b) } -> std::same_as<LossGrad>;
    { per_sample_grads(cm, b) } -> std::same_as<DenseMatrix>;
};

// Orthogonal-complement projection of the unlearn gradient against the
// retain batch. Exposed separately so tests can inspect g_u⊥ directly.
struct Projection {
    Vector unlearn_grad;    // g_u
    Vector projected;       // g_u⊥
    Vector retain_mean;     // mean retain gradient
    DenseMatrix retain_grads;  // per-sample retain gradients
    OrthonormalBasis basis;
    double unlearn_loss = 0.0;
};

template <UnlearnModel Model>
Projection project_unlearn_gradient(const Model& model, const Batch& unlearn, const Batch& retain, bool per_sample,
                                    double rank_tol = 0.0) {
    Projection p;
    const LossGrad lu = mean_loss_and_grad(model, unlearn);
    p.unlearn_loss = lu.loss;
    p.unlearn_grad = lu.grad;
    p.retain_grads = per_sample_grads(model, retain);
    p.retain_mean = p.retain_grads.column_mean();
    const std::size_t dim = p.unlearn_grad.size();
    const double tol = rank_tol > 0.0 ? rank_tol : default_rank_tolerance(dim);
    if (per_sample) {
        p.basis = qr_orthonormal_basis(p.retain_grads, tol);
    } else {
        p.basis = qr_orthonormal_basis(DenseMatrix::from_columns({p.retain_mean}), tol);
    }
    p.projected = project_onto_complement(p.unlearn_grad, p.basis);
    return p;
}

inline double max_abs_cosine(std::span<const double> v, const DenseMatrix& columns) {
    double worst = 0.0;
    for (std::size_t i = 0; i < columns.cols(); ++i) worst = std::max(worst, std::abs(cosine(v, columns.col(i))));
    return worst;
}

// One OrthoGrad update applied in place to the model's trainable coordinates.
template <UnlearnModel Model>
StepDiagnostics orthograd_update(Model& model, const Batch& unlearn, const Batch& retain, const UnlearnConfig& cfg) {
    detail::require(cfg.method.kind == MethodKind::OrthoGradPerSample || cfg.method.kind == MethodKind::OrthoGradMean,
                    "orthograd_update: method must be an OrthoGrad variant");
    const Projection p = project_unlearn_gradient(model, unlearn, retain,
                                                  cfg.method.kind == MethodKind::OrthoGradPerSample, cfg.rank_tol);
    const Vector g = combine_update(p.retain_mean, p.projected, cfg.alpha);
    apply_update_inplace(trainable(model), g, cfg.lr);
    StepDiagnostics d;
    d.basis_rank = p.basis.rank();
    d.max_abs_cos = max_abs_cosine(p.projected, p.retain_grads);
    d.unlearn_grad_norm = norm(p.unlearn_grad);
    d.projected_grad_norm = norm(p.projected);
    d.unlearn_loss = p.unlearn_loss;
    return d;
}

// NegGrad: ascend the unlearn loss. Finetune: descend the retain loss.
// NegGradPlus: the OrthoGrad combiner without projection.
template <UnlearnModel Model>
void baseline_update(Model& model, const Batch& unlearn, const Batch& retain, const UnlearnConfig& cfg) {
    switch (cfg.method.kind) {
        case MethodKind::NegGrad: {
            LossGrad lu = mean_loss_and_grad(model, unlearn);
            for (double& x : lu.grad) x = -x;
            apply_update_inplace(trainable(model), lu.grad, cfg.lr);
            return;
        }
        case MethodKind::Finetune: {
            const LossGrad lr = mean_loss_and_grad(model, retain);
            apply_update_inplace(trainable(model), lr.grad, cfg.lr);
            return;
        }
        case MethodKind::NegGradPlus: {
            const LossGrad lu = mean_loss_and_grad(model, unlearn);
            const Vector retain_mean = per_sample_grads(model, retain).column_mean();
            const Vector g = combine_update(retain_mean, lu.grad, cfg.alpha);
            apply_update_inplace(trainable(model), g, cfg.lr);
            return;
        }
        default:
            throw InvalidInput("baseline_update: method must be neggrad, neggrad-plus or finetune");
    }
}

struct StepResult {
    ParamVector params;
    StepDiagnostics diagnostics;
};

inline StepResult orthograd_step(const ParamVector& params, const Batch& unlearn, const Batch& retain,
                                 const UnlearnConfig& cfg) {
    StepResult r{params, {}};
    r.diagnostics = orthograd_update(r.params, unlearn, retain, cfg);
    return r;
}

inline ParamVector baseline_step(const ParamVector& params, const Batch& unlearn, const Batch& retain,
                                 const UnlearnConfig& cfg) {
    ParamVector out = params;
    baseline_update(out, unlearn, retain, cfg);
    return out;
}

inline bool stopping_check(const AccuracyReport& report, const StoppingRule& rule) {
    if (rule.mode == StoppingRule::Mode::class_forget) return report.A_u < rule.threshold;
    return report.A_u <= rule.target + rule.threshold;
}

struct UnlearnResult {
    ParamVector params;                  // theta_u (adapters merged)
    std::optional<LoraAdapterSet> adapters;
    AccuracyReport pretrained;           // theta_p on the same splits
    std::vector<AccuracyReport> trace;   // epoch 0 (before any update) .. stop_epoch
    std::size_t stop_epoch = 0;
    bool stopped_early = false;          // stopping rule satisfied
    std::vector<StepDiagnostics> steps;  // OrthoGrad variants only
};

namespace detail {

// Endless sequence of retain indices: shuffled passes over [0, n), reshuffled
// when a batch no longer fits in the current pass.
class RetainSampler {
public:
    RetainSampler(std::size_t n, Rng rng) : order_(n), rng_(std::move(rng)) {
        std::iota(order_.begin(), order_.end(), 0);
        rng_.shuffle(std::span<std::size_t>(order_));
    }

    std::vector<std::size_t> next(std::size_t k) {
        k = std::min(k, order_.size());
        if (pos_ + k > order_.size()) {
            rng_.shuffle(std::span<std::size_t>(order_));
            pos_ = 0;
        }
        std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(pos_ + k));
        pos_ += k;
        return out;
    }

private:
    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t pos_ = 0;
};

template <UnlearnModel Model>
void run_epochs(Model& model, const Splits& splits, const UnlearnConfig& cfg, const StoppingRule& rule,
                UnlearnResult& result) {
    auto report = [&](std::size_t epoch) {
        AccuracyReport r = evaluate_splits(model, splits);
        r.epoch = epoch;
        r.method = cfg.method.tag();
        r.seed = cfg.seed;
        return r;
    };
    result.trace.push_back(report(0));
    if (stopping_check(result.trace.back(), rule)) {
        result.stopped_early = true;
        return;
    }
    // Separate streams: forget-batch order never depends on the retain set.
    Rng unlearn_rng = Rng::stream(cfg.seed, 0x0F01);
    RetainSampler retain_sampler(splits.retain.size(), Rng::stream(cfg.seed, 0x0F02));
    std::vector<std::size_t> order(splits.forget.size());
    std::iota(order.begin(), order.end(), 0);
    const bool orthograd =
        cfg.method.kind == MethodKind::OrthoGradPerSample || cfg.method.kind == MethodKind::OrthoGradMean;
    const bool needs_retain = cfg.method.kind != MethodKind::NegGrad;
    const Batch no_retain;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        unlearn_rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += cfg.unlearn_batch) {
            const std::size_t n = std::min(cfg.unlearn_batch, order.size() - start);
            const Batch bu = splits.forget.subset(std::span<const std::size_t>(order).subspan(start, n));
            Batch br;
            if (needs_retain) br = splits.retain.subset(retain_sampler.next(cfg.retain_batch));
            if (orthograd) {
                result.steps.push_back(orthograd_update(model, bu, br, cfg));
            } else {
                baseline_update(model, bu, needs_retain ? br : no_retain, cfg);
            }
        }
        result.trace.push_back(report(epoch));
        result.stop_epoch = epoch;
        if (stopping_check(result.trace.back(), rule)) {
            result.stopped_early = true;
            return;
        }
    }
}

}  // namespace detail

inline UnlearnResult run_unlearning(const ParamVector& pretrained, const Splits& splits, const UnlearnConfig& cfg) {
    cfg.validate();
    detail::require(!splits.forget.empty(), "run_unlearning: empty unlearn set");
    detail::require(!splits.retain.empty(), "run_unlearning: empty retain set");
    detail::require(!splits.test.empty(), "run_unlearning: empty test set");

    UnlearnResult result;
    result.pretrained = evaluate_splits(pretrained, splits);
    result.pretrained.method = "original";
    result.pretrained.seed = cfg.seed;
    StoppingRule rule = cfg.stopping;
    if (rule.mode == StoppingRule::Mode::random_forget && std::isnan(rule.target)) rule.target = result.pretrained.A_test;

    if (cfg.method.use_lora) {
        AdaptedModel model = attach_lora(pretrained, cfg.lora_rank, cfg.lora_scale, all_layers(pretrained.spec),
                                         cfg.seed);
        detail::run_epochs(model, splits, cfg, rule, result);
        result.params = merge_lora(model);
        result.adapters = model.adapters;
    } else {
        ParamVector model = pretrained;
        detail::run_epochs(model, splits, cfg, rule, result);
        result.params = std::move(model);
    }
    return result;
}

// UIS record for the final epoch of a run.
inline UISRecord final_uis(const UnlearnResult& r) { return make_uis_record(r.pretrained.A_test, r.trace.back()); }

}  // namespace orthograd
