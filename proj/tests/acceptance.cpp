// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "orthograd/commands.hpp"
#include "orthograd/orthograd.hpp"

using namespace orthograd;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void check(int id, const char* title, const std::function<Verdict()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = body();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s AC%d %s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", id, title, v.detail.c_str(), secs);
    std::fflush(stdout);
    if (!v.pass) ++failures;
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

Batch random_batch(std::size_t dim, int classes, std::size_t k, Rng& rng) {
    Batch b;
    b.dim = dim;
    Vector x(dim);
    for (std::size_t n = 0; n < k; ++n) {
        for (double& v : x) v = rng.normal();
        b.push_back(x, static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
    }
    return b;
}

ParamVector random_params(const NetworkSpec& spec, Rng& rng, double scale) {
    ParamVector p = ParamVector::zeros(spec);
    for (double& v : p.flat) v = scale * rng.normal();
    return p;
}

double median(std::vector<double> xs) { return summarize(std::move(xs)).median; }

// ---------------------------------------------------------------------------

Verdict ac1_uis() {
    const double a = uis(81.06, 78.22, 81.04);
    const double b = uis(81.06, 75.47, 80.41);
    const bool ok = std::abs(a - 0.018) <= 0.0005 && std::abs(b - 0.038) <= 0.0005;
    return {ok, "uis = " + fmt("%.5f", a) + " (0.018), " + fmt("%.5f", b) + " (0.038)"};
}

Verdict ac2_orthogonality() {
    const NetworkSpec spec{{20, 64, 10}, Activation::relu};
    Rng rng(2024);
    double worst = 0.0;
    std::size_t min_rank = 1000;
    for (int trial = 0; trial < 100; ++trial) {
        const ParamVector p = random_params(spec, rng, 0.3);
        const Batch bu = random_batch(20, 10, 32, rng);
        const Batch br = random_batch(20, 10, 16, rng);
        const Projection pr = project_unlearn_gradient(p, bu, br, true);
        worst = std::max(worst, max_abs_cosine(pr.projected, pr.retain_grads));
        min_rank = std::min(min_rank, pr.basis.rank());
    }
    return {worst <= 1e-6, "d=" + std::to_string(spec.param_count()) + ", k=16, 100 trials, max |cos| = " +
                               fmt("%.2e", worst) + ", min rank " + std::to_string(min_rank)};
}

// |l_i(theta + eps d) - l_i(theta)| per retain sample.
Vector loss_changes(const ParamVector& p, std::span<const double> dir, double eps, const Batch& br) {
    ParamVector moved = p;
    axpy(eps, dir, moved.flat);
    const Vector l0 = per_sample_losses(p, br);
    const Vector l1 = per_sample_losses(moved, br);
    Vector d(l0.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(l1[i] - l0[i]);
    return d;
}

Verdict ac3_first_order_invariance() {
    const NetworkSpec spec{{20, 64, 10}, Activation::tanh};
    Rng rng(7);
    const ParamVector p = init_params(spec, 5);
    const Batch bu = random_batch(20, 10, 32, rng);
    const Batch br = random_batch(20, 10, 16, rng);
    const Projection pr = project_unlearn_gradient(p, bu, br, true);
    auto normalized = [](Vector v) {
        const double n = norm(v);
        for (double& x : v) x /= n;
        return v;
    };
    const Vector perp = normalized(pr.projected);
    const Vector raw = normalized(pr.unlearn_grad);

    const Vector a1 = loss_changes(p, perp, 1e-3, br);
    const Vector a2 = loss_changes(p, perp, 5e-4, br);
    double lo = 1e9, hi = 0.0;
    for (std::size_t i = 0; i < a1.size(); ++i) {
        const double r = a1[i] / a2[i];
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    const Vector b1 = loss_changes(p, raw, 1e-3, br);
    const Vector b2 = loss_changes(p, raw, 5e-4, br);
    std::size_t linear = 0;
    for (std::size_t i = 0; i < b1.size(); ++i) linear += (b1[i] / b2[i] >= 1.8 && b1[i] / b2[i] <= 2.2);
    const bool ok = lo >= 3.5 && hi <= 4.5 && linear >= 1;
    return {ok, "ratio along g_u_perp in [" + fmt("%.3f", lo) + ", " + fmt("%.3f", hi) + "] for all 16 samples; " +
                    std::to_string(linear) + "/16 samples in [1.8, 2.2] along g_u"};
}

Verdict ac4_mean_vs_per_sample() {
    const NetworkSpec spec{{20, 64, 10}, Activation::tanh};
    Rng rng(11);
    const ParamVector p = init_params(spec, 9);
    Vector x(20);
    for (double& v : x) v = rng.normal();
    // One input under three labels: the per-sample gradients pull against each other.
    Batch br;
    br.dim = 20;
    for (int y : {0, 1, 2}) br.push_back(x, y);
    Batch bu;
    bu.dim = 20;
    for (int n = 0; n < 4; ++n) {
        Vector xu = x;
        for (double& v : xu) v += 0.3 * rng.normal();
        bu.push_back(xu, 0);
    }
    const Projection mean = project_unlearn_gradient(p, bu, br, false);
    const Projection per = project_unlearn_gradient(p, bu, br, true);
    double worst_pair = -1.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j)
            worst_pair = std::max(worst_pair, cosine(mean.retain_grads.col(i), mean.retain_grads.col(j)));
    const double cm = max_abs_cosine(mean.projected, mean.retain_grads);
    const double cp = max_abs_cosine(per.projected, per.retain_grads);
    const bool ok = worst_pair < 0.0 && cm > 0.1 && cp < 1e-6;
    return {ok, "max pairwise retain cos = " + fmt("%.3f", worst_pair) + ", mean variant max |cos| = " +
                    fmt("%.3f", cm) + ", per-sample max |cos| = " + fmt("%.2e", cp)};
}

Verdict ac5_gradient_engine() {
    Rng rng(3);
    double fd_worst = 0.0;
    double mean_worst = 0.0;
    for (Activation act : {Activation::relu, Activation::tanh}) {
        const NetworkSpec spec{{3, 4, 2}, act};
        ParamVector p = random_params(spec, rng, 0.5);
        const Batch b = random_batch(3, 2, 6, rng);
        const LossGrad lg = mean_loss_and_grad(p, b);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double keep = p.flat[i];
            const double eps = 1e-6;
            p.flat[i] = keep + eps;
            const double up = mean_loss(p, b);
            p.flat[i] = keep - eps;
            const double down = mean_loss(p, b);
            p.flat[i] = keep;
            const double fd = (up - down) / (2 * eps);
            fd_worst = std::max(fd_worst, std::abs(fd - lg.grad[i]) / std::max(1.0, std::abs(lg.grad[i])));
        }
        const Vector cm = per_sample_grads(p, b).column_mean();
        for (std::size_t i = 0; i < cm.size(); ++i)
            mean_worst = std::max(mean_worst, std::abs(cm[i] - lg.grad[i]) / std::max(1.0, std::abs(lg.grad[i])));
    }
    const NetworkSpec spec10{{20, 64, 10}, Activation::relu};
    const double l0 = mean_loss(ParamVector::zeros(spec10), random_batch(20, 10, 8, rng));
    const bool ok = fd_worst <= 1e-5 && mean_worst <= 1e-12 && l0 == std::log(10.0);
    return {ok, "FD rel err " + fmt("%.2e", fd_worst) + ", column mean rel err " + fmt("%.2e", mean_worst) +
                    ", zero-param loss - ln 10 = " + fmt("%.1e", l0 - std::log(10.0))};
}

Verdict ac6_qr_oracle() {
    Rng rng(6);
    double proj_worst = 0.0;
    double ortho_worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t d = 2 + rng.below(499);
        const std::size_t k = 1 + rng.below(std::min<std::uint64_t>(32, d - 1));
        DenseMatrix g(d, k);
        for (std::size_t j = 0; j < k; ++j)
            for (double& x : g.col(j)) x = rng.normal();
        Vector v(d);
        for (double& x : v) x = rng.normal();
        const OrthonormalBasis q = qr_orthonormal_basis(g);
        const Vector a = project_onto_complement(v, q);
        const Vector b = least_squares_residual(v, g);
        double diff = 0.0;
        for (std::size_t i = 0; i < d; ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
        proj_worst = std::max(proj_worst, diff / std::max(1.0, norm(v)));
        for (std::size_t i = 0; i < q.rank(); ++i)
            for (std::size_t j = 0; j < q.rank(); ++j)
                ortho_worst = std::max(ortho_worst, std::abs(dot(q.columns[i], q.columns[j]) - (i == j ? 1.0 : 0.0)));
    }
    const bool ok = proj_worst <= 1e-7 && ortho_worst <= 1e-10;
    return {ok, "1000 trials, projection rel diff " + fmt("%.2e", proj_worst) + ", |Q^T Q - I|_max " +
                    fmt("%.2e", ortho_worst)};
}

Verdict ac7_lora() {
    Rng rng(8);
    const NetworkSpec spec{{20, 64, 10}, Activation::relu};
    const ParamVector base = random_params(spec, rng, 0.3);
    AdaptedModel m = attach_lora(base);
    const Batch b = random_batch(20, 10, 50, rng);
    const bool zero_delta = forward(m, b) == forward(base, b) && merge_lora(m).flat == base.flat;
    for (double& v : m.adapters.flat) v = 0.05 * rng.normal();
    const auto za = forward(m, b);
    const auto zm = forward(merge_lora(m), b);
    double worst = 0.0;
    for (std::size_t i = 0; i < za.size(); ++i)
        for (std::size_t c = 0; c < za[i].size(); ++c)
            worst = std::max(worst, std::abs(za[i][c] - zm[i][c]) / std::max(1.0, std::abs(za[i][c])));
    const double mult = m.adapters.multiplier();
    const bool ok = zero_delta && worst <= 1e-10 && mult == 4.0;
    return {ok, std::string("zero delta at attach ") + (zero_delta ? "bitwise" : "NOT bitwise") +
                    ", merged logits rel diff " + fmt("%.2e", worst) + ", multiplier " + fmt("%g", mult)};
}

// ---------------------------------------------------------------------------
// Desk-scale experiments on the shipped configs.

struct Desk {
    ExperimentConfig cfg;
    Dataset train, test;
    ParamVector theta_p;
    double train_acc = 0.0;
};

Desk load_desk(const std::string& name) {
    Desk d;
    d.cfg = load_experiment_config(std::string(ORTHOGRAD_CONFIG_DIR) + "/" + name);
    std::tie(d.train, d.test) = build_datasets(d.cfg.dataset);
    const auto& pc = d.cfg.pretrain;
    d.theta_p = pretrain(d.cfg.network, d.train, pc.epochs, pc.batch_size, pc.lr, pc.seed);
    d.train_acc = evaluate_accuracy(d.theta_p, d.train);
    return d;
}

std::vector<ResultRecord> run_seeds(const Desk& d, const Method& m, std::size_t n_r) {
    std::vector<ResultRecord> out;
    for (std::uint64_t seed : {0, 1, 2})
        out.push_back(run_unlearn_job(d.cfg, d.theta_p, d.train, d.test, {m, n_r, seed}).trace.back());
    return out;
}

std::vector<double> uis_of(const std::vector<ResultRecord>& rs) {
    std::vector<double> u;
    for (const auto& r : rs) u.push_back(r.uis);
    return u;
}

const Method kOrthoLora{MethodKind::OrthoGradPerSample, true};
const Method kNegGrad{MethodKind::NegGrad, false};

Verdict ac8_random_forget(const Desk& d, double pretrain_secs) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n_r = d.cfg.splits.retain_size;
    const auto og = run_seeds(d, kOrthoLora, n_r);
    const auto ng = run_seeds(d, kNegGrad, n_r);
    const double secs = pretrain_secs + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool all_stop = true;
    std::string epochs;
    for (const auto& r : og) {
        all_stop = all_stop && r.stopped_early && r.stop_epoch <= 30;
        epochs += (epochs.empty() ? "" : ",") + std::to_string(r.stop_epoch);
    }
    const double mo = median(uis_of(og));
    const double mn = median(uis_of(ng));
    const bool ok = d.train_acc >= 95.0 && all_stop && mo < mn && secs < 300.0;
    return {ok, "train acc " + fmt("%.2f", d.train_acc) + "%, orthograd+lora stop epochs " + epochs +
                    ", median UIS " + fmt("%.4f", mo) + " vs neggrad " + fmt("%.4f", mn) + ", pretrain+runs " +
                    fmt("%.0f", secs) + " s"};
}

Verdict ac9_class_forget(const Desk& d) {
    const auto og = run_seeds(d, kOrthoLora, d.cfg.splits.retain_size);
    bool ok = true;
    double worst_au = 0.0;
    double worst_gap = 0.0;
    std::string epochs;
    for (const auto& r : og) {
        const double gap = std::abs(r.A_test - r.A_p_test);
        ok = ok && r.stopped_early && r.A_u < 1.0 && r.stop_epoch <= 30 && gap <= 5.0;
        worst_au = std::max(worst_au, r.A_u);
        worst_gap = std::max(worst_gap, gap);
        epochs += (epochs.empty() ? "" : ",") + std::to_string(r.stop_epoch);
    }
    return {ok, "class " + std::to_string(d.cfg.splits.mode.forget_class) + ", 3 seeds, stop epochs " + epochs +
                    ", max A_u " + fmt("%.2f", worst_au) + "%, max |A_test - A_p_test| " + fmt("%.2f", worst_gap)};
}

Verdict ac10_retain_sweep(const Desk& d) {
    bool ok = true;
    std::string detail;
    std::vector<double> ng_medians;
    double ng_noise = 0.0;
    for (std::size_t n_r : {100, 500, 2000}) {
        const Stat so = summarize(uis_of(run_seeds(d, kOrthoLora, n_r)));
        const Stat sn = summarize(uis_of(run_seeds(d, kNegGrad, n_r)));
        ok = ok && so.median <= sn.median;
        ng_medians.push_back(sn.median);
        ng_noise = std::max(ng_noise, sn.std);
        detail += "N_r=" + std::to_string(n_r) + ": " + fmt("%.4f", so.median) + " vs " + fmt("%.4f", sn.median) + "; ";
    }
    const double spread = *std::max_element(ng_medians.begin(), ng_medians.end()) -
                          *std::min_element(ng_medians.begin(), ng_medians.end());
    ok = ok && spread <= ng_noise;
    return {ok, "median UIS orthograd+lora vs neggrad " + detail + "neggrad spread across sizes " +
                    fmt("%.2e", spread) + " (seed std " + fmt("%.4f", ng_noise) + ")"};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        files[fs::relative(e.path(), dir).string()] = s.str();
    }
    return files;
}

Verdict ac11_determinism() {
    std::ifstream in(std::string(ORTHOGRAD_CONFIG_DIR) + "/blobs_random.cfg");
    std::ostringstream text;
    text << in.rdbuf();
    const fs::path root = fs::temp_directory_path() / "orthograd_acceptance";
    fs::remove_all(root);
    std::vector<std::map<std::string, std::string>> snaps;
    std::ostringstream sink;
    UnlearnOptions opts;
    opts.seeds = {0, 1};
    for (const char* name : {"a", "b"}) {
        const fs::path dir = root / name;
        fs::create_directories(dir);
        const std::string cfg =
            std::regex_replace(text.str(), std::regex("\ndir *=[^\n]*"), "\ndir = " + (dir / "out").string());
        std::ofstream(dir / "exp.cfg") << cfg;
        const std::string path = (dir / "exp.cfg").string();
        if (cmd_pretrain(path, sink, sink) != kExitOk || cmd_unlearn(path, opts, sink, sink) != kExitOk)
            return {false, "command failed: " + sink.str()};
        snaps.push_back(snapshot(dir / "out"));
        // A second run over the same output directory must rewrite identical bytes.
        if (cmd_pretrain(path, sink, sink) != kExitOk || cmd_unlearn(path, opts, sink, sink) != kExitOk)
            return {false, "command failed: " + sink.str()};
        snaps.push_back(snapshot(dir / "out"));
    }
    const bool ok = snaps[0] == snaps[1] && snaps[0] == snaps[2] && snaps[0] == snaps[3];
    fs::remove_all(root);
    return {ok, std::to_string(snaps[0].size()) + " files (checkpoints, adapters, traces, results) compared over " +
                    "4 runs: " + (ok ? "byte-identical" : "differ")};
}

}  // namespace

int main() {
    check(1, "UIS reproduction", ac1_uis);
    check(2, "orthogonality suite", ac2_orthogonality);
    check(3, "first-order retain invariance", ac3_first_order_invariance);
    check(4, "mean vs per-sample separation", ac4_mean_vs_per_sample);
    check(5, "gradient engine", ac5_gradient_engine);
    check(6, "QR/projection oracle equivalence", ac6_qr_oracle);
    check(7, "LoRA fidelity", ac7_lora);

    std::optional<Desk> random_desk;
    double pretrain_secs = 0.0;
    std::string load_error;
    try {
        const auto t0 = std::chrono::steady_clock::now();
        random_desk = load_desk("blobs_random.cfg");
        pretrain_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } catch (const std::exception& e) {
        load_error = e.what();
    }
    auto need_desk = [&](const std::function<Verdict(const Desk&)>& f) {
        return [&, f]() -> Verdict {
            if (!random_desk) return {false, "desk setup failed: " + load_error};
            return f(*random_desk);
        };
    };
    check(8, "desk random-forget experiment", need_desk([&](const Desk& d) { return ac8_random_forget(d, pretrain_secs); }));
    check(9, "desk class-forget experiment", [] { return ac9_class_forget(load_desk("blobs_class.cfg")); });
    check(10, "retain-size robustness sweep", need_desk(ac10_retain_sweep));
    check(11, "determinism", ac11_determinism);

    std::printf("%s: %d of 11 criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
