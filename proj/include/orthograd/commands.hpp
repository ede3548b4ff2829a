#pragma once

// Implementations of the `orthograd` subcommands. Exit codes: 0 success,
// 1 runtime failure, 2 usage or configuration failure.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "orthograd/config.hpp"
#include "orthograd/data.hpp"
#include "orthograd/eval.hpp"
#include "orthograd/lora.hpp"
#include "orthograd/method.hpp"
#include "orthograd/net.hpp"
#include "orthograd/unlearn.hpp"

namespace orthograd {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct UnlearnOptions {
    std::vector<std::string> methods{"all"};  // method tags, or "all"
    std::vector<std::uint64_t> seeds{0};
    std::vector<std::size_t> retain_sizes;  // empty: [splits] retain_size
    std::size_t threads = 0;                // 0: ORTHOGRAD_THREADS or hardware concurrency
};

namespace detail {

// Worker slots: explicit request, else ORTHOGRAD_THREADS, else the hardware
// count; never more than the number of jobs.
inline std::size_t worker_slots(std::size_t requested, std::size_t jobs) {
    std::size_t n = requested;
    if (n == 0) {
        n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
        if (const char* env = std::getenv("ORTHOGRAD_THREADS")) {
            try {
                const auto v = detail::parse_int(env, "ORTHOGRAD_THREADS");
                if (v >= 1) n = std::min(n, static_cast<std::size_t>(v));
            } catch (const ParseError&) {
            }
        }
    }
    return std::max<std::size_t>(1, std::min(n, jobs));
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

inline std::vector<Method> expand_methods(const std::vector<std::string>& tags, const ExperimentConfig& cfg) {
    std::vector<Method> out;
    for (const auto& tag : tags) {
        if (tag == "all") {
            for (MethodKind m : kAllMethods) out.push_back(cfg.unlearn.at(m).method);
        } else {
            out.push_back(parse_method_tag(tag));
        }
    }
    std::vector<Method> unique;
    for (const auto& m : out)
        if (std::find(unique.begin(), unique.end(), m) == unique.end()) unique.push_back(m);
    return unique;
}

inline std::string run_stem(const std::string& tag, std::size_t retain_size, std::uint64_t seed) {
    return tag + "_nr" + std::to_string(retain_size) + "_seed" + std::to_string(seed);
}

}  // namespace detail

struct UnlearnJob {
    Method method;
    std::size_t retain_size = 0;
    std::uint64_t seed = 0;  // offset added to the split and unlearn seeds
};

struct JobOutcome {
    UnlearnResult result;
    std::vector<ResultRecord> trace;  // one record per evaluated epoch
};

// One unlearning run exactly as `orthograd unlearn` performs it.
inline JobOutcome run_unlearn_job(const ExperimentConfig& cfg, const ParamVector& pretrained, const Dataset& train,
                                  const Dataset& test, const UnlearnJob& job) {
    const Splits splits =
        make_unlearn_split(train, test, cfg.splits.mode, job.retain_size, cfg.splits.seed + job.seed);
    UnlearnConfig ucfg = cfg.unlearn_config(job.method);
    ucfg.seed += job.seed;
    JobOutcome o{run_unlearning(pretrained, splits, ucfg), {}};
    for (AccuracyReport r : o.result.trace) {
        r.seed = job.seed;
        o.trace.push_back(make_result_record(make_uis_record(o.result.pretrained.A_test, r), job.retain_size,
                                             o.result.stop_epoch, o.result.stopped_early));
    }
    return o;
}

inline int cmd_pretrain(const std::string& config_path, std::ostream& out, std::ostream& err) {
    ExperimentConfig cfg;
    std::pair<Dataset, Dataset> data;
    try {
        cfg = load_experiment_config(config_path);
        data = build_datasets(cfg.dataset);
    } catch (const std::exception& e) {
        err << "orthograd pretrain: " << e.what() << '\n';
        return kExitUsage;
    }
    try {
        const auto& [train, test] = data;
        const ParamVector params = pretrain(cfg.network, train, cfg.pretrain.epochs, cfg.pretrain.batch_size,
                                            cfg.pretrain.lr, cfg.pretrain.seed);
        detail::ensure_dir(cfg.output_dir);
        save_checkpoint(cfg.checkpoint_path(), params, cfg.pretrain.seed);

        const Splits splits =
            make_unlearn_split(train, test, cfg.splits.mode, cfg.splits.retain_size, cfg.splits.seed);
        AccuracyReport rep = evaluate_splits(params, splits);
        rep.method = "original";
        rep.seed = 0;
        rep.epoch = cfg.pretrain.epochs;
        const ResultRecord record =
            make_result_record(make_uis_record(rep.A_test, rep), cfg.splits.retain_size, 0, false);
        emit_report({record}, cfg.pretrain_report_path(), ReportFormat::keyvalue);

        char buf[256];
        std::snprintf(buf, sizeof buf, "pretrained d=%zu  train=%.2f%%  test=%.2f%%  A_u=%.2f A_r=%.2f A_test=%.2f\n",
                      params.size(), evaluate_accuracy(params, train), evaluate_accuracy(params, test), rep.A_u,
                      rep.A_r, rep.A_test);
        out << buf << "checkpoint: " << cfg.checkpoint_path() << '\n';
        return kExitOk;
    } catch (const std::exception& e) {
        err << "orthograd pretrain: " << e.what() << '\n';
        return kExitRuntime;
    }
}

inline int cmd_unlearn(const std::string& config_path, const UnlearnOptions& opts, std::ostream& out,
                       std::ostream& err) {
    ExperimentConfig cfg;
    std::pair<Dataset, Dataset> data;
    Checkpoint ck;
    std::vector<Method> methods;
    try {
        cfg = load_experiment_config(config_path);
        methods = detail::expand_methods(opts.methods, cfg);
        if (methods.empty()) throw InvalidInput("no methods selected");
        if (opts.seeds.empty()) throw InvalidInput("empty seed list");
        if (!std::filesystem::exists(cfg.checkpoint_path()))
            throw IoError("pretrained checkpoint '" + cfg.checkpoint_path() + "' not found (run pretrain first)");
        ck = load_checkpoint(cfg.checkpoint_path());
        if (!(ck.params.spec == cfg.network))
            throw ParseError("checkpoint network " + format_layers(ck.params.spec) + " does not match config " +
                             format_layers(cfg.network));
        data = build_datasets(cfg.dataset);
    } catch (const std::exception& e) {
        err << "orthograd unlearn: " << e.what() << '\n';
        return kExitUsage;
    }

    std::vector<UnlearnJob> jobs;
    const std::vector<std::size_t> sizes =
        opts.retain_sizes.empty() ? std::vector<std::size_t>{cfg.splits.retain_size} : opts.retain_sizes;
    for (const auto& m : methods)
        for (std::size_t n : sizes)
            for (std::uint64_t s : opts.seeds) jobs.push_back({m, n, s});

    try {
        detail::ensure_dir(cfg.runs_dir());
        const auto& [train, test] = data;
        std::vector<ResultRecord> records(jobs.size());
        std::vector<std::string> failures(jobs.size());
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < jobs.size(); i = next++) {
                const UnlearnJob& job = jobs[i];
                try {
                    const JobOutcome o = run_unlearn_job(cfg, ck.params, train, test, job);
                    const std::string stem =
                        cfg.runs_dir() + "/" + detail::run_stem(job.method.tag(), job.retain_size, job.seed);
                    const std::uint64_t seed = cfg.unlearn.at(job.method.kind).seed + job.seed;
                    save_checkpoint(stem + ".ckpt", o.result.params, seed);
                    if (o.result.adapters)
                        save_lora_checkpoint(stem + ".lora", ck.params.spec, *o.result.adapters, seed);
                    emit_report(o.trace, stem + ".trace.txt", ReportFormat::keyvalue);
                    records[i] = o.trace.back();
                } catch (const std::exception& e) {
                    failures[i] = job.method.tag() + " seed " + std::to_string(job.seed) + ": " + e.what();
                }
            }
        };
        const std::size_t slots = detail::worker_slots(opts.threads, jobs.size());
        std::vector<std::thread> pool;
        for (std::size_t t = 1; t < slots; ++t) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
        for (const auto& f : failures)
            if (!f.empty()) throw std::runtime_error(f);

        // Merge with records already on disk; a rerun replaces its own rows.
        std::vector<ResultRecord> all;
        if (std::filesystem::exists(cfg.results_path())) all = load_results(cfg.results_path());
        auto key = [](const ResultRecord& r) { return std::make_tuple(r.method, r.seed, r.retain_size); };
        std::set<std::tuple<std::string, std::uint64_t, std::size_t>> fresh;
        for (const auto& r : records) fresh.insert(key(r));
        std::erase_if(all, [&](const ResultRecord& r) { return fresh.count(key(r)) > 0; });
        all.insert(all.end(), records.begin(), records.end());
        emit_report(all, cfg.results_path(), ReportFormat::keyvalue);

        write_report(out, records, ReportFormat::table);
        out << "results: " << cfg.results_path() << '\n';
        return kExitOk;
    } catch (const std::exception& e) {
        err << "orthograd unlearn: " << e.what() << '\n';
        return kExitRuntime;
    }
}

inline int cmd_compare(const std::vector<std::string>& paths, bool sweep, std::ostream& out, std::ostream& err) {
    std::vector<ResultRecord> records;
    try {
        if (paths.empty()) throw InvalidInput("no results files given");
        for (const auto& p : paths) {
            auto r = load_results(p);
            records.insert(records.end(), r.begin(), r.end());
        }
    } catch (const std::exception& e) {
        err << "orthograd compare: " << e.what() << '\n';
        return kExitUsage;
    }
    out << (sweep ? format_sweep(records) : format_comparison(records));
    return kExitOk;
}

}  // namespace orthograd
