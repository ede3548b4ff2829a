#pragma once

// Experiment configuration file.
//
//   [dataset]    source = blobs | csv
//                blobs: classes, dim, per_class, test_per_class, spread, separation, seed
//                csv:   classes, dim, train_path, test_path
//   [network]    layers = 20,64,10   activation = relu | tanh
//   [pretrain]   epochs, batch_size, lr, seed
//   [splits]     mode = random | class, fraction, forget_class, retain_size, seed
//   [unlearn]    alpha, lr, unlearn_batch, retain_batch, max_epochs, seed,
//                lora_rank, lora_scale, threshold, rank_tol
//   [unlearn.<method>]  the same keys plus use_lora, overriding [unlearn]
//   [output]     dir
//
// Relative paths are resolved against the directory holding the config file.
// Every random choice is driven by one of the explicit seeds.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "orthograd/data.hpp"
#include "orthograd/error.hpp"
#include "orthograd/kvtext.hpp"
#include "orthograd/method.hpp"
#include "orthograd/net.hpp"
#include "orthograd/unlearn.hpp"

namespace orthograd {

struct DatasetConfig {
    std::string source = "blobs";
    int classes = 10;
    std::size_t dim = 20;
    std::size_t per_class = 500;
    std::size_t test_per_class = 200;
    double spread = 1.0;
    double separation = 6.0;
    std::uint64_t seed = 1;
    std::string train_path;
    std::string test_path;
};

struct PretrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double lr = 0.05;
    std::uint64_t seed = 3;
};

struct SplitConfig {
    SplitMode mode;
    std::size_t retain_size = 500;
    std::uint64_t seed = 11;
};

struct ExperimentConfig {
    std::string path;
    DatasetConfig dataset;
    NetworkSpec network{{20, 64, 10}, Activation::relu};
    PretrainConfig pretrain;
    SplitConfig splits;
    std::map<MethodKind, UnlearnConfig> unlearn;  // per-method settings, use_lora included
    std::string output_dir = "out";

    std::string checkpoint_path() const { return output_dir + "/pretrained.ckpt"; }
    std::string pretrain_report_path() const { return output_dir + "/pretrain_report.txt"; }
    std::string results_path() const { return output_dir + "/results.txt"; }
    std::string runs_dir() const { return output_dir + "/runs"; }

    // Settings for a method; `use_lora` comes from the argument, not the config.
    UnlearnConfig unlearn_config(const Method& m) const {
        UnlearnConfig cfg = unlearn.at(m.kind);
        cfg.method = m;
        return cfg;
    }
};

namespace detail {

inline const std::vector<std::string> kUnlearnKeys = {"alpha",      "lr",         "unlearn_batch", "retain_batch",
                                                      "max_epochs", "seed",       "lora_rank",     "lora_scale",
                                                      "threshold",  "rank_tol",   "use_lora"};

inline std::size_t get_size(const KvDocument& doc, const std::string& sec, const std::string& key,
                            std::size_t fallback) {
    const auto v = doc.get_int(sec, key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ParseError(doc.where(sec, key) + ": '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
}

inline std::uint64_t get_seed(const KvDocument& doc, const std::string& sec, std::uint64_t fallback) {
    const auto v = doc.get_int(sec, "seed", static_cast<std::int64_t>(fallback));
    if (v < 0) throw ParseError(doc.where(sec, "seed") + ": seed must be non-negative");
    return static_cast<std::uint64_t>(v);
}

inline void read_unlearn_keys(const KvDocument& doc, const std::string& sec, UnlearnConfig& c) {
    c.alpha = doc.get_double(sec, "alpha", c.alpha);
    c.lr = doc.get_double(sec, "lr", c.lr);
    c.unlearn_batch = get_size(doc, sec, "unlearn_batch", c.unlearn_batch);
    c.retain_batch = get_size(doc, sec, "retain_batch", c.retain_batch);
    c.max_epochs = get_size(doc, sec, "max_epochs", c.max_epochs);
    c.seed = get_seed(doc, sec, c.seed);
    c.lora_rank = get_size(doc, sec, "lora_rank", c.lora_rank);
    c.lora_scale = doc.get_double(sec, "lora_scale", c.lora_scale);
    c.stopping.threshold = doc.get_double(sec, "threshold", c.stopping.threshold);
    c.rank_tol = doc.get_double(sec, "rank_tol", c.rank_tol);
    c.method.use_lora = doc.get_bool(sec, "use_lora", c.method.use_lora);
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return p;
    const std::filesystem::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const KvDocument& doc, const std::filesystem::path& base_dir) {
    using detail::get_seed;
    using detail::get_size;
    ExperimentConfig cfg;
    cfg.path = doc.source();

    for (const auto& name : doc.section_names()) {
        static const std::vector<std::string> known = {"", "dataset", "network", "pretrain", "splits", "unlearn",
                                                       "output"};
        bool ok = std::find(known.begin(), known.end(), name) != known.end();
        if (!ok && name.rfind("unlearn.", 0) == 0) {
            parse_method_kind(name.substr(8));  // throws on unknown method names
            ok = true;
        }
        if (!ok) throw ParseError(doc.source() + ": unknown section [" + name + "]");
    }
    if (doc.section("") && !doc.section("")->empty())
        throw ParseError(doc.source() + ": keys must appear inside a [section]");

    doc.check_keys("dataset", {"source", "classes", "dim", "per_class", "test_per_class", "spread", "separation",
                               "seed", "train_path", "test_path"});
    auto& d = cfg.dataset;
    d.source = doc.get_string("dataset", "source", d.source);
    d.classes = static_cast<int>(doc.get_int("dataset", "classes", d.classes));
    d.dim = get_size(doc, "dataset", "dim", d.dim);
    d.per_class = get_size(doc, "dataset", "per_class", d.per_class);
    d.test_per_class = get_size(doc, "dataset", "test_per_class", d.test_per_class);
    d.spread = doc.get_double("dataset", "spread", d.spread);
    d.separation = doc.get_double("dataset", "separation", d.separation);
    d.seed = get_seed(doc, "dataset", d.seed);
    d.train_path = detail::resolve(base_dir, doc.get_string("dataset", "train_path", ""));
    d.test_path = detail::resolve(base_dir, doc.get_string("dataset", "test_path", ""));
    if (d.source != "blobs" && d.source != "csv")
        throw ParseError(doc.where("dataset", "source") + ": source must be 'blobs' or 'csv'");
    if (d.source == "csv" && (d.train_path.empty() || d.test_path.empty()))
        throw ParseError(doc.source() + ": csv datasets need train_path and test_path");

    doc.check_keys("network", {"layers", "activation"});
    if (auto layers = doc.get("network", "layers"))
        cfg.network.layer_sizes = parse_size_list(*layers, doc.where("network", "layers"));
    cfg.network.activation = parse_activation(doc.get_string("network", "activation", "relu"));
    try {
        cfg.network.validate();
    } catch (const InvalidInput& e) {
        throw ParseError(doc.where("network", "layers") + ": " + e.what());
    }
    if (cfg.network.input_dim() != d.dim)
        throw ParseError(doc.where("network", "layers") + ": first layer must equal dataset dim " +
                         std::to_string(d.dim));
    if (cfg.network.classes() != static_cast<std::size_t>(d.classes))
        throw ParseError(doc.where("network", "layers") + ": last layer must equal dataset classes " +
                         std::to_string(d.classes));

    doc.check_keys("pretrain", {"epochs", "batch_size", "lr", "seed"});
    cfg.pretrain.epochs = get_size(doc, "pretrain", "epochs", cfg.pretrain.epochs);
    cfg.pretrain.batch_size = get_size(doc, "pretrain", "batch_size", cfg.pretrain.batch_size);
    cfg.pretrain.lr = doc.get_double("pretrain", "lr", cfg.pretrain.lr);
    cfg.pretrain.seed = get_seed(doc, "pretrain", cfg.pretrain.seed);

    doc.check_keys("splits", {"mode", "fraction", "forget_class", "retain_size", "seed"});
    const std::string mode = doc.get_string("splits", "mode", "random");
    if (mode == "random") {
        cfg.splits.mode = SplitMode::random(doc.get_double("splits", "fraction", 0.05));
    } else if (mode == "class") {
        cfg.splits.mode = SplitMode::forget_class_of(static_cast<int>(doc.get_int("splits", "forget_class", 0)));
    } else {
        throw ParseError(doc.where("splits", "mode") + ": mode must be 'random' or 'class'");
    }
    cfg.splits.retain_size = get_size(doc, "splits", "retain_size", cfg.splits.retain_size);
    cfg.splits.seed = get_seed(doc, "splits", cfg.splits.seed);

    UnlearnConfig base;
    if (cfg.splits.mode.kind == SplitMode::Kind::klass) base.stopping = StoppingRule::class_forget();
    doc.check_keys("unlearn", detail::kUnlearnKeys);
    if (doc.get("unlearn", "use_lora"))
        throw ParseError(doc.where("unlearn", "use_lora") + ": use_lora belongs in a [unlearn.<method>] section");
    detail::read_unlearn_keys(doc, "unlearn", base);
    for (MethodKind m : kAllMethods) {
        UnlearnConfig c = base;
        c.method = Method{m, m == MethodKind::OrthoGradPerSample};
        const std::string sec = "unlearn." + method_name(m);
        doc.check_keys(sec, detail::kUnlearnKeys);
        detail::read_unlearn_keys(doc, sec, c);
        try {
            c.validate();
        } catch (const InvalidInput& e) {
            throw ParseError(doc.source() + ": [" + sec + "] " + e.what());
        }
        cfg.unlearn[m] = c;
    }

    doc.check_keys("output", {"dir"});
    cfg.output_dir = detail::resolve(base_dir, doc.get_string("output", "dir", "out"));
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    const KvDocument doc = KvDocument::parse(in, path);
    return parse_experiment_config(doc, std::filesystem::path(path).parent_path());
}

// Train and test sets described by the [dataset] block.
inline std::pair<Dataset, Dataset> build_datasets(const DatasetConfig& d) {
    if (d.source == "csv")
        return {load_csv_dataset(d.train_path, d.dim, d.classes), load_csv_dataset(d.test_path, d.dim, d.classes)};
    return gen_gaussian_blobs_train_test(d.classes, d.dim, d.per_class, d.test_per_class, d.spread, d.seed,
                                         d.separation);
}

}  // namespace orthograd
