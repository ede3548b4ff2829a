// orthograd: pretrain a classifier, unlearn a forget set, compare results.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "orthograd/commands.hpp"

namespace {

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what) {
    std::vector<T> out;
    for (const auto& field : orthograd::detail::split(text, ',')) {
        const auto v = orthograd::detail::parse_int(field, what);
        if (v < 0) throw orthograd::ParseError(std::string(what) + ": negative value");
        out.push_back(static_cast<T>(v));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gradient-orthogonalized machine unlearning experiments"};
    app.require_subcommand(1);

    std::string config;
    auto* pre = app.add_subcommand("pretrain", "train the original model and write its checkpoint");
    pre->add_option("config", config, "experiment config")->required();

    std::string methods = "all";
    std::string seeds = "0";
    std::string sizes;
    std::size_t threads = 0;
    auto* unl = app.add_subcommand("unlearn", "run unlearning methods from the pretrained checkpoint");
    unl->add_option("config", config, "experiment config")->required();
    unl->add_option("--method", methods, "comma list of method tags (name[+lora]) or 'all'");
    unl->add_option("--seed-list", seeds, "comma list of seed offsets");
    unl->add_option("--retain-sizes", sizes, "comma list of retain-set sizes (default: config)");
    unl->add_option("--threads", threads, "worker slots (default: ORTHOGRAD_THREADS or CPU count)");

    std::vector<std::string> results;
    bool sweep = false;
    auto* cmp = app.add_subcommand("compare", "summarize results files");
    cmp->add_option("results", results, "results files")->required();
    cmp->add_flag("--sweep", sweep, "summarize UIS per retain-set size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? orthograd::kExitOk : orthograd::kExitUsage;
    }

    if (*pre) return orthograd::cmd_pretrain(config, std::cout, std::cerr);
    if (*unl) {
        orthograd::UnlearnOptions opts;
        try {
            opts.methods = orthograd::detail::split(methods, ',');
            opts.seeds = parse_list<std::uint64_t>(seeds, "--seed-list");
            if (!sizes.empty()) opts.retain_sizes = parse_list<std::size_t>(sizes, "--retain-sizes");
            opts.threads = threads;
        } catch (const std::exception& e) {
            std::cerr << "orthograd unlearn: " << e.what() << '\n';
            return orthograd::kExitUsage;
        }
        return orthograd::cmd_unlearn(config, opts, std::cout, std::cerr);
    }
    return orthograd::cmd_compare(results, sweep, std::cout, std::cerr);
}
