#pragma once

// Synthetic and CSV datasets, and unlearn/retain/test split construction.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "orthograd/error.hpp"
#include "orthograd/kvtext.hpp"
#include "orthograd/rng.hpp"
#include "orthograd/samples.hpp"

namespace orthograd {

// Class centres for Gaussian blobs, `separation * spread` apart pairwise.
// With classes <= dim the centres are a randomly rotated orthonormal frame
// (exact pairwise distance); otherwise random directions are redrawn, and the
// sphere grown, until every pair is at least that far apart.
inline std::vector<Vector> make_blob_means(int classes, std::size_t dim, double spread, std::uint64_t seed,
                                           double separation = 6.0) {
    detail::require(classes >= 2, "gen_gaussian_blobs: need at least 2 classes");
    detail::require(dim >= 2, "gen_gaussian_blobs: need dim >= 2");
    detail::require(spread > 0.0 && std::isfinite(spread), "gen_gaussian_blobs: spread must be positive");
    detail::require(separation >= 4.0, "gen_gaussian_blobs: separation must be >= 4 (in units of spread)");
    Rng rng = Rng::stream(seed, 0xB10B);
    const double min_dist = separation * spread;
    std::vector<Vector> means(static_cast<std::size_t>(classes), Vector(dim));
    auto draw_direction = [&](Vector& m) {
        for (double& x : m) x = rng.normal();
    };
    if (static_cast<std::size_t>(classes) <= dim) {
        const double radius = min_dist / std::sqrt(2.0);
        for (std::size_t c = 0; c < means.size(); ++c) {
            Vector& m = means[c];
            double n = 0.0;
            do {
                draw_direction(m);
                for (int pass = 0; pass < 2; ++pass)
                    for (std::size_t p = 0; p < c; ++p) {
                        double proj = 0.0;
                        for (std::size_t i = 0; i < dim; ++i) proj += m[i] * means[p][i];
                        proj /= radius * radius;
                        for (std::size_t i = 0; i < dim; ++i) m[i] -= proj * means[p][i];
                    }
                n = 0.0;
                for (double x : m) n += x * x;
                n = std::sqrt(n);
            } while (n < 1e-6);
            for (double& x : m) x *= radius / n;
        }
        return means;
    }
    double radius = min_dist / std::sqrt(2.0);
    for (int attempt = 0;; ++attempt) {
        for (auto& m : means) {
            draw_direction(m);
            double n2 = 0.0;
            for (double x : m) n2 += x * x;
            const double s = radius / std::sqrt(n2);
            for (double& x : m) x *= s;
        }
        double closest = INFINITY;
        for (std::size_t a = 0; a < means.size(); ++a)
            for (std::size_t b = a + 1; b < means.size(); ++b) {
                double d2 = 0.0;
                for (std::size_t i = 0; i < dim; ++i) d2 += (means[a][i] - means[b][i]) * (means[a][i] - means[b][i]);
                closest = std::min(closest, std::sqrt(d2));
            }
        if (closest >= min_dist) return means;
        if (attempt % 64 == 63) radius *= 1.1;
    }
}

// `per_class` samples around each centre, grouped by class in label order.
inline Dataset sample_blobs(const std::vector<Vector>& means, std::size_t per_class, double spread, Rng& rng) {
    detail::require(per_class >= 1, "gen_gaussian_blobs: per_class must be >= 1");
    Dataset d;
    d.dim = means.front().size();
    d.classes = static_cast<int>(means.size());
    Vector x(d.dim);
    for (std::size_t c = 0; c < means.size(); ++c) {
        for (std::size_t n = 0; n < per_class; ++n) {
            for (std::size_t i = 0; i < d.dim; ++i) x[i] = means[c][i] + spread * rng.normal();
            d.push_back(x, static_cast<int>(c));
        }
    }
    return d;
}

inline Dataset gen_gaussian_blobs(int classes, std::size_t dim, std::size_t per_class, double spread,
                                  std::uint64_t seed, double separation = 6.0) {
    const auto means = make_blob_means(classes, dim, spread, seed, separation);
    Rng rng = Rng::stream(seed, 1);
    Dataset d = sample_blobs(means, per_class, spread, rng);
    d.provenance = "blobs:seed=" + std::to_string(seed);
    return d;
}

// Train and test sets drawn from the same class centres with independent noise.
inline std::pair<Dataset, Dataset> gen_gaussian_blobs_train_test(int classes, std::size_t dim,
                                                                 std::size_t per_class_train,
                                                                 std::size_t per_class_test, double spread,
                                                                 std::uint64_t seed, double separation = 6.0) {
    const auto means = make_blob_means(classes, dim, spread, seed, separation);
    Rng train_rng = Rng::stream(seed, 1);
    Rng test_rng = Rng::stream(seed, 2);
    Dataset train = sample_blobs(means, per_class_train, spread, train_rng);
    Dataset test = sample_blobs(means, per_class_test, spread, test_rng);
    train.provenance = "blobs:seed=" + std::to_string(seed) + ":train";
    test.provenance = "blobs:seed=" + std::to_string(seed) + ":test";
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// CSV: one sample per line, `dim` comma-separated features then an integer label.

inline Dataset read_csv_dataset(std::istream& in, const std::string& source, std::size_t dim, int classes) {
    detail::require(dim >= 1, "load_csv_dataset: feature dimension must be >= 1");
    detail::require(classes >= 1, "load_csv_dataset: class count must be >= 1");
    Dataset d;
    d.dim = dim;
    d.classes = classes;
    d.provenance = source;
    std::string line;
    Vector x(dim);
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        const auto fields = detail::split(line, ',');
        if (fields.size() != dim + 1)
            throw ParseError(where + ": expected " + std::to_string(dim + 1) + " fields, got " +
                             std::to_string(fields.size()));
        for (std::size_t i = 0; i < dim; ++i) {
            x[i] = detail::parse_double(fields[i], where);
            if (!std::isfinite(x[i])) throw ParseError(where + ": non-finite feature");
        }
        const auto label = detail::parse_int(fields[dim], where);
        if (label < 0 || label >= classes)
            throw ParseError(where + ": label " + std::to_string(label) + " outside [0, " + std::to_string(classes) +
                             ")");
        d.push_back(x, static_cast<int>(label));
    }
    if (d.empty()) throw ParseError(source + ": no samples");
    return d;
}

inline Dataset load_csv_dataset(const std::string& path, std::size_t dim, int classes) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset '" + path + "'");
    return read_csv_dataset(in, path, dim, classes);
}

// Features are printed with 17 significant digits, which round-trips binary64.
inline void write_csv_dataset(std::ostream& out, const Dataset& d) {
    char buf[32];
    for (std::size_t n = 0; n < d.size(); ++n) {
        const auto x = d.row(n);
        for (double v : x) {
            std::snprintf(buf, sizeof buf, "%.17g,", v);
            out << buf;
        }
        out << d.labels[n] << '\n';
    }
}

inline void save_csv_dataset(const std::string& path, const Dataset& d) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write dataset '" + path + "'");
    write_csv_dataset(out, d);
}

// ---------------------------------------------------------------------------

struct SplitMode {
    enum class Kind { random, klass };
    Kind kind = Kind::random;
    double fraction = 0.05;
    int forget_class = 0;

    static SplitMode random(double fraction) { return {Kind::random, fraction, 0}; }
    static SplitMode forget_class_of(int c) { return {Kind::klass, 0.0, c}; }
};

struct Splits {
    SplitMode mode;
    Dataset forget;                  // D_u
    Dataset retain;                  // D_r
    Dataset test;                    // D_test (remaining classes only in class mode)
    std::optional<Dataset> heldout;  // forgotten-class test points (class mode)
    std::vector<std::size_t> forget_indices;  // into the training set, ascending
    std::vector<std::size_t> retain_indices;  // into the training set, ascending
};

// The forget set is drawn from its own random stream so that it does not
// depend on retain_size.
inline Splits make_unlearn_split(const Dataset& train, const Dataset& test, const SplitMode& mode,
                                 std::size_t retain_size, std::uint64_t seed) {
    detail::require(!train.empty(), "make_unlearn_split: empty training set");
    detail::require(!test.empty(), "make_unlearn_split: empty test set");
    detail::require(train.dim == test.dim, "make_unlearn_split: train/test dimension mismatch");
    detail::require(retain_size >= 1, "make_unlearn_split: retain_size must be >= 1");
    Splits s;
    s.mode = mode;
    std::vector<char> in_forget(train.size(), 0);
    if (mode.kind == SplitMode::Kind::random) {
        detail::require(mode.fraction > 0.0 && mode.fraction < 1.0,
                        "make_unlearn_split: fraction must lie in (0, 1)");
        const auto n_u = static_cast<std::size_t>(std::ceil(mode.fraction * static_cast<double>(train.size()) - 1e-9));
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng rng = Rng::stream(seed, 1);
        rng.shuffle(std::span<std::size_t>(order));
        s.forget_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_u));
        std::sort(s.forget_indices.begin(), s.forget_indices.end());
        s.test = test;
    } else {
        detail::require(mode.forget_class >= 0 && mode.forget_class < train.classes,
                        "make_unlearn_split: unknown class " + std::to_string(mode.forget_class));
        for (std::size_t i = 0; i < train.size(); ++i)
            if (train.labels[i] == mode.forget_class) s.forget_indices.push_back(i);
        detail::require(!s.forget_indices.empty(),
                        "make_unlearn_split: class " + std::to_string(mode.forget_class) + " has no training samples");
        std::vector<std::size_t> keep;
        std::vector<std::size_t> held;
        for (std::size_t i = 0; i < test.size(); ++i)
            (test.labels[i] == mode.forget_class ? held : keep).push_back(i);
        detail::require(!keep.empty(), "make_unlearn_split: no test samples outside the forgotten class");
        s.test = test.subset(keep);
        if (!held.empty()) s.heldout = test.subset(held);
    }
    for (std::size_t i : s.forget_indices) in_forget[i] = 1;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < train.size(); ++i)
        if (!in_forget[i]) rest.push_back(i);
    detail::require(retain_size <= rest.size(), "make_unlearn_split: retain_size " + std::to_string(retain_size) +
                                                    " exceeds the " + std::to_string(rest.size()) +
                                                    " remaining training samples");
    Rng rng = Rng::stream(seed, 2);
    rng.shuffle(std::span<std::size_t>(rest));
    s.retain_indices.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(retain_size));
    std::sort(s.retain_indices.begin(), s.retain_indices.end());
    s.forget = train.subset(s.forget_indices);
    s.retain = train.subset(s.retain_indices);
    return s;
}

}  // namespace orthograd
