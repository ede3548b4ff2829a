#pragma once

// Small fixtures shared by the test programs.

#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <string>

#include "orthograd/linalg.hpp"
#include "orthograd/net.hpp"
#include "orthograd/rng.hpp"
#include "orthograd/samples.hpp"

namespace testing_support {

using namespace orthograd;

inline Batch random_batch(std::size_t dim, int classes, std::size_t k, Rng& rng, double scale = 1.0) {
    Batch b;
    b.dim = dim;
    Vector x(dim);
    for (std::size_t n = 0; n < k; ++n) {
        for (double& v : x) v = scale * rng.normal();
        b.push_back(x, static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
    }
    return b;
}

// Random parameters of moderate size (biases included, unlike init_params).
inline ParamVector random_params(const NetworkSpec& spec, Rng& rng, double scale = 0.5) {
    ParamVector p = ParamVector::zeros(spec);
    for (double& v : p.flat) v = scale * rng.normal();
    return p;
}

// Central differences of f over the coordinates of x.
inline Vector central_difference(const std::function<double()>& f, std::span<double> x, double eps) {
    Vector g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + eps;
        const double up = f();
        x[i] = keep - eps;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

inline double max_rel_error(std::span<const double> analytic, std::span<const double> reference) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, std::abs(analytic[i] - reference[i]) / std::max(1.0, std::abs(analytic[i])));
    return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

// Fresh, empty directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("orthograd_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace testing_support
