#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "orthograd/error.hpp"
#include "orthograd/linalg.hpp"

namespace orthograd {

// Row-major collection of labelled feature vectors.
struct Samples {
    std::size_t dim = 0;
    std::vector<double> inputs;  // size() * dim
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }

    std::span<const double> row(std::size_t i) const { return {inputs.data() + i * dim, dim}; }

    void push_back(std::span<const double> x, int label) {
        detail::require(x.size() == dim, "Samples: feature dimension mismatch");
        inputs.insert(inputs.end(), x.begin(), x.end());
        labels.push_back(label);
    }

    Samples subset(std::span<const std::size_t> indices) const {
        Samples out;
        out.dim = dim;
        out.inputs.reserve(indices.size() * dim);
        out.labels.reserve(indices.size());
        for (std::size_t i : indices) out.push_back(row(i), labels[i]);
        return out;
    }
};

using Batch = Samples;

struct Dataset : Samples {
    int classes = 0;
    std::string provenance;

    Dataset subset(std::span<const std::size_t> indices) const {
        Dataset out;
        static_cast<Samples&>(out) = Samples::subset(indices);
        out.classes = classes;
        out.provenance = provenance;
        return out;
    }
};

}  // namespace orthograd
