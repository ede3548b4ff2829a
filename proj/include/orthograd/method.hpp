#pragma once

#include <array>
#include <string>
#include <string_view>

#include "orthograd/error.hpp"

namespace orthograd {

enum class MethodKind { OrthoGradPerSample, OrthoGradMean, NegGrad, NegGradPlus, Finetune };

inline constexpr std::array<MethodKind, 5> kAllMethods = {MethodKind::OrthoGradPerSample, MethodKind::OrthoGradMean,
                                                          MethodKind::NegGrad, MethodKind::NegGradPlus,
                                                          MethodKind::Finetune};

inline std::string method_name(MethodKind m) {
    switch (m) {
        case MethodKind::OrthoGradPerSample: return "orthograd";
        case MethodKind::OrthoGradMean: return "orthograd-mean";
        case MethodKind::NegGrad: return "neggrad";
        case MethodKind::NegGradPlus: return "neggrad-plus";
        case MethodKind::Finetune: return "finetune";
    }
    return "?";
}

struct Method {
    MethodKind kind = MethodKind::OrthoGradPerSample;
    bool use_lora = false;

    // "orthograd", "orthograd+lora", "neggrad", ...
    std::string tag() const { return method_name(kind) + (use_lora ? "+lora" : ""); }
    bool operator==(const Method&) const = default;
};

inline MethodKind parse_method_kind(std::string_view name) {
    for (MethodKind m : kAllMethods)
        if (method_name(m) == name) return m;
    throw InvalidInput("unknown method '" + std::string(name) +
                       "' (expected orthograd, orthograd-mean, neggrad, neggrad-plus or finetune)");
}

inline Method parse_method_tag(std::string_view tag) {
    constexpr std::string_view suffix = "+lora";
    Method m;
    if (tag.size() > suffix.size() && tag.substr(tag.size() - suffix.size()) == suffix) {
        m.use_lora = true;
        tag.remove_suffix(suffix.size());
    }
    m.kind = parse_method_kind(tag);
    return m;
}

// Ordering key for reports: the pretrained reference row first, then methods in
// declaration order, and within a method the full-parameter variant first.
inline int method_rank(std::string_view tag) {
    if (tag == "original") return 0;
    try {
        const Method m = parse_method_tag(tag);
        return 1 + 2 * static_cast<int>(m.kind) + (m.use_lora ? 1 : 0);
    } catch (const InvalidInput&) {
        return 1000;
    }
}

}  // namespace orthograd
