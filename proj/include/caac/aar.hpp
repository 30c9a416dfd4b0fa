#pragma once

// Adaptive attention re-scaling: when the next-token confidence drops below
// p_thr, image-column scores of the last row are multiplied by lambda before
// the softmax.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "caac/attention.hpp"
#include "caac/errors.hpp"
#include "caac/hooks.hpp"

namespace caac {

struct AarConfig {
    double p_thr = 0.25;
    double lambda_min = 1.0;
    double lambda_max = 1.5;
    /// Empty range means "all layers".
    LayerRange layer_range{0, 0};

    void validate() const {
        if (!(p_thr >= 0.0 && p_thr <= 1.0)) throw DomainError("AarConfig: p_thr must lie in [0, 1]");
        if (!(lambda_min >= 1.0)) throw DomainError("AarConfig: lambda_min must be >= 1");
        if (!(lambda_max >= lambda_min)) throw DomainError("AarConfig: lambda_max must be >= lambda_min");
    }

    LayerRange layers_for(std::size_t num_layers) const {
        return layer_range.empty() ? LayerRange{0, num_layers} : layer_range;
    }
};

struct ScaleDecision {
    double p_t = 1.0;
    bool triggered = false;
    double lambda_t = 1.0;
};

/// Largest softmax probability of the logits.
inline double read_confidence(std::span<const double> logits) {
    if (logits.empty()) throw DomainError("read_confidence: empty logits");
    for (double v : logits)
        if (!std::isfinite(v)) throw NumericError("read_confidence: non-finite logit");
    const auto probs = softmax_row(logits);
    return *std::max_element(probs.begin(), probs.end());
}

inline double compute_lambda(double p, const AarConfig& cfg) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("compute_lambda: p must lie in [0, 1]");
    return cfg.lambda_min * p + cfg.lambda_max * (1.0 - p);
}

inline ScaleDecision decide_scale(double p_t, const AarConfig& cfg) {
    ScaleDecision d;
    d.p_t = p_t;
    d.triggered = p_t < cfg.p_thr;
    d.lambda_t = d.triggered ? compute_lambda(p_t, cfg) : 1.0;
    return d;
}

/// Multiply the first `image_slots` scores by lambda_t in place.
inline void apply_aar(std::span<double> scores, std::size_t image_slots, double lambda_t) {
    if (image_slots > scores.size())
        throw DomainError("apply_aar: image_slots " + std::to_string(image_slots) + " exceeds row length " +
                          std::to_string(scores.size()));
    if (!(lambda_t >= 1.0)) throw DomainError("apply_aar: lambda_t must be >= 1");
    for (std::size_t j = 0; j < image_slots; ++j) scores[j] *= lambda_t;
}

inline Hook make_aar_hook(double lambda_t, LayerRange layers) {
    return Hook{"aar", layers, [lambda_t](const HookSite&, std::span<double> row) {
                    apply_aar(row, row.size(), lambda_t);
                }};
}

}  // namespace caac
