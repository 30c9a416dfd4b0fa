#pragma once

// Visual-token calibration: capture the last-row image attention of a
// content-free reference input once per (layer, head), invert it into a
// calibration vector, and blend the calibrated row back in with weight beta.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "caac/decoder.hpp"
#include "caac/errors.hpp"
#include "caac/hooks.hpp"
#include "caac/random.hpp"
#include "caac/tokens.hpp"

namespace caac {

enum class ImageKind { Black, Noise, Uniform };

enum class Normalization {
    PaperLiteral,   // scale = sum(v) / sum(1/v)
    SumPreserving,  // scale = sum(v) / N_i, so sum(v * cal) == sum(v)
};

inline constexpr double kCaptureFloor = 1e-12;

/// Image tokens to use for each reference kind.
struct ReferencePalette {
    TokenId black = 0;
    TokenId uniform = 0;
    std::vector<TokenId> noise;
};

struct ReferenceSpec {
    ImageKind image_kind = ImageKind::Black;
    std::uint64_t noise_seed = 0;
    std::vector<TokenId> query_ids;
    std::size_t window = 1;
    ReferencePalette palette;

    void validate() const {
        if (query_ids.empty()) throw DomainError("ReferenceSpec: query must be nonempty");
        if (window < 1 || window > query_ids.size())
            throw DomainError("ReferenceSpec: window must lie in [1, N_q]");
        if (image_kind == ImageKind::Noise && palette.noise.empty())
            throw DomainError("ReferenceSpec: noise palette is empty");
    }

    TokenSequence build(std::size_t image_slots) const {
        validate();
        std::vector<TokenId> image(image_slots);
        switch (image_kind) {
            case ImageKind::Black:
                std::fill(image.begin(), image.end(), palette.black);
                break;
            case ImageKind::Uniform:
                std::fill(image.begin(), image.end(), palette.uniform);
                break;
            case ImageKind::Noise: {
                Rng rng(mix_seed(noise_seed, 0x4e6f697365));
                for (TokenId& t : image) t = palette.noise[uniform_index(rng, palette.noise.size())];
                break;
            }
        }
        return TokenSequence::prompt(image, query_ids);
    }
};

struct CalibrationVector {
    std::vector<double> entries;
    Normalization mode = Normalization::PaperLiteral;
};

/// Captured reference rows, [layer * heads + head] -> length N_i.
struct ReferenceCapture {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::vector<std::vector<double>> rows;
    std::size_t floored = 0;  // entries clamped up to kCaptureFloor

    const std::vector<double>& at(std::size_t l, std::size_t h) const { return rows[l * heads + h]; }
};

/// Image-column attention of the reference input's last query row per (layer, head),
/// or the mean of the trailing `window` rows.
inline ReferenceCapture capture_reference(const ReferenceSpec& ref, const Decoder& model) {
    const ModelConfig& cfg = model.config();
    const TokenSequence seq = ref.build(cfg.image_slots);
    const ForwardResult fr = forward_full(model, seq);
    ReferenceCapture cap;
    cap.layers = cfg.num_layers;
    cap.heads = cfg.num_heads;
    const std::size_t n = seq.size(), ni = cfg.image_slots;
    for (std::size_t l = 0; l < cfg.num_layers; ++l)
        for (std::size_t h = 0; h < cfg.num_heads; ++h) {
            std::vector<double> v(ni, 0.0);
            for (std::size_t r = n - ref.window; r < n; ++r) {
                auto row = fr.attn.row(l, h, r);
                for (std::size_t j = 0; j < ni; ++j) v[j] += row[j];
            }
            for (double& e : v) {
                e /= static_cast<double>(ref.window);
                if (e < kCaptureFloor) {
                    e = kCaptureFloor;
                    ++cap.floored;
                }
            }
            cap.rows.push_back(std::move(v));
        }
    return cap;
}

inline CalibrationVector build_calibration_vector(std::span<const double> reference, Normalization mode) {
    if (reference.empty()) throw DomainError("build_calibration_vector: empty reference");
    double sum = 0.0, inv_sum = 0.0;
    for (double v : reference) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw DomainError("build_calibration_vector: reference entries must be finite and positive");
        sum += v;
        inv_sum += 1.0 / v;
    }
    const double scale = mode == Normalization::PaperLiteral ? sum / inv_sum
                                                             : sum / static_cast<double>(reference.size());
    CalibrationVector cal;
    cal.mode = mode;
    cal.entries.reserve(reference.size());
    for (double v : reference) cal.entries.push_back(scale / v);
    return cal;
}

struct SmoothedRow {
    std::vector<double> original;    // V
    std::vector<double> calibrated;  // V_u = V * V_cal
    std::vector<double> smoothed;    // V_s = (1 - beta) V + beta V_u
};

inline SmoothedRow apply_vtc(std::span<const double> row, const CalibrationVector& cal, double beta) {
    if (row.size() != cal.entries.size())
        throw DomainError("apply_vtc: row has " + std::to_string(row.size()) + " entries, calibration has " +
                          std::to_string(cal.entries.size()));
    if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("apply_vtc: beta must lie in [0, 1]");
    SmoothedRow out;
    out.original.assign(row.begin(), row.end());
    out.calibrated.resize(row.size());
    out.smoothed.resize(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
        out.calibrated[i] = row[i] * cal.entries[i];
        out.smoothed[i] = (1.0 - beta) * row[i] + beta * out.calibrated[i];
    }
    return out;
}

struct CalibrationSet {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::vector<CalibrationVector> vectors;  // layer * heads + head
    LayerRange layer_range;
    double beta = 0.5;
    ReferenceSpec reference;
    std::string model_fingerprint;

    const CalibrationVector& at(std::size_t l, std::size_t h) const {
        if (l >= layers || h >= heads) throw DomainError("CalibrationSet: (layer, head) out of range");
        return vectors[l * heads + h];
    }

    void validate() const {
        if (!(beta >= 0.0 && beta <= 1.0)) throw DomainError("CalibrationSet: beta must lie in [0, 1]");
        if (vectors.size() != layers * heads) throw DomainError("CalibrationSet: expected one vector per (layer, head)");
        if (layer_range.end > layers) throw DomainError("CalibrationSet: layer range exceeds model depth");
        for (const auto& v : vectors)
            for (double e : v.entries)
                if (!(e > 0.0) || !std::isfinite(e))
                    throw DomainError("CalibrationSet: calibration entries must be finite and positive");
    }
};

/// Default VTC depth: the first ceil(10/32 * L) layers.
inline LayerRange default_vtc_layers(std::size_t num_layers) {
    return {0, (10 * num_layers + 31) / 32};
}

inline CalibrationSet build_calibration_set(const ReferenceCapture& cap, Normalization mode, double beta,
                                            LayerRange range) {
    CalibrationSet set;
    set.layers = cap.layers;
    set.heads = cap.heads;
    set.beta = beta;
    set.layer_range = range;
    for (const auto& row : cap.rows) set.vectors.push_back(build_calibration_vector(row, mode));
    set.validate();
    return set;
}

/// Relative spread (max - min) / mean of reference * calibration. Zero means perfectly flat.
inline double flattening_spread(std::span<const double> reference, const CalibrationVector& cal) {
    double lo = 0.0, hi = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double p = reference[i] * cal.entries[i];
        if (i == 0 || p < lo) lo = p;
        if (i == 0 || p > hi) hi = p;
        sum += p;
    }
    return (hi - lo) / (sum / static_cast<double>(reference.size()));
}

/// Post-softmax hook applying the calibration of each (layer, head) in the set's range.
/// The set must outlive the hook.
inline Hook make_vtc_hook(const CalibrationSet& set) {
    return Hook{"vtc", set.layer_range, [&set](const HookSite& site, std::span<double> row) {
                    if (set.beta == 0.0) return;
                    const SmoothedRow s = apply_vtc(row, set.at(site.layer, site.head), set.beta);
                    std::copy(s.smoothed.begin(), s.smoothed.end(), row.begin());
                }};
}

}  // namespace caac
