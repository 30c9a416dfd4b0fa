#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "caac/errors.hpp"

namespace caac {

/// Numerically stable softmax. Subtracts the row max before exponentiating.
inline std::vector<double> softmax_row(std::span<const double> scores) {
    if (scores.empty()) throw DomainError("softmax_row: empty score vector");
    double hi = scores[0];
    for (double s : scores) {
        if (!std::isfinite(s)) throw NumericError("softmax_row: non-finite score");
        hi = std::max(hi, s);
    }
    std::vector<double> out(scores.size());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - hi);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

/// Attention mass the row places on the leading `image_slots` columns.
inline double image_mass(std::span<const double> attn_row, std::size_t image_slots) {
    if (image_slots > attn_row.size())
        throw DomainError("image_mass: image_slots " + std::to_string(image_slots) +
                          " exceeds row length " + std::to_string(attn_row.size()));
    double m = 0.0;
    for (std::size_t j = 0; j < image_slots; ++j) m += attn_row[j];
    return m;
}

/// Post-softmax attention, [layer][head][query][key], dense row-major.
class AttentionTensor {
public:
    AttentionTensor() = default;
    AttentionTensor(std::size_t layers, std::size_t heads, std::size_t tokens)
        : layers_(layers), heads_(heads), tokens_(tokens), values_(layers * heads * tokens * tokens, 0.0) {}

    std::size_t layers() const noexcept { return layers_; }
    std::size_t heads() const noexcept { return heads_; }
    std::size_t tokens() const noexcept { return tokens_; }

    double& at(std::size_t l, std::size_t h, std::size_t q, std::size_t k) {
        return values_[offset(l, h, q) + k];
    }
    double at(std::size_t l, std::size_t h, std::size_t q, std::size_t k) const {
        return values_[offset(l, h, q) + k];
    }

    std::span<double> row(std::size_t l, std::size_t h, std::size_t q) {
        return {values_.data() + offset(l, h, q), tokens_};
    }
    std::span<const double> row(std::size_t l, std::size_t h, std::size_t q) const {
        return {values_.data() + offset(l, h, q), tokens_};
    }

    const std::vector<double>& values() const noexcept { return values_; }

    /// Largest |row sum - 1| over all rows.
    double max_row_error() const {
        double worst = 0.0;
        for (std::size_t l = 0; l < layers_; ++l)
            for (std::size_t h = 0; h < heads_; ++h)
                for (std::size_t q = 0; q < tokens_; ++q) {
                    double s = 0.0;
                    for (double v : row(l, h, q)) s += v;
                    worst = std::max(worst, std::abs(s - 1.0));
                }
        return worst;
    }

    /// True when every entry above the diagonal is exactly zero.
    bool is_causal() const {
        for (std::size_t l = 0; l < layers_; ++l)
            for (std::size_t h = 0; h < heads_; ++h)
                for (std::size_t q = 0; q < tokens_; ++q)
                    for (std::size_t k = q + 1; k < tokens_; ++k)
                        if (at(l, h, q, k) != 0.0) return false;
        return true;
    }

    bool operator==(const AttentionTensor&) const = default;

private:
    std::size_t offset(std::size_t l, std::size_t h, std::size_t q) const {
        return ((l * heads_ + h) * tokens_ + q) * tokens_;
    }

    std::size_t layers_ = 0;
    std::size_t heads_ = 0;
    std::size_t tokens_ = 0;
    std::vector<double> values_;
};

}  // namespace caac
