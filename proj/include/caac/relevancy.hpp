#pragma once

// Layer-by-layer relevancy propagation (rollout) and the reductions built on
// it: relative image relevancy, top-decile concentration, decay with position.
//
// Storage convention: R is row = output position, column = input token, so
// R(j, i) is the influence of input token i on output position j. Causal
// support means R(j, i) == 0 for i > j.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "caac/attention.hpp"
#include "caac/errors.hpp"

namespace caac {

enum class Aggregation { UniformRollout, GradientWeighted };

struct RelevancyMap {
    std::size_t tokens = 0;
    std::vector<double> values;  // tokens x tokens, row = output
    Aggregation aggregation = Aggregation::UniformRollout;

    double operator()(std::size_t out, std::size_t in) const { return values[out * tokens + in]; }
    /// Influence of input token `in` on output position `out`.
    double influence(std::size_t in, std::size_t out) const { return (*this)(out, in); }
    std::span<const double> row(std::size_t out) const { return {values.data() + out * tokens, tokens}; }
};

namespace detail {

inline void renormalize_rows(std::vector<double>& m, std::size_t n) {
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < n; ++c) s += m[r * n + c];
        if (s > 0.0)
            for (std::size_t c = 0; c < n; ++c) m[r * n + c] /= s;
    }
}

}  // namespace detail

/// Head-aggregated, nonnegative, row-renormalized attention of one layer.
inline std::vector<double> aggregate_heads(const AttentionTensor& attn, std::size_t layer,
                                           const AttentionTensor* grads) {
    const std::size_t n = attn.tokens(), heads = attn.heads();
    std::vector<double> agg(n * n, 0.0);
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t q = 0; q < n; ++q) {
            auto a = attn.row(layer, h, q);
            for (std::size_t k = 0; k <= q; ++k) {
                double v = a[k];
                if (grads) v = std::max(0.0, grads->at(layer, h, q, k) * v);
                agg[q * n + k] += v;
            }
        }
    for (double& v : agg) v /= static_cast<double>(heads);
    detail::renormalize_rows(agg, n);
    return agg;
}

/// R = I; for each layer R += A_l R; rows renormalized at the end.
/// Passing `grads` selects gradient weighting (negative products clamped to 0).
inline RelevancyMap compute_relevancy(const AttentionTensor& attn, const AttentionTensor* grads = nullptr) {
    if (grads && (grads->layers() != attn.layers() || grads->heads() != attn.heads() ||
                  grads->tokens() != attn.tokens()))
        throw DomainError("compute_relevancy: gradient tensor shape differs from attention");
    const std::size_t n = attn.tokens();
    if (n == 0) throw DomainError("compute_relevancy: empty attention tensor");
    RelevancyMap map;
    map.tokens = n;
    map.aggregation = grads ? Aggregation::GradientWeighted : Aggregation::UniformRollout;
    map.values.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) map.values[i * n + i] = 1.0;

    std::vector<double> update(n * n);
    for (std::size_t l = 0; l < attn.layers(); ++l) {
        const auto agg = aggregate_heads(attn, l, grads);
        std::fill(update.begin(), update.end(), 0.0);
        for (std::size_t q = 0; q < n; ++q)
            for (std::size_t m = 0; m <= q; ++m) {
                const double a = agg[q * n + m];
                if (a == 0.0) continue;
                for (std::size_t k = 0; k <= m; ++k) update[q * n + k] += a * map.values[m * n + k];
            }
        for (std::size_t i = 0; i < n * n; ++i) map.values[i] += update[i];
    }
    detail::renormalize_rows(map.values, n);
    return map;
}

/// Share of output position `out_pos`'s relevancy that comes from the first N_i tokens.
inline double relative_image_relevancy(const RelevancyMap& map, std::size_t image_slots, std::size_t out_pos) {
    if (out_pos >= map.tokens) throw DomainError("relative_image_relevancy: out_pos outside the map");
    if (image_slots > map.tokens) throw DomainError("relative_image_relevancy: image_slots exceeds map size");
    const auto row = map.row(out_pos);
    double img = 0.0, total = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) {
        total += row[i];
        if (i < image_slots) img += row[i];
    }
    if (!(total > 0.0)) throw DomainError("relative_image_relevancy: zero relevancy mass at output position");
    return img / total;
}

struct ConcentrationProfile {
    std::vector<double> cumulative_share;  // after descending sort; back() == 1
    std::size_t top_count = 0;             // ceil(0.1 * n)
    double top_decile_share = 0.0;
};

inline ConcentrationProfile concentration_profile(std::span<const double> values) {
    if (values.empty()) throw DomainError("concentration_profile: empty input");
    std::vector<double> sorted(values.begin(), values.end());
    double total = 0.0;
    for (double v : sorted) {
        if (v < 0.0 || !std::isfinite(v)) throw DomainError("concentration_profile: entries must be nonnegative");
        total += v;
    }
    if (!(total > 0.0)) throw DomainError("concentration_profile: all-zero input");
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    ConcentrationProfile p;
    p.cumulative_share.reserve(sorted.size());
    double acc = 0.0;
    for (double v : sorted) {
        acc += v;
        p.cumulative_share.push_back(acc / total);
    }
    p.top_count = (sorted.size() + 9) / 10;
    p.top_decile_share = p.cumulative_share[p.top_count - 1];
    return p;
}

/// Mean over (layer, head) of the top-decile share of the last row's image columns.
inline double last_row_top_decile(const AttentionTensor& attn, std::size_t image_slots) {
    const std::size_t q = attn.tokens() - 1;
    double acc = 0.0;
    for (std::size_t l = 0; l < attn.layers(); ++l)
        for (std::size_t h = 0; h < attn.heads(); ++h)
            acc += concentration_profile(attn.row(l, h, q).first(image_slots)).top_decile_share;
    return acc / static_cast<double>(attn.layers() * attn.heads());
}

/// Ranks starting at 1; ties get their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

/// Spearman rank correlation. A constant series has correlation 0.
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DomainError("spearman: length mismatch");
    if (x.size() < 2) throw DomainError("spearman: need at least two points");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

struct DecayTrace {
    std::vector<std::size_t> positions;
    std::vector<double> mean_relevancy;
    std::vector<std::size_t> counts;
    double correlation = 0.0;
};

/// Per-position mean relative image relevancy over several generations and its
/// Spearman correlation with position. series[s][t] is step t of generation s.
inline DecayTrace decay_trace(const std::vector<std::vector<double>>& series) {
    std::size_t longest = 0;
    for (const auto& s : series) longest = std::max(longest, s.size());
    DecayTrace out;
    for (std::size_t t = 0; t < longest; ++t) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& s : series)
            if (t < s.size()) {
                sum += s[t];
                ++count;
            }
        out.positions.push_back(t);
        out.mean_relevancy.push_back(sum / static_cast<double>(count));
        out.counts.push_back(count);
    }
    if (out.positions.size() < 3) throw DomainError("decay_trace: need at least 3 positions");
    std::vector<double> pos(out.positions.begin(), out.positions.end());
    out.correlation = spearman(pos, out.mean_relevancy);
    return out;
}

}  // namespace caac
