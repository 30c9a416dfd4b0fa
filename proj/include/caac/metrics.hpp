#pragma once

// Object-hallucination metrics (CHAIR_i, CHAIR_s, AMBER CHAIR/HAL/COVER)
// against synthetic ground truth, plus CAAC telemetry. Mentions are counted
// once per object per response.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "caac/errors.hpp"
#include "caac/generation.hpp"
#include "caac/relevancy.hpp"
#include "caac/tokens.hpp"
#include "caac/world.hpp"

namespace caac {

using ObjectSet = std::set<TokenId>;

inline double chair_i(std::span<const TokenId> mentioned, const ObjectSet& present) {
    const ObjectSet distinct(mentioned.begin(), mentioned.end());
    if (distinct.empty()) return 0.0;
    std::size_t bad = 0;
    for (TokenId m : distinct)
        if (!present.contains(m)) ++bad;
    return static_cast<double>(bad) / static_cast<double>(distinct.size());
}

inline double chair_s(const std::vector<std::vector<TokenId>>& sentences, const ObjectSet& present) {
    if (sentences.empty()) return 0.0;
    std::size_t bad = 0;
    for (const auto& s : sentences)
        if (std::any_of(s.begin(), s.end(), [&](TokenId m) { return !present.contains(m); })) ++bad;
    return static_cast<double>(bad) / static_cast<double>(sentences.size());
}

/// Object mentions of a response, in order.
inline std::vector<TokenId> object_mentions(std::span<const TokenId> tokens, const ObjectVocabulary& vocab) {
    std::vector<TokenId> out;
    for (TokenId t : tokens)
        if (vocab.is_object(t)) out.push_back(t);
    return out;
}

/// SEP/EOS-delimited spans of object mentions; spans without objects are dropped.
inline std::vector<std::vector<TokenId>> split_sentences(std::span<const TokenId> tokens,
                                                         const ObjectVocabulary& vocab) {
    std::vector<std::vector<TokenId>> out;
    std::vector<TokenId> cur;
    for (TokenId t : tokens) {
        if (t == vocab.sep() || t == vocab.eos()) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else if (vocab.is_object(t)) {
            cur.push_back(t);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

struct AmberTriplet {
    double chair = 0.0;
    double hal = 0.0;
    double cover = 0.0;
};

inline AmberTriplet amber_triplet(const std::vector<std::vector<TokenId>>& responses,
                                  const std::vector<ObjectSet>& present) {
    if (responses.empty()) throw DomainError("amber_triplet: empty suite");
    if (responses.size() != present.size()) throw DomainError("amber_triplet: one response per scene required");
    AmberTriplet t;
    for (std::size_t i = 0; i < responses.size(); ++i) {
        const double c = chair_i(responses[i], present[i]);
        t.chair += c;
        if (c > 0.0) t.hal += 1.0;
        const ObjectSet mentioned(responses[i].begin(), responses[i].end());
        std::size_t hit = 0;
        for (TokenId p : present[i])
            if (mentioned.contains(p)) ++hit;
        if (!present[i].empty()) t.cover += static_cast<double>(hit) / static_cast<double>(present[i].size());
    }
    const double n = static_cast<double>(responses.size());
    t.chair /= n;
    t.hal /= n;
    t.cover /= n;
    return t;
}

/// One scene's generation as consumed by the metrics.
struct SceneRun {
    std::uint64_t seed = 0;
    std::vector<TokenId> present;
    std::vector<StepRecord> steps;

    std::vector<TokenId> tokens() const {
        std::vector<TokenId> out;
        for (const auto& s : steps) out.push_back(s.token);
        return out;
    }
};

struct Telemetry {
    double trigger_rate = 0.0;
    std::optional<double> decay_correlation;
    double concentration_top_decile = 0.0;
    std::optional<double> confidence_truthful;
    std::optional<double> confidence_hallucinatory;
    std::optional<double> confidence_gap;
    std::size_t steps = 0;
    std::size_t triggered = 0;
};

inline Telemetry telemetry(const std::vector<SceneRun>& runs, const ObjectVocabulary& vocab) {
    if (runs.empty()) throw DomainError("telemetry: empty trace set");
    Telemetry t;
    double conc = 0.0, pt_true = 0.0, pt_hal = 0.0;
    std::size_t n_true = 0, n_hal = 0;
    std::vector<std::vector<double>> relevancy;
    bool have_relevancy = true;
    for (const auto& run : runs) {
        std::vector<double> series;
        for (const auto& s : run.steps) {
            ++t.steps;
            if (s.triggered) ++t.triggered;
            conc += s.top_decile;
            if (vocab.is_object(s.token)) {
                if (std::binary_search(run.present.begin(), run.present.end(), s.token)) {
                    pt_true += s.p_t;
                    ++n_true;
                } else {
                    pt_hal += s.p_t;
                    ++n_hal;
                }
            }
            if (s.r_rel) series.push_back(*s.r_rel);
            else have_relevancy = false;
        }
        relevancy.push_back(std::move(series));
    }
    if (t.steps == 0) throw DomainError("telemetry: traces contain no steps");
    t.trigger_rate = static_cast<double>(t.triggered) / static_cast<double>(t.steps);
    t.concentration_top_decile = conc / static_cast<double>(t.steps);
    if (n_true) t.confidence_truthful = pt_true / static_cast<double>(n_true);
    if (n_hal) t.confidence_hallucinatory = pt_hal / static_cast<double>(n_hal);
    if (n_true && n_hal) t.confidence_gap = *t.confidence_truthful - *t.confidence_hallucinatory;
    if (have_relevancy) {
        std::size_t longest = 0;
        for (const auto& s : relevancy) longest = std::max(longest, s.size());
        if (longest >= 3) t.decay_correlation = decay_trace(relevancy).correlation;
    }
    return t;
}

struct SeedMetrics {
    std::uint64_t seed = 0;
    double chair_i = 0.0;
    double chair_s = 0.0;
    double cover = 0.0;
    bool hallucinated = false;
    std::size_t steps = 0;
    std::size_t triggered = 0;
};

struct MetricReport {
    double chair_i = 0.0;  // mean over seeds
    double chair_s = 0.0;  // mean over seeds
    double amber_chair = 0.0;
    double hal = 0.0;
    double cover = 0.0;
    Telemetry telemetry;
    std::vector<SeedMetrics> per_seed;
};

inline MetricReport compute_report(const std::vector<SceneRun>& runs, const ObjectVocabulary& vocab) {
    if (runs.empty()) throw DomainError("compute_report: empty suite");
    MetricReport r;
    std::vector<std::vector<TokenId>> responses;
    std::vector<ObjectSet> presents;
    for (const auto& run : runs) {
        const auto tokens = run.tokens();
        const ObjectSet present(run.present.begin(), run.present.end());
        const auto mentions = object_mentions(tokens, vocab);
        SeedMetrics s;
        s.seed = run.seed;
        s.chair_i = chair_i(mentions, present);
        s.chair_s = chair_s(split_sentences(tokens, vocab), present);
        s.hallucinated = s.chair_i > 0.0;
        s.steps = run.steps.size();
        for (const auto& st : run.steps)
            if (st.triggered) ++s.triggered;
        const ObjectSet distinct(mentions.begin(), mentions.end());
        std::size_t hit = 0;
        for (TokenId p : present)
            if (distinct.contains(p)) ++hit;
        s.cover = present.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(present.size());
        r.chair_i += s.chair_i;
        r.chair_s += s.chair_s;
        r.per_seed.push_back(s);
        responses.push_back(mentions);
        presents.push_back(present);
    }
    r.chair_i /= static_cast<double>(runs.size());
    r.chair_s /= static_cast<double>(runs.size());
    const AmberTriplet a = amber_triplet(responses, presents);
    r.amber_chair = a.chair;
    r.hal = a.hal;
    r.cover = a.cover;
    r.telemetry = telemetry(runs, vocab);
    return r;
}

}  // namespace caac
