#pragma once

// Greedy autoregressive controller with the dual-pass confidence gate:
//   pass 1: VTC hooks only -> logits, p_t
//   pass 2: only when p_t < p_thr, VTC + AAR(lambda_t) -> emitted token

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "caac/aar.hpp"
#include "caac/decoder.hpp"
#include "caac/hooks.hpp"
#include "caac/relevancy.hpp"
#include "caac/tokens.hpp"
#include "caac/vtc.hpp"

namespace caac {

struct GenerationConfig {
    std::size_t max_new_tokens = 32;
    TokenId eos_token = 0;
    const CalibrationSet* vtc = nullptr;  // not owned
    std::optional<AarConfig> aar;
    bool row_renorm = true;
    bool keep_snapshots = false;

    void validate() const {
        if (max_new_tokens < 1) throw DomainError("GenerationConfig: max_new_tokens must be >= 1");
        if (vtc) vtc->validate();
        if (aar) aar->validate();
    }
};

struct StepRecord {
    TokenId token = 0;
    double p_t = 0.0;
    bool triggered = false;
    double lambda_t = 1.0;
    double image_mass_pass1 = 0.0;
    double image_mass_final = 0.0;
    bool pass2_executed = false;
    double top_decile = 0.0;  // concentration of the final last row, mean over (layer, head)
    std::optional<double> r_rel;

    bool operator==(const StepRecord&) const = default;
};

/// Last-row attention of every (layer, head) at one step; [layer * heads + head][key].
struct RowSnapshot {
    std::size_t position = 0;
    std::vector<std::vector<double>> rows;
};

struct GenerationTrace {
    TokenSequence prompt;
    TokenSequence sequence;
    std::vector<StepRecord> steps;
    std::vector<RowSnapshot> snapshots;

    std::vector<TokenId> tokens() const {
        std::vector<TokenId> out;
        for (const auto& s : steps) out.push_back(s.token);
        return out;
    }
};

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Hooks for one pass: VTC if configured, AAR if lambda is given.
inline HookSet pass_hooks(const GenerationConfig& g, std::size_t num_layers, std::optional<double> lambda_t) {
    HookSet hooks;
    hooks.row_renorm = g.row_renorm;
    if (g.vtc) hooks.add_post(make_vtc_hook(*g.vtc));
    if (lambda_t && g.aar) hooks.add_pre(make_aar_hook(*lambda_t, g.aar->layers_for(num_layers)));
    return hooks;
}

namespace detail {

inline RowSnapshot snapshot_last_row(const AttentionTensor& attn) {
    RowSnapshot s;
    s.position = attn.tokens() - 1;
    for (std::size_t l = 0; l < attn.layers(); ++l)
        for (std::size_t h = 0; h < attn.heads(); ++h) {
            auto r = attn.row(l, h, s.position);
            s.rows.emplace_back(r.begin(), r.end());
        }
    return s;
}

}  // namespace detail

inline GenerationTrace generate(const Decoder& model, const TokenSequence& prompt, const GenerationConfig& g) {
    g.validate();
    if (prompt.generated_count() != 0) throw DomainError("generate: prompt must not contain generated tokens");
    const ModelConfig& cfg = model.config();
    const std::size_t last_layer = cfg.num_layers - 1;

    GenerationTrace trace;
    trace.prompt = prompt;
    trace.sequence = prompt;
    const HookSet pass1_hooks = pass_hooks(g, cfg.num_layers, std::nullopt);

    for (std::size_t t = 0; t < g.max_new_tokens; ++t) {
        StepRecord rec;
        ForwardResult fr = forward_full(model, trace.sequence, pass1_hooks);
        rec.p_t = read_confidence(fr.logits);
        rec.image_mass_pass1 = last_row_image_mass(fr.attn, last_layer, cfg.image_slots);
        if (g.aar) {
            const ScaleDecision d = decide_scale(rec.p_t, *g.aar);
            rec.triggered = d.triggered;
            rec.lambda_t = d.lambda_t;
        }
        if (rec.triggered) {
            const HookSet hooks2 = pass_hooks(g, cfg.num_layers, rec.lambda_t);
            fr = forward_full(model, trace.sequence, hooks2);
            rec.pass2_executed = true;
        }
        rec.image_mass_final = last_row_image_mass(fr.attn, last_layer, cfg.image_slots);
        rec.top_decile = last_row_top_decile(fr.attn, cfg.image_slots);
        rec.token = static_cast<TokenId>(argmax(fr.logits));
        if (g.keep_snapshots) trace.snapshots.push_back(detail::snapshot_last_row(fr.attn));
        trace.steps.push_back(rec);
        trace.sequence.append_generated(rec.token);
        if (rec.token == g.eos_token) break;
    }
    return trace;
}

/// Re-run pass 2 of a triggered step from the logged prefix and lambda.
inline TokenId replay_step(const Decoder& model, const GenerationTrace& trace, std::size_t step,
                           const GenerationConfig& g) {
    if (step >= trace.steps.size()) throw DomainError("replay_step: step out of range");
    TokenSequence prefix = trace.prompt;
    for (std::size_t t = 0; t < step; ++t) prefix.append_generated(trace.steps[t].token);
    const auto& rec = trace.steps[step];
    std::optional<double> lambda;
    if (rec.pass2_executed) lambda = rec.lambda_t;
    const HookSet hooks = pass_hooks(g, model.config().num_layers, lambda);
    return static_cast<TokenId>(argmax(forward_full(model, prefix, hooks).logits));
}

enum class AblationCell { Baseline, VtcOnly, AarOnly, Both };

inline const char* to_string(AblationCell c) {
    switch (c) {
        case AblationCell::Baseline: return "baseline";
        case AblationCell::VtcOnly: return "vtc_only";
        case AblationCell::AarOnly: return "aar_only";
        case AblationCell::Both: return "both";
    }
    return "?";
}

inline constexpr AblationCell kAblationCells[] = {AblationCell::Baseline, AblationCell::VtcOnly,
                                                  AblationCell::AarOnly, AblationCell::Both};

/// Generation settings of one ablation cell, derived from the full configuration.
inline GenerationConfig cell_config(const GenerationConfig& full, AblationCell cell) {
    GenerationConfig g = full;
    if (cell == AblationCell::Baseline || cell == AblationCell::AarOnly) g.vtc = nullptr;
    if (cell == AblationCell::Baseline || cell == AblationCell::VtcOnly) g.aar.reset();
    return g;
}

inline std::map<AblationCell, GenerationTrace> ablate(const Decoder& model, const TokenSequence& prompt,
                                                      const GenerationConfig& full) {
    std::map<AblationCell, GenerationTrace> out;
    for (AblationCell c : kAblationCells) out.emplace(c, generate(model, prompt, cell_config(full, c)));
    return out;
}

/// Attention as it was actually used during generation: an unhooked forward
/// over the final prefix with each step's last row replaced by its snapshot.
inline AttentionTensor effective_attention(const Decoder& model, const GenerationTrace& trace) {
    if (trace.snapshots.size() != trace.steps.size())
        throw DomainError("effective_attention: trace was generated without snapshots");
    if (trace.steps.empty()) throw DomainError("effective_attention: empty trace");
    TokenSequence prefix = trace.prompt;
    for (std::size_t t = 0; t + 1 < trace.steps.size(); ++t) prefix.append_generated(trace.steps[t].token);
    AttentionTensor attn = forward_full(model, prefix).attn;
    for (const auto& snap : trace.snapshots)
        for (std::size_t l = 0; l < attn.layers(); ++l)
            for (std::size_t h = 0; h < attn.heads(); ++h) {
                const auto& src = snap.rows[l * attn.heads() + h];
                auto dst = attn.row(l, h, snap.position);
                std::copy(src.begin(), src.end(), dst.begin());
            }
    return attn;
}

/// Fill StepRecord::r_rel for every step from the rollout of the effective attention.
inline RelevancyMap annotate_relevancy(const Decoder& model, GenerationTrace& trace) {
    const AttentionTensor attn = effective_attention(model, trace);
    RelevancyMap map = compute_relevancy(attn);
    for (std::size_t t = 0; t < trace.steps.size(); ++t)
        trace.steps[t].r_rel = relative_image_relevancy(map, model.config().image_slots, trace.snapshots[t].position);
    return map;
}

/// d logit[target] / d attention entry, central differences. Cost: two forward
/// passes per causal entry, so keep sequences short.
inline AttentionTensor attention_gradients(const Decoder& model, const TokenSequence& seq, TokenId target,
                                           const HookSet& hooks = {}, double step = 1e-5) {
    const ModelConfig& cfg = model.config();
    const std::size_t n = seq.size();
    AttentionTensor grads(cfg.num_layers, cfg.num_heads, n);
    ForwardOptions opts;
    opts.hooks = &hooks;
    for (std::size_t l = 0; l < cfg.num_layers; ++l)
        for (std::size_t h = 0; h < cfg.num_heads; ++h)
            for (std::size_t q = 0; q < n; ++q)
                for (std::size_t k = 0; k <= q; ++k) {
                    opts.probe = AttentionProbe{l, h, q, k, step};
                    const double up = model.forward(seq, opts).logits[static_cast<std::size_t>(target)];
                    opts.probe->delta = -step;
                    const double down = model.forward(seq, opts).logits[static_cast<std::size_t>(target)];
                    grads.at(l, h, q, k) = (up - down) / (2.0 * step);
                }
    return grads;
}

}  // namespace caac
