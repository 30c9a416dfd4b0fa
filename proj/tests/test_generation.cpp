#include <gtest/gtest.h>

#include <limits>
#include <vector>

#include "caac/experiment.hpp"

using namespace caac;

namespace {

struct Fixture {
    RunConfig cfg;
    World world;
    CalibrationSet cal;

    Fixture() : world(build_world(cfg)), cal(calibrate(world, cfg).set) {}

    GenerationConfig full() const {
        GenerationConfig g;
        g.eos_token = world.vocab.eos();
        g.vtc = &cal;
        g.aar = cfg.aar;
        return g;
    }
};

const Fixture& fx() {
    static const Fixture f;
    return f;
}

/// Greedy decoding written out directly against forward_full.
std::vector<TokenId> plain_greedy(const Decoder& m, TokenSequence seq, std::size_t max_new, TokenId eos) {
    std::vector<TokenId> out;
    for (std::size_t t = 0; t < max_new; ++t) {
        const auto logits = forward_full(m, seq).logits;
        const auto tok = static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        out.push_back(tok);
        seq.append_generated(tok);
        if (tok == eos) break;
    }
    return out;
}

}  // namespace

TEST(Generate, NoInterventionsIsPlainGreedy) {
    const auto& f = fx();
    GenerationConfig g;
    g.eos_token = f.world.vocab.eos();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto prompt = f.world.prompt(f.world.scene(seed));
        const auto trace = generate(*f.world.decoder, prompt, g);
        EXPECT_EQ(trace.tokens(), plain_greedy(*f.world.decoder, prompt, g.max_new_tokens, g.eos_token));
        for (const auto& s : trace.steps) {
            EXPECT_FALSE(s.triggered);
            EXPECT_FALSE(s.pass2_executed);
            EXPECT_EQ(s.image_mass_pass1, s.image_mass_final);
        }
    }
}

TEST(Generate, BetaZeroMatchesEmptyHookSet) {
    const auto& f = fx();
    CalibrationSet zero = f.cal;
    zero.beta = 0.0;
    GenerationConfig g, plain;
    g.eos_token = plain.eos_token = f.world.vocab.eos();
    g.vtc = &zero;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto prompt = f.world.prompt(f.world.scene(seed));
        EXPECT_EQ(generate(*f.world.decoder, prompt, g).steps, generate(*f.world.decoder, prompt, plain).steps);
    }
}

TEST(Generate, ThresholdZeroEqualsVtcOnly) {
    const auto& f = fx();
    GenerationConfig g = f.full();
    g.aar->p_thr = 0.0;
    const GenerationConfig vtc_only = cell_config(f.full(), AblationCell::VtcOnly);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto prompt = f.world.prompt(f.world.scene(seed));
        EXPECT_EQ(generate(*f.world.decoder, prompt, g).steps, generate(*f.world.decoder, prompt, vtc_only).steps);
    }
}

TEST(Generate, SecondPassExactlyWhenTriggered) {
    const auto& f = fx();
    std::size_t triggered = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto trace = generate(*f.world.decoder, f.world.prompt(f.world.scene(seed)), f.full());
        EXPECT_LE(trace.steps.size(), f.full().max_new_tokens);
        for (const auto& s : trace.steps) {
            EXPECT_EQ(s.pass2_executed, s.triggered);
            EXPECT_EQ(s.triggered, s.p_t < f.cfg.aar.p_thr);
            if (!s.triggered) {
                EXPECT_EQ(s.lambda_t, 1.0);
                EXPECT_EQ(s.image_mass_pass1, s.image_mass_final);
            } else {
                EXPECT_NEAR(s.lambda_t, compute_lambda(s.p_t, f.cfg.aar), 0.0);
                ++triggered;
            }
        }
    }
    EXPECT_GT(triggered, 0u);
}

TEST(Generate, TriggeredStepsReplay) {
    const auto& f = fx();
    const GenerationConfig g = f.full();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto trace = generate(*f.world.decoder, f.world.prompt(f.world.scene(seed)), g);
        for (std::size_t t = 0; t < trace.steps.size(); ++t)
            EXPECT_EQ(replay_step(*f.world.decoder, trace, t, g), trace.steps[t].token) << "seed " << seed << " step " << t;
    }
}

TEST(Generate, AtLeastOneTriggerWithinBudget) {
    const auto& f = fx();
    GenerationConfig g = cell_config(f.full(), AblationCell::AarOnly);
    bool any = false;
    for (std::uint64_t seed = 0; seed < 3 && !any; ++seed)
        for (const auto& s : generate(*f.world.decoder, f.world.prompt(f.world.scene(seed)), g).steps)
            any = any || s.triggered;
    EXPECT_TRUE(any);
}

TEST(Generate, StopsAtEosOrBudget) {
    const auto& f = fx();
    GenerationConfig g = f.full();
    g.max_new_tokens = 3;
    const auto trace = generate(*f.world.decoder, f.world.prompt(f.world.scene(0)), g);
    EXPECT_LE(trace.steps.size(), 3u);
    g.max_new_tokens = 32;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto t = generate(*f.world.decoder, f.world.prompt(f.world.scene(seed)), g);
        for (std::size_t i = 0; i + 1 < t.steps.size(); ++i) EXPECT_NE(t.steps[i].token, g.eos_token);
        EXPECT_TRUE(t.steps.size() == 32 || t.steps.back().token == g.eos_token);
    }
}

TEST(Generate, Errors) {
    const auto& f = fx();
    GenerationConfig g = f.full();
    g.max_new_tokens = 0;
    const auto prompt = f.world.prompt(f.world.scene(0));
    EXPECT_THROW(generate(*f.world.decoder, prompt, g), DomainError);
    auto with_gen = prompt;
    with_gen.append_generated(f.world.vocab.sep());
    EXPECT_THROW(generate(*f.world.decoder, with_gen, f.full()), DomainError);
    ScoreBias bad;
    bad.image_column_bias.assign(f.world.model_config.image_slots, 0.0);
    bad.image_column_bias[0] = std::numeric_limits<double>::quiet_NaN();
    const Decoder broken = f.world.decoder->with_bias(bad);
    EXPECT_THROW(generate(broken, prompt, f.full()), NumericError);
}

TEST(Ablate, CellsDifferOnlyInTheirComponents) {
    const auto& f = fx();
    const auto prompt = f.world.prompt(f.world.scene(4));
    const auto cells = ablate(*f.world.decoder, prompt, f.full());
    ASSERT_EQ(cells.size(), 4u);
    GenerationConfig plain;
    plain.eos_token = f.world.vocab.eos();
    EXPECT_EQ(cells.at(AblationCell::Baseline).steps, generate(*f.world.decoder, prompt, plain).steps);
    for (const auto& s : cells.at(AblationCell::VtcOnly).steps) EXPECT_FALSE(s.pass2_executed);
    for (const auto& s : cells.at(AblationCell::Baseline).steps) EXPECT_FALSE(s.pass2_executed);
}

TEST(Ablate, ZeroSettingsCollapseToBaseline) {
    const auto& f = fx();
    CalibrationSet zero = f.cal;
    zero.beta = 0.0;
    GenerationConfig g = f.full();
    g.vtc = &zero;
    g.aar->p_thr = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto cells = ablate(*f.world.decoder, f.world.prompt(f.world.scene(seed)), g);
        for (AblationCell c : kAblationCells)
            EXPECT_EQ(cells.at(c).steps, cells.at(AblationCell::Baseline).steps) << to_string(c);
    }
}

TEST(EffectiveAttention, SnapshotsReplaceLastRows) {
    const auto& f = fx();
    GenerationConfig g = f.full();
    g.keep_snapshots = true;
    const auto trace = generate(*f.world.decoder, f.world.prompt(f.world.scene(2)), g);
    const auto attn = effective_attention(*f.world.decoder, trace);
    EXPECT_EQ(attn.tokens(), trace.prompt.size() + trace.steps.size() - 1);
    EXPECT_LT(attn.max_row_error(), 1e-12);
    const auto& last = trace.snapshots.back();
    for (std::size_t k = 0; k < attn.tokens(); ++k) EXPECT_EQ(attn.at(0, 0, last.position, k), last.rows[0][k]);
    GenerationConfig no_snap = f.full();
    EXPECT_THROW(effective_attention(*f.world.decoder, generate(*f.world.decoder, trace.prompt, no_snap)), DomainError);
}

TEST(EffectiveAttention, RelevancyAnnotationInUnitRange) {
    const auto& f = fx();
    GenerationConfig g = f.full();
    g.keep_snapshots = true;
    auto trace = generate(*f.world.decoder, f.world.prompt(f.world.scene(1)), g);
    annotate_relevancy(*f.world.decoder, trace);
    for (const auto& s : trace.steps) {
        ASSERT_TRUE(s.r_rel.has_value());
        EXPECT_GE(*s.r_rel, 0.0);
        EXPECT_LE(*s.r_rel, 1.0);
    }
}
