#include <gtest/gtest.h>

#include <set>
#include <vector>

#include "caac/experiment.hpp"

using namespace caac;

namespace {

MetricReport baseline_report(RunConfig cfg) {
    cfg.vtc_enabled = false;
    cfg.aar_enabled = false;
    const World world = build_world(cfg);
    return compute_report(run_suite(world, cfg, nullptr).runs, world.vocab);
}

World default_world() {
    const WorldConfig w;
    return World::build(w, World::default_model_config(w));
}

}  // namespace

TEST(Vocabulary, DistinctIdsAndStochasticPrior) {
    const World world = default_world();
    const auto& v = world.vocab;
    const std::set<TokenId> specials{v.null_token(), v.gray_token(), v.noise_token(0), v.bos(), v.eos(), v.sep(),
                                     v.query_token(0), v.query_token(7)};
    EXPECT_EQ(specials.size(), 8u);
    for (TokenId t : specials) EXPECT_FALSE(v.is_object(t));
    EXPECT_EQ(static_cast<std::size_t>(v.query_token(7)) + 1, v.vocab_size());
    for (std::size_t i = 0; i < v.num_objects; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < v.num_objects; ++j) {
            EXPECT_GE(v.prior[i * v.num_objects + j], 0.0);
            s += v.prior[i * v.num_objects + j];
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
        EXPECT_EQ(v.prior[i * v.num_objects + i], 0.0);
        EXPECT_NEAR(v.prior_at(static_cast<TokenId>(i), v.strongest_prior[i]), 0.5, 1e-15);
    }
}

TEST(Scene, DeterministicAndWellFormed) {
    const World world = default_world();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Scene s = world.scene(seed);
        EXPECT_EQ(s, world.scene(seed));
        EXPECT_EQ(s.present.size(), 5u);
        EXPECT_TRUE(std::is_sorted(s.present.begin(), s.present.end()));
        EXPECT_EQ(std::set<TokenId>(s.present.begin(), s.present.end()).size(), 5u);
        EXPECT_EQ(s.layout.size(), 32u);
        for (TokenId p : s.present) EXPECT_GE(std::count(s.layout.begin(), s.layout.end(), p), 1);
        for (TokenId t : s.layout) EXPECT_TRUE(t == world.vocab.null_token() || s.contains(t));
    }
    EXPECT_NE(world.scene(0), world.scene(1));
}

TEST(Scene, FullOccupancyAndBounds) {
    const World world = default_world();
    const Scene s = sample_scene(world.vocab, 32, 32, 3, 4);
    for (TokenId t : s.layout) EXPECT_NE(t, world.vocab.null_token());
    EXPECT_THROW(sample_scene(world.vocab, 0, 32, 3, 0), DomainError);
    EXPECT_THROW(sample_scene(world.vocab, 33, 32, 3, 0), DomainError);
}

TEST(Labels, TruthfulHallucinatoryFunction) {
    const World world = default_world();
    const Scene s = world.scene(0);
    TokenId absent = 0;
    while (s.contains(absent)) ++absent;
    const std::vector<TokenId> toks{s.present[0], world.vocab.sep(), absent, world.vocab.eos()};
    EXPECT_EQ(label_tokens(toks, s, world.vocab),
              (std::vector<TokenLabel>{TokenLabel::Truthful, TokenLabel::Function, TokenLabel::Hallucinatory,
                                       TokenLabel::Function}));
    EXPECT_THROW(label_tokens(std::vector<TokenId>{world.vocab.null_token()}, s, world.vocab), DomainError);
}

TEST(PlantedDecoder, BiasIsExactlyTheScoreDifference) {
    const World world = default_world();
    const Decoder unbiased = world.decoder->with_bias({});
    auto seq = world.prompt(world.scene(2));
    for (int i = 0; i < 5; ++i) seq.append_generated(world.vocab.sep());
    ForwardOptions opts;
    opts.keep_scores = true;
    const auto a = world.decoder->forward(seq, opts), b = unbiased.forward(seq, opts);
    const ScoreBias& bias = world.decoder->bias();
    ASSERT_EQ(sink_positions(world.config, 0).size(), 2u);
    // Later layers also see the bias through the residual stream.
    const std::size_t l = 0;
    for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t q = 0; q < seq.size(); ++q)
            for (std::size_t k = 0; k <= q; ++k) {
                const double want = k < 32 ? bias.at(k, seq.generation_index(q)) : 0.0;
                EXPECT_NEAR(a.scores->at(l, h, q, k) - b.scores->at(l, h, q, k), want, 1e-12);
            }
}

TEST(PlantedDecoder, ValidatesShapes) {
    const World world = default_world();
    ModelConfig m = world.model_config;
    m.model_dim = 4;
    m.num_heads = 1;
    EXPECT_THROW(build_planted_decoder(m, world.config, world.vocab), DomainError);
    m = world.model_config;
    m.image_slots = 16;
    EXPECT_THROW(build_planted_decoder(m, world.config, world.vocab), DomainError);
}

TEST(PlantedWorld, ImageMassDecaysOverForcedSteps) {
    const World world = default_world();
    WorldConfig flat_cfg;
    flat_cfg.decay = 0.0;
    const World flat = World::build(flat_cfg, World::default_model_config(flat_cfg));
    const Scene scene = world.scene(0);

    // Separators only: the raw mass falls every step.
    auto seps = world.prompt(scene);
    double prev = 2.0;
    for (std::size_t t = 0; t < 32; ++t) {
        const double m = last_row_image_mass(forward_full(*world.decoder, seps).attn, 1, 32);
        EXPECT_LT(m, prev) << "step " << t;
        prev = m;
        seps.append_generated(world.vocab.sep());
    }

    // Mixed content: object tokens move the raw mass around, but relative to
    // the same sequence without decay it still falls every step.
    auto mixed = world.prompt(scene);
    double prev_ratio = 2.0;
    for (std::size_t t = 0; t < 32; ++t) {
        const double m = last_row_image_mass(forward_full(*world.decoder, mixed).attn, 1, 32);
        const double m0 = last_row_image_mass(forward_full(*flat.decoder, mixed).attn, 1, 32);
        if (t == 0) {
            EXPECT_DOUBLE_EQ(m, m0);
        }
        EXPECT_LT(m / m0, prev_ratio) << "step " << t;
        prev_ratio = m / m0;
        mixed.append_generated(t % 2 == 0 ? scene.present[(t / 2) % 5] : world.vocab.sep());
    }
}

TEST(PlantedWorld, SinksConcentrateAttention) {
    RunConfig cfg;
    cfg.seed_count = 10;
    cfg.relevancy = false;
    EXPECT_GT(baseline_report(cfg).telemetry.concentration_top_decile, 0.5);
    cfg.world.sink_strength = 0.0;
    cfg.world.decay = 0.0;
    EXPECT_LT(baseline_report(cfg).telemetry.concentration_top_decile, 0.2);
}

TEST(PlantedWorld, NullWorldDoesNotHallucinate) {
    RunConfig cfg;
    cfg.relevancy = false;
    cfg.world.sink_strength = 0.0;
    cfg.world.decay = 0.0;
    cfg.world.prior_weight = 0.0;
    const auto r = baseline_report(cfg);
    EXPECT_EQ(r.chair_i, 0.0);
    EXPECT_EQ(r.hal, 0.0);
}

TEST(PlantedWorld, ImageDominatedOutputEnumeratesPresentObjects) {
    RunConfig cfg;
    cfg.relevancy = false;
    cfg.seed_count = 20;
    cfg.world.sink_strength = 0.0;
    cfg.world.decay = 0.0;
    cfg.world.planted.query_score = -20.0;
    cfg.vtc_enabled = false;
    cfg.aar_enabled = false;
    const World world = build_world(cfg);
    for (const auto& run : run_suite(world, cfg, nullptr).runs) {
        std::set<TokenId> seen;
        for (const auto& s : run.steps) {
            if (!world.vocab.is_object(s.token)) continue;
            EXPECT_TRUE(std::binary_search(run.present.begin(), run.present.end(), s.token));
            EXPECT_TRUE(seen.insert(s.token).second);
        }
        EXPECT_EQ(run.steps.back().token, world.vocab.eos());
    }
}

TEST(PlantedWorld, HallucinationGrowsWithDecay) {
    RunConfig cfg;
    cfg.relevancy = false;
    double prev = -1.0;
    for (double decay : {0.0, 0.05, 0.1, 0.2}) {
        cfg.world.decay = decay;
        const double c = baseline_report(cfg).chair_i;
        EXPECT_GT(c, prev) << "decay " << decay;
        prev = c;
    }
}
