#include <gtest/gtest.h>

#include <vector>

#include "caac/experiment.hpp"

using namespace caac;

namespace {

const ObjectVocabulary& vocab() {
    static const ObjectVocabulary v = ObjectVocabulary::build(8, 0.5, 0);
    return v;
}

StepRecord step(TokenId tok, double p_t = 0.5, bool triggered = false) {
    StepRecord s;
    s.token = tok;
    s.p_t = p_t;
    s.triggered = triggered;
    return s;
}

}  // namespace

TEST(Chair, InstanceLevel) {
    const ObjectSet present{1, 2, 3};
    EXPECT_EQ(chair_i(std::vector<TokenId>{1, 2}, present), 0.0);
    EXPECT_NEAR(chair_i(std::vector<TokenId>{1, 5}, present), 0.5, 1e-15);
    EXPECT_EQ(chair_i(std::vector<TokenId>{6, 7}, present), 1.0);
    EXPECT_EQ(chair_i(std::vector<TokenId>{}, present), 0.0);
    // repeated mentions count once
    EXPECT_NEAR(chair_i(std::vector<TokenId>{5, 5, 5, 1}, present), 0.5, 1e-15);
}

TEST(Chair, SentenceLevel) {
    const ObjectSet present{1, 2};
    const std::vector<std::vector<TokenId>> sentences{{1}, {2}, {5}, {1, 6}, {2, 1}};
    EXPECT_NEAR(chair_s(sentences, present), 0.4, 1e-15);
    EXPECT_EQ(chair_s({}, present), 0.0);
}

TEST(Sentences, SplitOnSeparators) {
    const auto& v = vocab();
    const std::vector<TokenId> toks{1, v.sep(), 2, 3, v.sep(), v.sep(), 4, v.eos()};
    EXPECT_EQ(split_sentences(toks, v), (std::vector<std::vector<TokenId>>{{1}, {2, 3}, {4}}));
    EXPECT_EQ(object_mentions(toks, v), (std::vector<TokenId>{1, 2, 3, 4}));
}

TEST(Amber, Examples) {
    const auto clean = amber_triplet({{1, 2}}, {ObjectSet{1, 2}});
    EXPECT_EQ(clean.chair, 0.0);
    EXPECT_EQ(clean.hal, 0.0);
    EXPECT_EQ(clean.cover, 1.0);
    const auto bad = amber_triplet({{5}}, {ObjectSet{1, 2}});
    EXPECT_EQ(bad.chair, 1.0);
    EXPECT_EQ(bad.hal, 1.0);
    EXPECT_EQ(bad.cover, 0.0);
    const auto mixed = amber_triplet({{1, 5}, {2}}, {ObjectSet{1, 2}, ObjectSet{2, 3}});
    EXPECT_NEAR(mixed.chair, 0.25, 1e-15);
    EXPECT_NEAR(mixed.hal, 0.5, 1e-15);
    EXPECT_NEAR(mixed.cover, 0.5, 1e-15);
    EXPECT_THROW(amber_triplet({}, {}), DomainError);
    EXPECT_THROW(amber_triplet({{1}}, {}), DomainError);
}

TEST(Telemetry, RatesAndConfidenceSplit) {
    const auto& v = vocab();
    SceneRun a;
    a.present = {1, 2};
    a.steps = {step(1, 0.9), step(v.sep(), 0.99), step(5, 0.2, true), step(v.eos(), 0.7)};
    const auto t = telemetry({a}, v);
    EXPECT_EQ(t.steps, 4u);
    EXPECT_EQ(t.triggered, 1u);
    EXPECT_NEAR(t.trigger_rate, 0.25, 1e-15);
    EXPECT_NEAR(*t.confidence_truthful, 0.9, 1e-15);
    EXPECT_NEAR(*t.confidence_hallucinatory, 0.2, 1e-15);
    EXPECT_NEAR(*t.confidence_gap, 0.7, 1e-15);
    EXPECT_FALSE(t.decay_correlation.has_value());
    EXPECT_THROW(telemetry({}, v), DomainError);
    EXPECT_THROW(telemetry({SceneRun{}}, v), DomainError);
}

TEST(Telemetry, DecayNeedsRelevancyOnEveryStep) {
    const auto& v = vocab();
    SceneRun a;
    a.present = {1};
    for (double r : {0.9, 0.7, 0.4}) {
        auto s = step(v.sep());
        s.r_rel = r;
        a.steps.push_back(s);
    }
    EXPECT_NEAR(*telemetry({a}, v).decay_correlation, -1.0, 1e-15);
    a.steps.push_back(step(v.eos()));
    EXPECT_FALSE(telemetry({a}, v).decay_correlation.has_value());
}

TEST(Report, PerSeedAndSuiteAgree) {
    const auto& v = vocab();
    SceneRun a, b;
    a.seed = 3;
    a.present = {1, 2};
    a.steps = {step(1), step(v.sep()), step(6), step(v.eos())};
    b.seed = 4;
    b.present = {3};
    b.steps = {step(3), step(v.eos())};
    const auto r = compute_report({a, b}, v);
    ASSERT_EQ(r.per_seed.size(), 2u);
    EXPECT_NEAR(r.per_seed[0].chair_i, 0.5, 1e-15);
    EXPECT_NEAR(r.per_seed[0].chair_s, 0.5, 1e-15);
    EXPECT_NEAR(r.per_seed[0].cover, 0.5, 1e-15);
    EXPECT_TRUE(r.per_seed[0].hallucinated);
    EXPECT_NEAR(r.chair_i, 0.25, 1e-15);
    EXPECT_NEAR(r.amber_chair, r.chair_i, 1e-15);
    EXPECT_NEAR(r.hal, 0.5, 1e-15);
    EXPECT_NEAR(r.cover, 0.75, 1e-15);
    EXPECT_THROW(compute_report({}, v), DomainError);
}

TEST(Report, DeterministicAcrossThreadCounts) {
    RunConfig cfg;
    cfg.seed_count = 8;
    cfg.vtc_enabled = false;
    const World world = build_world(cfg);
    cfg.threads = 1;
    const auto one = run_suite(world, cfg, nullptr);
    cfg.threads = 4;
    const auto four = run_suite(world, cfg, nullptr);
    ASSERT_EQ(one.runs.size(), four.runs.size());
    for (std::size_t i = 0; i < one.runs.size(); ++i) {
        EXPECT_EQ(one.runs[i].seed, four.runs[i].seed);
        EXPECT_EQ(one.runs[i].steps, four.runs[i].steps);
    }
    EXPECT_EQ(one.concentration_curve, four.concentration_curve);
}

TEST(Report, AarDisabledMeansNoTriggers) {
    RunConfig cfg;
    cfg.seed_count = 5;
    cfg.relevancy = false;
    cfg.vtc_enabled = false;
    cfg.aar_enabled = false;
    const World world = build_world(cfg);
    EXPECT_EQ(compute_report(run_suite(world, cfg, nullptr).runs, world.vocab).telemetry.trigger_rate, 0.0);
}

TEST(Report, ThresholdOneTriggersBelowCertainty) {
    RunConfig cfg;
    cfg.seed_count = 5;
    cfg.relevancy = false;
    cfg.vtc_enabled = false;
    cfg.aar.p_thr = 1.0;
    const World world = build_world(cfg);
    const auto suite = run_suite(world, cfg, nullptr);
    std::size_t below = 0, total = 0;
    for (const auto& run : suite.runs)
        for (const auto& s : run.steps) {
            ++total;
            if (s.p_t < 1.0) ++below;
        }
    EXPECT_NEAR(compute_report(suite.runs, world.vocab).telemetry.trigger_rate,
                static_cast<double>(below) / static_cast<double>(total), 1e-15);
}
