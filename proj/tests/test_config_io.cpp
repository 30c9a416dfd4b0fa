#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "caac/experiment.hpp"
#include "caac/io.hpp"

using namespace caac;
namespace fs = std::filesystem;

namespace {

std::string config_error_path(const Json& j) {
    try {
        parse_run_config(j);
    } catch (const ConfigError& e) {
        return e.path();
    }
    return "<no error>";
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "caac_config_io_tests";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
    const RunConfig c = parse_run_config(Json::object());
    EXPECT_EQ(c.beta, 0.5);
    EXPECT_EQ(c.aar.p_thr, 0.25);
    EXPECT_EQ(c.aar.lambda_max, 1.5);
    EXPECT_EQ(c.seed_count, 50u);
    EXPECT_EQ(c.max_new_tokens, 32u);
    EXPECT_EQ(c.world.decay, 0.1);
    EXPECT_EQ(c.world.sink_strength, 4.0);
    EXPECT_EQ(c.normalization, Normalization::PaperLiteral);
    EXPECT_EQ(c.effective_vtc_layers(), (LayerRange{0, 1}));
    EXPECT_TRUE(c.row_renorm);
}

TEST(Config, FieldPathsInErrors) {
    EXPECT_EQ(config_error_path(Json{{"vtc", {{"beta", 1.5}}}}), "vtc.beta");
    EXPECT_EQ(config_error_path(Json{{"aar", {{"p_thr", -0.1}}}}), "aar.p_thr");
    EXPECT_EQ(config_error_path(Json{{"aar", {{"lambda_max", 0.5}}}}), "aar.lambda_max");
    EXPECT_EQ(config_error_path(Json{{"world", {{"decay", -1.0}}}}), "world.decay");
    EXPECT_EQ(config_error_path(Json{{"world", {{"planted", {{"visual_gain", "x"}}}}}}), "world.planted.visual_gain");
    EXPECT_EQ(config_error_path(Json{{"vtc", {{"normalization", "fancy"}}}}), "vtc.normalization");
    EXPECT_EQ(config_error_path(Json{{"vtc", {{"layer_range", {0, 9}}}}}), "vtc.layer_range");
    EXPECT_EQ(config_error_path(Json{{"model", {{"num_heads", 3}}}}), "model.model_dim");
    EXPECT_EQ(config_error_path(Json{{"generation", {{"max_new_tokens", 0}}}}), "generation.max_new_tokens");
}

TEST(Config, RejectsUnknownKeys) {
    EXPECT_EQ(config_error_path(Json{{"bogus", 1}}), "bogus");
    EXPECT_EQ(config_error_path(Json{{"vtc", {{"betta", 0.5}}}}), "vtc.betta");
}

TEST(Config, RoundTripsThroughJson) {
    RunConfig c;
    c.beta = 0.3;
    c.aar.p_thr = 0.4;
    c.world.planted.visual_gain = 100.0;
    c.normalization = Normalization::SumPreserving;
    c.reference_kind = ImageKind::Noise;
    c.reference_noise_seed = 9;
    c.seed_start = 7;
    const RunConfig back = parse_run_config(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(back.world.planted.visual_gain, 100.0);
    EXPECT_EQ(back.reference_kind, ImageKind::Noise);
}

TEST(Config, ShippedConfigsParse) {
    for (const char* name : {"default.json", "frozen_suite.json"}) {
        const fs::path p = fs::path(__FILE__).parent_path().parent_path() / "configs" / name;
        EXPECT_NO_THROW(load_run_config(p.string())) << name;
    }
    EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
    const auto bad = scratch("malformed.json");
    write_text(bad.string(), "{ not json");
    EXPECT_THROW(load_run_config(bad.string()), ConfigError);
}

TEST(CalibrationFile, RoundTripAndFingerprint) {
    RunConfig cfg;
    const World world = build_world(cfg);
    const CalibrationSet set = calibrate(world, cfg).set;
    const auto path = scratch("calibration.json").string();
    save_calibration(set, path);
    const std::string fp = model_fingerprint(world.model_config, world.config);
    const CalibrationSet back = load_calibration(path, world.model_config, fp);
    ASSERT_EQ(back.vectors.size(), set.vectors.size());
    EXPECT_EQ(back.vectors.size(), world.model_config.num_layers * world.model_config.num_heads);
    for (std::size_t i = 0; i < set.vectors.size(); ++i) {
        EXPECT_EQ(back.vectors[i].entries, set.vectors[i].entries);
        EXPECT_EQ(back.vectors[i].mode, set.vectors[i].mode);
    }
    EXPECT_EQ(back.layer_range, set.layer_range);
    EXPECT_EQ(back.reference.query_ids, set.reference.query_ids);

    RunConfig other = cfg;
    other.world.sink_strength = 2.0;
    const World w2 = build_world(other);
    EXPECT_THROW(load_calibration(path, w2.model_config, model_fingerprint(w2.model_config, w2.config)), ConfigError);
    EXPECT_THROW(load_calibration(scratch("missing.json").string(), world.model_config, fp), MissingArtifactError);
}

TEST(Fingerprint, SensitiveToPlantedParams) {
    RunConfig a, b;
    b.world.planted.object_bias = -1.0;
    EXPECT_NE(model_fingerprint(a.model, a.world), model_fingerprint(b.model, b.world));
    EXPECT_EQ(model_fingerprint(a.model, a.world), model_fingerprint(a.model, a.world));
}

TEST(Traces, JsonlRoundTrip) {
    RunConfig cfg;
    cfg.seed_count = 3;
    cfg.vtc_enabled = false;
    const World world = build_world(cfg);
    const auto suite = run_suite(world, cfg, nullptr);
    const std::string text = traces_to_jsonl(suite.runs);
    std::map<std::uint64_t, std::vector<TokenId>> present;
    for (const auto& s : suite.scenes) present[s.seed] = s.present;
    const auto back = traces_from_jsonl(text, present);
    ASSERT_EQ(back.size(), suite.runs.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].seed, suite.runs[i].seed);
        EXPECT_EQ(back[i].present, suite.runs[i].present);
        EXPECT_EQ(back[i].steps, suite.runs[i].steps);
    }
    EXPECT_EQ(traces_to_jsonl(back), text);
    EXPECT_THROW(traces_from_jsonl("{\"seed\": 1}\n", present), ConfigError);
}

TEST(Scenes, FingerprintStable) {
    RunConfig cfg;
    const World world = build_world(cfg);
    std::vector<Scene> a, b;
    for (std::uint64_t s = 0; s < 5; ++s) {
        a.push_back(world.scene(s));
        b.push_back(scene_from_json(to_json(world.scene(s))));
    }
    EXPECT_EQ(scene_fingerprint(a), scene_fingerprint(b));
    EXPECT_EQ(scene_fingerprint(a).size(), 16u);
    b.pop_back();
    EXPECT_NE(scene_fingerprint(a), scene_fingerprint(b));
}

TEST(Report, CsvHasOneLinePerSeed) {
    RunConfig cfg;
    cfg.seed_count = 4;
    cfg.vtc_enabled = false;
    cfg.relevancy = false;
    const World world = build_world(cfg);
    const auto r = compute_report(run_suite(world, cfg, nullptr).runs, world.vocab);
    const std::string csv = report_csv(r);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    const Json j = to_json(r);
    EXPECT_EQ(j.at("per_seed").size(), 4u);
    EXPECT_TRUE(j.at("decay_correlation").is_null());
}
