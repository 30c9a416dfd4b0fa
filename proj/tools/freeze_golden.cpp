// Oracle run that freezes the golden files under tests/golden/.
//
//   freeze_golden <frozen_suite.json> <golden_dir>
//
// Rerun only when a change to the planted world or the interventions is
// intended; the golden test then pins the new values exactly.

#include <cstdio>
#include <exception>
#include <string>

#include "caac/experiment.hpp"
#include "caac/io.hpp"

using namespace caac;

namespace {

Json cell_json(const MetricReport& r, const SuiteResult& suite) {
    Json per_seed = Json::array();
    Json triggers = Json::array();
    for (std::size_t i = 0; i < suite.runs.size(); ++i) {
        const auto& run = suite.runs[i];
        Json steps = Json::array();
        for (std::size_t t = 0; t < run.steps.size(); ++t)
            if (run.steps[t].triggered) steps.push_back(t);
        per_seed.push_back({{"seed", run.seed}, {"chair_i", r.per_seed[i].chair_i}, {"tokens", run.tokens()}});
        triggers.push_back(steps);
    }
    const Telemetry& t = r.telemetry;
    return Json{{"chair_i", r.chair_i},
                {"chair_s", r.chair_s},
                {"amber_chair", r.amber_chair},
                {"hal", r.hal},
                {"cover", r.cover},
                {"trigger_rate", t.trigger_rate},
                {"concentration_top_decile", t.concentration_top_decile},
                {"decay_correlation", optional_json(t.decay_correlation)},
                {"confidence_truthful", optional_json(t.confidence_truthful)},
                {"confidence_hallucinatory", optional_json(t.confidence_hallucinatory)},
                {"confidence_gap", optional_json(t.confidence_gap)},
                {"trigger_steps", triggers},
                {"per_seed", per_seed}};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 3) {
        std::fprintf(stderr, "usage: %s <frozen_suite.json> <golden_dir>\n", argv[0]);
        return 2;
    }
    try {
        const RunConfig cfg = load_run_config(argv[1]);
        const std::string dir = argv[2];
        const World world = build_world(cfg);

        std::vector<Scene> scenes;
        for (std::size_t i = 0; i < cfg.seed_count; ++i) scenes.push_back(world.scene(cfg.seed_start + i));
        write_text(dir + "/scene_fingerprint.txt", scene_fingerprint(scenes) + "\n");

        const CalibrationResult cal = calibrate(world, cfg);
        Json doc;
        doc["config"] = to_json(cfg);
        for (const auto& [cell, suite] : run_ablation(world, cfg, cal.set))
            doc["cells"][to_string(cell)] = cell_json(compute_report(suite.runs, world.vocab), suite);
        write_text(dir + "/ablation.json", doc.dump(1) + "\n");
        std::printf("wrote %s/scene_fingerprint.txt and %s/ablation.json\n", dir.c_str(), dir.c_str());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "freeze_golden: %s\n", e.what());
        return 1;
    }
    return 0;
}
