#pragma once

// On-disk formats: calibration JSON, trace JSONL, report JSON/CSV, scene JSON.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "caac/errors.hpp"
#include "caac/generation.hpp"
#include "caac/metrics.hpp"
#include "caac/run_config.hpp"
#include "caac/vtc.hpp"
#include "caac/world.hpp"

namespace caac {

// ---- calibration ----------------------------------------------------------

inline Json to_json(const CalibrationSet& set) {
    Json vectors = Json::array();
    for (std::size_t l = 0; l < set.layers; ++l)
        for (std::size_t h = 0; h < set.heads; ++h) {
            const auto& v = set.at(l, h);
            vectors.push_back({{"layer", l}, {"head", h}, {"mode", to_string(v.mode)}, {"entries", v.entries}});
        }
    return Json{{"model_fingerprint", set.model_fingerprint},
                {"reference",
                 {{"image_kind", to_string(set.reference.image_kind)},
                  {"noise_seed", set.reference.noise_seed},
                  {"query_ids", set.reference.query_ids},
                  {"window", set.reference.window}}},
                {"beta", set.beta},
                {"layer_range", {set.layer_range.begin, set.layer_range.end}},
                {"vectors", vectors}};
}

/// Parse a calibration document and check it was built for `model`.
inline CalibrationSet calibration_from_json(const Json& j, const ModelConfig& model, const std::string& fingerprint) {
    try {
        CalibrationSet set;
        set.model_fingerprint = j.at("model_fingerprint").get<std::string>();
        if (set.model_fingerprint != fingerprint)
            throw ConfigError("model_fingerprint", "calibration was built for model " + set.model_fingerprint +
                                                       ", active model is " + fingerprint);
        const Json& r = j.at("reference");
        set.reference.image_kind = parse_image_kind(r.at("image_kind").get<std::string>(), "reference.image_kind");
        set.reference.noise_seed = r.at("noise_seed").get<std::uint64_t>();
        set.reference.query_ids = r.at("query_ids").get<std::vector<TokenId>>();
        set.reference.window = r.at("window").get<std::size_t>();
        set.beta = j.at("beta").get<double>();
        set.layer_range = {j.at("layer_range").at(0).get<std::size_t>(), j.at("layer_range").at(1).get<std::size_t>()};
        set.layers = model.num_layers;
        set.heads = model.num_heads;
        set.vectors.resize(set.layers * set.heads);
        std::vector<bool> seen(set.vectors.size(), false);
        for (const Json& v : j.at("vectors")) {
            const auto l = v.at("layer").get<std::size_t>(), h = v.at("head").get<std::size_t>();
            if (l >= set.layers || h >= set.heads) throw ConfigError("vectors", "(layer, head) outside the model");
            CalibrationVector cv;
            cv.mode = parse_normalization(v.at("mode").get<std::string>(), "vectors.mode");
            cv.entries = v.at("entries").get<std::vector<double>>();
            if (cv.entries.size() != model.image_slots)
                throw ConfigError("vectors.entries", "expected " + std::to_string(model.image_slots) + " entries");
            set.vectors[l * set.heads + h] = std::move(cv);
            seen[l * set.heads + h] = true;
        }
        for (bool s : seen)
            if (!s) throw ConfigError("vectors", "missing a (layer, head) vector");
        set.validate();
        return set;
    } catch (const Json::exception& e) {
        throw ConfigError("calibration", e.what());
    } catch (const DomainError& e) {
        throw ConfigError("calibration", e.what());
    }
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MissingArtifactError("cannot write " + path);
    out << text;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void save_calibration(const CalibrationSet& set, const std::string& path) {
    write_text(path, to_json(set).dump(2) + "\n");
}

inline CalibrationSet load_calibration(const std::string& path, const ModelConfig& model,
                                       const std::string& fingerprint) {
    const std::string text = read_text(path);
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw ConfigError("calibration", std::string("malformed JSON: ") + e.what());
    }
    return calibration_from_json(j, model, fingerprint);
}

// ---- traces -----------------------------------------------------------------

inline Json step_to_json(std::uint64_t seed, std::size_t step, const StepRecord& s) {
    Json j{{"seed", seed},
           {"step", step},
           {"token", s.token},
           {"p_t", s.p_t},
           {"triggered", s.triggered},
           {"lambda", s.lambda_t},
           {"image_mass_pass1", s.image_mass_pass1},
           {"image_mass_final", s.image_mass_final},
           {"pass2", s.pass2_executed},
           {"top_decile", s.top_decile}};
    j["r_rel"] = s.r_rel ? Json(*s.r_rel) : Json(nullptr);
    return j;
}

/// One JSON object per line, one line per step, runs in the given order.
inline std::string traces_to_jsonl(const std::vector<SceneRun>& runs) {
    std::string out;
    for (const auto& run : runs)
        for (std::size_t t = 0; t < run.steps.size(); ++t) {
            out += step_to_json(run.seed, t, run.steps[t]).dump();
            out += '\n';
        }
    return out;
}

/// Inverse of traces_to_jsonl. `present` supplies ground truth per seed.
inline std::vector<SceneRun> traces_from_jsonl(const std::string& text,
                                               const std::map<std::uint64_t, std::vector<TokenId>>& present) {
    std::vector<SceneRun> runs;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const Json j = Json::parse(line);
            const auto seed = j.at("seed").get<std::uint64_t>();
            const auto step = j.at("step").get<std::size_t>();
            if (runs.empty() || runs.back().seed != seed || step == 0) {
                SceneRun r;
                r.seed = seed;
                if (auto it = present.find(seed); it != present.end()) r.present = it->second;
                runs.push_back(std::move(r));
            }
            if (runs.back().steps.size() != step)
                throw ConfigError("traces", "line " + std::to_string(lineno) + ": steps out of order");
            StepRecord s;
            s.token = j.at("token").get<TokenId>();
            s.p_t = j.at("p_t").get<double>();
            s.triggered = j.at("triggered").get<bool>();
            s.lambda_t = j.at("lambda").get<double>();
            s.image_mass_pass1 = j.at("image_mass_pass1").get<double>();
            s.image_mass_final = j.at("image_mass_final").get<double>();
            s.pass2_executed = j.at("pass2").get<bool>();
            s.top_decile = j.at("top_decile").get<double>();
            if (!j.at("r_rel").is_null()) s.r_rel = j.at("r_rel").get<double>();
            runs.back().steps.push_back(s);
        } catch (const Json::exception& e) {
            throw ConfigError("traces", "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return runs;
}

// ---- scenes -----------------------------------------------------------------

inline Json to_json(const Scene& s) { return Json{{"seed", s.seed}, {"present", s.present}, {"layout", s.layout}}; }

inline Scene scene_from_json(const Json& j) {
    Scene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.present = j.at("present").get<std::vector<TokenId>>();
    s.layout = j.at("layout").get<std::vector<TokenId>>();
    return s;
}

/// FNV-1a over the compact JSON of each scene, as 16 hex digits.
inline std::string scene_fingerprint(const std::vector<Scene>& scenes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : scenes) h = fnv1a(to_json(s).dump(), h);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- reports ----------------------------------------------------------------

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json to_json(const MetricReport& r) {
    Json seeds = Json::array();
    for (const auto& s : r.per_seed)
        seeds.push_back({{"seed", s.seed},
                         {"chair_i", s.chair_i},
                         {"chair_s", s.chair_s},
                         {"cover", s.cover},
                         {"hallucinated", s.hallucinated},
                         {"steps", s.steps},
                         {"triggered", s.triggered}});
    const Telemetry& t = r.telemetry;
    return Json{{"chair_i", r.chair_i},
                {"chair_s", r.chair_s},
                {"amber_chair", r.amber_chair},
                {"hal", r.hal},
                {"cover", r.cover},
                {"trigger_rate", t.trigger_rate},
                {"decay_correlation", optional_json(t.decay_correlation)},
                {"concentration_top_decile", t.concentration_top_decile},
                {"confidence_truthful", optional_json(t.confidence_truthful)},
                {"confidence_hallucinatory", optional_json(t.confidence_hallucinatory)},
                {"confidence_gap", optional_json(t.confidence_gap)},
                {"steps", t.steps},
                {"triggered_steps", t.triggered},
                {"per_seed", seeds}};
}

/// Flat CSV of the per-seed breakdown.
inline std::string report_csv(const MetricReport& r) {
    std::string out = "seed,chair_i,chair_s,cover,hallucinated,steps,triggered\n";
    char buf[256];
    for (const auto& s : r.per_seed) {
        std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%d,%zu,%zu\n", static_cast<unsigned long long>(s.seed),
                      s.chair_i, s.chair_s, s.cover, s.hallucinated ? 1 : 0, s.steps, s.triggered);
        out += buf;
    }
    return out;
}

}  // namespace caac
