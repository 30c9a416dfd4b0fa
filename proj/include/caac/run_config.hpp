#pragma once

// Run configuration: a JSON document, validated before any run. Unknown keys
// are rejected; missing keys take the defaults below.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>

#include "json.hpp"

#include "caac/aar.hpp"
#include "caac/decoder.hpp"
#include "caac/errors.hpp"
#include "caac/vtc.hpp"
#include "caac/world.hpp"

namespace caac {

using Json = nlohmann::json;

struct RunConfig {
    ModelConfig model = World::default_model_config(WorldConfig{});
    WorldConfig world;

    ImageKind reference_kind = ImageKind::Black;
    std::uint64_t reference_noise_seed = 0;
    std::size_t reference_window = 1;

    bool vtc_enabled = true;
    double beta = 0.5;
    std::optional<LayerRange> vtc_layers;  // default: first ceil(10/32 L) layers
    Normalization normalization = Normalization::PaperLiteral;

    bool aar_enabled = true;
    AarConfig aar;

    std::size_t max_new_tokens = 32;
    bool row_renorm = true;
    bool relevancy = true;
    std::uint64_t seed_start = 0;
    std::size_t seed_count = 50;
    std::size_t threads = 0;  // 0 = hardware concurrency
    std::string output_dir = "caac_out";
    std::string calibration_path;  // default: <output_dir>/calibration.json

    LayerRange effective_vtc_layers() const { return vtc_layers.value_or(default_vtc_layers(model.num_layers)); }
    std::string effective_calibration_path() const {
        return calibration_path.empty() ? output_dir + "/calibration.json" : calibration_path;
    }
};

inline const char* to_string(ImageKind k) {
    switch (k) {
        case ImageKind::Black: return "black";
        case ImageKind::Noise: return "noise";
        case ImageKind::Uniform: return "uniform";
    }
    return "?";
}

inline const char* to_string(Normalization n) {
    return n == Normalization::PaperLiteral ? "paper_literal" : "sum_preserving";
}

inline ImageKind parse_image_kind(const std::string& s, const std::string& path) {
    if (s == "black") return ImageKind::Black;
    if (s == "noise") return ImageKind::Noise;
    if (s == "uniform") return ImageKind::Uniform;
    throw ConfigError(path, "expected one of black, noise, uniform; got '" + s + "'");
}

inline Normalization parse_normalization(const std::string& s, const std::string& path) {
    if (s == "paper_literal") return Normalization::PaperLiteral;
    if (s == "sum_preserving") return Normalization::SumPreserving;
    throw ConfigError(path, "expected paper_literal or sum_preserving; got '" + s + "'");
}

namespace detail {

inline void check_keys(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError(path, "expected an object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(path.empty() ? key : path + "." + key, "unknown key");
    }
}

inline std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

template <class T>
void read(const Json& obj, const std::string& path, const char* key, T& out) {
    if (!obj.contains(key)) return;
    const Json& v = obj.at(key);
    const std::string p = join(path, key);
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(p, "expected a boolean");
            out = v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
                throw ConfigError(p, "expected a nonnegative integer");
            out = v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(p, "expected a number");
            out = v.get<T>();
        } else {
            if (!v.is_string()) throw ConfigError(p, "expected a string");
            out = v.get<T>();
        }
    } catch (const Json::exception& e) {
        throw ConfigError(p, e.what());
    }
}

inline LayerRange read_range(const Json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_unsigned() || !v[1].is_number_unsigned())
        throw ConfigError(path, "expected [begin, end] with nonnegative integers");
    return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

}  // namespace detail

/// Field-level validation; the first failure is reported with its field path.
inline void validate(const RunConfig& c) {
    auto check = [](bool ok, const char* path, const char* what) {
        if (!ok) throw ConfigError(path, what);
    };
    check(c.model.num_layers >= 1, "model.num_layers", "must be >= 1");
    check(c.model.num_heads >= 1, "model.num_heads", "must be >= 1");
    check(c.model.model_dim % c.model.num_heads == 0, "model.model_dim", "must be divisible by model.num_heads");
    check(c.model.model_dim >= 8, "model.model_dim", "must be >= 8");
    check(c.model.model_dim / c.model.num_heads >= 2, "model.model_dim", "head dimension must be >= 2");
    check(c.world.image_slots >= 1, "world.image_slots", "must be >= 1");
    check(c.model.max_seq_len > c.world.image_slots + 4 + c.max_new_tokens, "model.max_seq_len",
          "must exceed image_slots + query length + max_new_tokens");
    check(c.world.num_objects >= 2, "world.num_objects", "must be >= 2");
    check(c.world.objects_per_scene >= 1 && c.world.objects_per_scene <= std::min(c.world.num_objects, c.world.image_slots),
          "world.objects_per_scene", "must lie in [1, min(num_objects, image_slots)]");
    check(c.world.max_slots_per_object >= 1, "world.max_slots_per_object", "must be >= 1");
    check(c.world.sink_strength >= 0.0, "world.sink_strength", "must be >= 0");
    check(c.world.sink_fraction >= 0.0 && c.world.sink_fraction <= 1.0, "world.sink_fraction", "must lie in [0, 1]");
    check(c.world.decay >= 0.0, "world.decay", "must be >= 0");
    check(c.world.prior_weight >= 0.0 && c.world.prior_weight <= 1.0, "world.prior_weight", "must lie in [0, 1]");
    check(c.world.prior_peak >= 0.0 && c.world.prior_peak <= 1.0, "world.prior_peak", "must lie in [0, 1]");
    check(c.reference_window >= 1 && c.reference_window <= 4, "reference.window", "must lie in [1, query length 4]");
    check(c.beta >= 0.0 && c.beta <= 1.0, "vtc.beta", "must lie in [0, 1]");
    if (c.vtc_layers)
        check(c.vtc_layers->begin <= c.vtc_layers->end && c.vtc_layers->end <= c.model.num_layers, "vtc.layer_range",
              "must satisfy begin <= end <= num_layers");
    check(c.aar.p_thr >= 0.0 && c.aar.p_thr <= 1.0, "aar.p_thr", "must lie in [0, 1]");
    check(c.aar.lambda_min >= 1.0, "aar.lambda_min", "must be >= 1");
    check(c.aar.lambda_max >= c.aar.lambda_min, "aar.lambda_max", "must be >= aar.lambda_min");
    check(c.aar.layer_range.begin <= c.aar.layer_range.end && c.aar.layer_range.end <= c.model.num_layers,
          "aar.layer_range", "must satisfy begin <= end <= num_layers");
    check(c.max_new_tokens >= 1, "generation.max_new_tokens", "must be >= 1");
    check(c.seed_count >= 1, "seeds.count", "must be >= 1");
}

inline RunConfig parse_run_config(const Json& j) {
    using detail::check_keys;
    using detail::read;
    RunConfig c;
    check_keys(j, "", {"model", "world", "reference", "vtc", "aar", "generation", "seeds", "row_renorm", "relevancy",
                       "threads", "output_dir", "calibration_path"});
    if (j.contains("model")) {
        const Json& m = j["model"];
        check_keys(m, "model", {"num_layers", "num_heads", "model_dim", "max_seq_len", "seed"});
        read(m, "model", "num_layers", c.model.num_layers);
        read(m, "model", "num_heads", c.model.num_heads);
        read(m, "model", "model_dim", c.model.model_dim);
        read(m, "model", "max_seq_len", c.model.max_seq_len);
        read(m, "model", "seed", c.model.seed);
    }
    if (j.contains("world")) {
        const Json& w = j["world"];
        check_keys(w, "world", {"num_objects", "objects_per_scene", "image_slots", "max_slots_per_object",
                                "sink_strength", "sink_fraction", "decay", "prior_weight", "prior_peak", "planted"});
        read(w, "world", "num_objects", c.world.num_objects);
        read(w, "world", "objects_per_scene", c.world.objects_per_scene);
        read(w, "world", "image_slots", c.world.image_slots);
        read(w, "world", "max_slots_per_object", c.world.max_slots_per_object);
        read(w, "world", "sink_strength", c.world.sink_strength);
        read(w, "world", "sink_fraction", c.world.sink_fraction);
        read(w, "world", "decay", c.world.decay);
        read(w, "world", "prior_weight", c.world.prior_weight);
        read(w, "world", "prior_peak", c.world.prior_peak);
        if (w.contains("planted")) {
            const Json& p = w["planted"];
            const std::string pp = "world.planted";
            PlantedParams& t = c.world.planted;
            check_keys(p, pp, {"image_score", "salience", "query_score", "generated_score", "score_noise",
                               "position_scale", "residual_scale", "object_bias", "visual_gain", "prior_gain", "eos_base",
                               "eos_growth", "sep_logit", "mask_logit"});
            read(p, pp, "image_score", t.image_score);
            read(p, pp, "salience", t.salience);
            read(p, pp, "query_score", t.query_score);
            read(p, pp, "generated_score", t.generated_score);
            read(p, pp, "score_noise", t.score_noise);
            read(p, pp, "position_scale", t.position_scale);
            read(p, pp, "residual_scale", t.residual_scale);
            read(p, pp, "object_bias", t.object_bias);
            read(p, pp, "visual_gain", t.visual_gain);
            read(p, pp, "prior_gain", t.prior_gain);
            read(p, pp, "eos_base", t.eos_base);
            read(p, pp, "eos_growth", t.eos_growth);
            read(p, pp, "sep_logit", t.sep_logit);
            read(p, pp, "mask_logit", t.mask_logit);
        }
    }
    if (j.contains("reference")) {
        const Json& r = j["reference"];
        check_keys(r, "reference", {"image_kind", "noise_seed", "window"});
        std::string kind = to_string(c.reference_kind);
        read(r, "reference", "image_kind", kind);
        c.reference_kind = parse_image_kind(kind, "reference.image_kind");
        read(r, "reference", "noise_seed", c.reference_noise_seed);
        read(r, "reference", "window", c.reference_window);
    }
    if (j.contains("vtc")) {
        const Json& v = j["vtc"];
        check_keys(v, "vtc", {"enabled", "beta", "layer_range", "normalization"});
        read(v, "vtc", "enabled", c.vtc_enabled);
        read(v, "vtc", "beta", c.beta);
        if (v.contains("layer_range") && !v["layer_range"].is_null())
            c.vtc_layers = detail::read_range(v["layer_range"], "vtc.layer_range");
        std::string mode = to_string(c.normalization);
        read(v, "vtc", "normalization", mode);
        c.normalization = parse_normalization(mode, "vtc.normalization");
    }
    if (j.contains("aar")) {
        const Json& a = j["aar"];
        check_keys(a, "aar", {"enabled", "p_thr", "lambda_min", "lambda_max", "layer_range"});
        read(a, "aar", "enabled", c.aar_enabled);
        read(a, "aar", "p_thr", c.aar.p_thr);
        read(a, "aar", "lambda_min", c.aar.lambda_min);
        read(a, "aar", "lambda_max", c.aar.lambda_max);
        if (a.contains("layer_range") && !a["layer_range"].is_null())
            c.aar.layer_range = detail::read_range(a["layer_range"], "aar.layer_range");
    }
    if (j.contains("generation")) {
        const Json& g = j["generation"];
        check_keys(g, "generation", {"max_new_tokens"});
        read(g, "generation", "max_new_tokens", c.max_new_tokens);
    }
    if (j.contains("seeds")) {
        const Json& s = j["seeds"];
        check_keys(s, "seeds", {"start", "count"});
        read(s, "seeds", "start", c.seed_start);
        read(s, "seeds", "count", c.seed_count);
    }
    read(j, "", "row_renorm", c.row_renorm);
    read(j, "", "relevancy", c.relevancy);
    read(j, "", "threads", c.threads);
    read(j, "", "output_dir", c.output_dir);
    read(j, "", "calibration_path", c.calibration_path);
    c.model.image_slots = c.world.image_slots;
    c.model.vocab_size = c.world.num_objects + 2 + ObjectVocabulary::kNoiseTokens + 3 + ObjectVocabulary::kQueryTokens;
    validate(c);
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file " + path);
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw ConfigError("", std::string("malformed JSON: ") + e.what());
    }
    return parse_run_config(j);
}

inline Json world_to_json(const WorldConfig& w) {
    const PlantedParams& p = w.planted;
    return Json{{"num_objects", w.num_objects},
                {"objects_per_scene", w.objects_per_scene},
                {"image_slots", w.image_slots},
                {"max_slots_per_object", w.max_slots_per_object},
                {"sink_strength", w.sink_strength},
                {"sink_fraction", w.sink_fraction},
                {"decay", w.decay},
                {"prior_weight", w.prior_weight},
                {"prior_peak", w.prior_peak},
                {"planted",
                 {{"image_score", p.image_score},
                  {"salience", p.salience},
                  {"query_score", p.query_score},
                  {"generated_score", p.generated_score},
                  {"score_noise", p.score_noise},
                  {"position_scale", p.position_scale},
                  {"residual_scale", p.residual_scale},
                  {"object_bias", p.object_bias},
                  {"visual_gain", p.visual_gain},
                  {"prior_gain", p.prior_gain},
                  {"eos_base", p.eos_base},
                  {"eos_growth", p.eos_growth},
                  {"sep_logit", p.sep_logit},
                  {"mask_logit", p.mask_logit}}}};
}

/// Effective configuration as a document that parses back to the same RunConfig.
inline Json to_json(const RunConfig& c) {
    Json j;
    j["model"] = {{"num_layers", c.model.num_layers},
                  {"num_heads", c.model.num_heads},
                  {"model_dim", c.model.model_dim},
                  {"max_seq_len", c.model.max_seq_len},
                  {"seed", c.model.seed}};
    j["world"] = world_to_json(c.world);
    j["reference"] = {{"image_kind", to_string(c.reference_kind)},
                      {"noise_seed", c.reference_noise_seed},
                      {"window", c.reference_window}};
    const LayerRange vr = c.effective_vtc_layers();
    j["vtc"] = {{"enabled", c.vtc_enabled},
                {"beta", c.beta},
                {"layer_range", {vr.begin, vr.end}},
                {"normalization", to_string(c.normalization)}};
    const LayerRange ar = c.aar.layers_for(c.model.num_layers);
    j["aar"] = {{"enabled", c.aar_enabled},
                {"p_thr", c.aar.p_thr},
                {"lambda_min", c.aar.lambda_min},
                {"lambda_max", c.aar.lambda_max},
                {"layer_range", {ar.begin, ar.end}}};
    j["generation"] = {{"max_new_tokens", c.max_new_tokens}};
    j["seeds"] = {{"start", c.seed_start}, {"count", c.seed_count}};
    j["row_renorm"] = c.row_renorm;
    j["relevancy"] = c.relevancy;
    j["threads"] = c.threads;
    j["output_dir"] = c.output_dir;
    j["calibration_path"] = c.effective_calibration_path();
    return j;
}

/// Identity of the decoder a calibration was captured on.
inline std::string model_fingerprint(const ModelConfig& m, const WorldConfig& w) {
    const Json j{{"num_layers", m.num_layers}, {"num_heads", m.num_heads}, {"model_dim", m.model_dim},
                 {"image_slots", m.image_slots}, {"vocab_size", m.vocab_size}, {"max_seq_len", m.max_seq_len},
                 {"seed", m.seed},           {"world", world_to_json(w)}};
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return buf;
}

}  // namespace caac
