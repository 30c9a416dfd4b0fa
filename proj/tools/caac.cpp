// caac: calibrate, run, evaluate, ablate and analyse CAAC on the planted world.
//
// Exit codes: 0 ok, 1 internal error, 2 config error, 3 numeric error,
// 4 missing artifact.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "caac/errors.hpp"
#include "caac/experiment.hpp"
#include "caac/io.hpp"
#include "caac/plot.hpp"
#include "caac/run_config.hpp"

namespace fs = std::filesystem;
using namespace caac;

namespace {

struct Overrides {
    std::string config;
    std::optional<double> beta, p_thr, lambda_max;
    std::optional<std::size_t> max_new_tokens, threads;
    std::string seeds, out, calibration, traces;
};

/// "N" or "START:COUNT".
void apply_seeds(RunConfig& cfg, const std::string& spec) {
    if (spec.empty()) return;
    try {
        const auto colon = spec.find(':');
        if (colon == std::string::npos) {
            cfg.seed_count = std::stoull(spec);
        } else {
            cfg.seed_start = std::stoull(spec.substr(0, colon));
            cfg.seed_count = std::stoull(spec.substr(colon + 1));
        }
    } catch (const std::exception&) {
        throw ConfigError("seeds", "expected N or START:COUNT, got '" + spec + "'");
    }
}

/// Flags win over the config file, which wins over built-in defaults.
RunConfig effective_config(const Overrides& o) {
    RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    if (o.beta) cfg.beta = *o.beta;
    if (o.p_thr) cfg.aar.p_thr = *o.p_thr;
    if (o.lambda_max) cfg.aar.lambda_max = *o.lambda_max;
    if (o.max_new_tokens) cfg.max_new_tokens = *o.max_new_tokens;
    if (o.threads) cfg.threads = *o.threads;
    apply_seeds(cfg, o.seeds);
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (!o.calibration.empty()) cfg.calibration_path = o.calibration;
    validate(cfg);
    return cfg;
}

void prepare_output(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) throw MissingArtifactError("cannot create output directory " + cfg.output_dir + ": " + ec.message());
    write_text(cfg.output_dir + "/effective_config.json", to_json(cfg).dump(2) + "\n");
}

std::string path_in(const RunConfig& cfg, const std::string& name) { return cfg.output_dir + "/" + name; }

/// Calibration for the active world, with beta and layer range taken from the effective config.
std::optional<CalibrationSet> load_vtc(const World& world, const RunConfig& cfg, bool required) {
    if (!required) return std::nullopt;
    const std::string path = cfg.effective_calibration_path();
    if (!fs::exists(path))
        throw MissingArtifactError("calibration file " + path + " not found; run `caac calibrate` first");
    CalibrationSet set = load_calibration(path, world.model_config, model_fingerprint(world.model_config, world.config));
    for (const auto& v : set.vectors)
        if (v.mode != cfg.normalization)
            throw ConfigError("vtc.normalization", std::string("calibration was built with ") + to_string(v.mode) +
                                                       ", config asks for " + to_string(cfg.normalization));
    set.beta = cfg.beta;
    set.layer_range = cfg.effective_vtc_layers();
    set.validate();
    return set;
}

void write_report(const RunConfig& cfg, const std::string& stem, const MetricReport& r) {
    write_text(path_in(cfg, stem + ".json"), to_json(r).dump(2) + "\n");
    write_text(path_in(cfg, stem + ".csv"), report_csv(r));
}

void print_summary(const char* label, const MetricReport& r) {
    std::printf("%-9s CHAIR_i %.4f  CHAIR_s %.4f  HAL %.3f  COVER %.3f  trigger %.3f\n", label, r.chair_i, r.chair_s,
                r.hal, r.cover, r.telemetry.trigger_rate);
}

int cmd_calibrate(const RunConfig& cfg) {
    prepare_output(cfg);
    const World world = build_world(cfg);
    const CalibrationResult cal = calibrate(world, cfg);
    bool flat = true;
    for (std::size_t l = 0; l < cal.set.layers; ++l) {
        double worst = 0.0;
        for (std::size_t h = 0; h < cal.set.heads; ++h)
            worst = std::max(worst, flattening_spread(cal.capture.at(l, h), cal.set.at(l, h)));
        flat = flat && worst < 1e-9;
        std::printf("layer %zu: max flattening spread %.3e%s\n", l, worst,
                    cal.set.layer_range.contains(l) ? "  (calibrated)" : "");
    }
    if (cal.capture.floored) std::printf("warning: %zu captured entries floored to 1e-12\n", cal.capture.floored);
    if (!flat) throw NumericError("calibration self-check failed: reference * calibration is not flat");
    const std::string path = cfg.effective_calibration_path();
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    save_calibration(cal.set, path);
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

int cmd_run(RunConfig cfg) {
    prepare_output(cfg);
    const World world = build_world(cfg);
    const auto vtc = load_vtc(world, cfg, cfg.vtc_enabled);
    const SuiteResult suite = run_suite(world, cfg, vtc ? &*vtc : nullptr);
    write_text(path_in(cfg, "traces.jsonl"), traces_to_jsonl(suite.runs));
    Json scenes = Json::array();
    for (const auto& s : suite.scenes) scenes.push_back(to_json(s));
    write_text(path_in(cfg, "scenes.json"), scenes.dump() + "\n");
    const MetricReport r = compute_report(suite.runs, world.vocab);
    write_report(cfg, "report", r);
    print_summary("run", r);
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& traces_path) {
    prepare_output(cfg);
    const World world = build_world(cfg);
    const std::string path = traces_path.empty() ? path_in(cfg, "traces.jsonl") : traces_path;
    std::map<std::uint64_t, std::vector<TokenId>> present;
    for (std::size_t i = 0; i < cfg.seed_count; ++i)
        present[cfg.seed_start + i] = world.scene(cfg.seed_start + i).present;
    const auto runs = traces_from_jsonl(read_text(path), present);
    if (runs.empty()) throw MissingArtifactError("trace file " + path + " holds no steps");
    for (const auto& r : runs)
        if (!present.contains(r.seed))
            throw ConfigError("seeds", "trace seed " + std::to_string(r.seed) + " is outside the configured suite");
    const MetricReport r = compute_report(runs, world.vocab);
    write_report(cfg, "report", r);
    print_summary("eval", r);
    return 0;
}

int cmd_ablate(const RunConfig& cfg) {
    prepare_output(cfg);
    const World world = build_world(cfg);
    const auto vtc = load_vtc(world, cfg, true);
    const auto cells = run_ablation(world, cfg, *vtc);
    Json doc = Json::object();
    std::string csv = "cell,chair_i,chair_s,amber_chair,hal,cover,trigger_rate\n";
    for (const auto& [cell, suite] : cells) {
        const MetricReport r = compute_report(suite.runs, world.vocab);
        const std::string name = to_string(cell);
        doc[name] = to_json(r);
        write_text(path_in(cfg, "traces_" + name + ".jsonl"), traces_to_jsonl(suite.runs));
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", name.c_str(), r.chair_i, r.chair_s,
                      r.amber_chair, r.hal, r.cover, r.telemetry.trigger_rate);
        csv += buf;
        print_summary(name.c_str(), r);
    }
    write_text(path_in(cfg, "ablation.json"), doc.dump(2) + "\n");
    write_text(path_in(cfg, "ablation.csv"), csv);
    return 0;
}

int cmd_relevancy(RunConfig cfg) {
    cfg.relevancy = true;
    prepare_output(cfg);
    const World world = build_world(cfg);
    const auto vtc = load_vtc(world, cfg, cfg.vtc_enabled);
    const SuiteResult suite = run_suite(world, cfg, vtc ? &*vtc : nullptr);
    const MetricReport r = compute_report(suite.runs, world.vocab);
    write_report(cfg, "report", r);
    write_text(path_in(cfg, "traces.jsonl"), traces_to_jsonl(suite.runs));

    std::string positions = "position,r_rel,label\n";
    std::vector<std::vector<double>> series;
    std::vector<double> p_true, p_hal;
    char buf[128];
    for (std::size_t i = 0; i < suite.runs.size(); ++i) {
        const auto& run = suite.runs[i];
        const auto labels = label_tokens(run.tokens(), suite.scenes[i], world.vocab);
        std::vector<double> s;
        for (std::size_t t = 0; t < run.steps.size(); ++t) {
            s.push_back(*run.steps[t].r_rel);
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%s\n", t, *run.steps[t].r_rel, to_string(labels[t]));
            positions += buf;
            if (labels[t] == TokenLabel::Truthful) p_true.push_back(run.steps[t].p_t);
            if (labels[t] == TokenLabel::Hallucinatory) p_hal.push_back(run.steps[t].p_t);
        }
        series.push_back(std::move(s));
    }
    write_text(path_in(cfg, "relevancy_positions.csv"), positions);

    std::string conc = "rank,cumulative_share\n";
    plot::Series conc_line{"mean over steps", {}, "#1f77b4"};
    for (std::size_t k = 0; k < suite.concentration_curve.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", k + 1, suite.concentration_curve[k]);
        conc += buf;
        conc_line.points.emplace_back(static_cast<double>(k + 1), suite.concentration_curve[k]);
    }
    write_text(path_in(cfg, "concentration.csv"), conc);

    plot::Series decay_line{"mean R_rel", {}, "#ff7f0e"};
    std::size_t longest = 0;
    for (const auto& s : series) longest = std::max(longest, s.size());
    if (longest >= 3) {
        const DecayTrace d = decay_trace(series);
        for (std::size_t t = 0; t < d.positions.size(); ++t)
            decay_line.points.emplace_back(static_cast<double>(d.positions[t]), d.mean_relevancy[t]);
    }
    write_text(path_in(cfg, "decay.svg"),
               plot::line_chart("Relative image relevancy by position", "generated position", "mean R_rel",
                                {decay_line}));
    write_text(path_in(cfg, "concentration.svg"),
               plot::line_chart("Image attention concentration", "rank of image token", "cumulative share",
                                {conc_line}));
    write_text(path_in(cfg, "confidence.svg"),
               plot::histogram_pair("Confidence of object tokens", "p_t", "truthful", p_true, "hallucinatory", p_hal));

    print_summary("relevancy", r);
    const auto& t = r.telemetry;
    if (t.decay_correlation) std::printf("decay_correlation %.4f\n", *t.decay_correlation);
    std::printf("concentration_top_decile %.4f\n", t.concentration_top_decile);
    if (t.confidence_gap) std::printf("confidence_gap %.4f\n", *t.confidence_gap);
    return 0;
}

void add_common(CLI::App* sub, Overrides& o) {
    sub->add_option("-c,--config", o.config, "JSON run configuration");
    sub->add_option("--beta", o.beta, "VTC smoothing weight in [0, 1]");
    sub->add_option("--p-thr", o.p_thr, "AAR confidence threshold");
    sub->add_option("--lambda-max", o.lambda_max, "AAR maximum scale");
    sub->add_option("--max-new-tokens", o.max_new_tokens, "generation budget per scene");
    sub->add_option("--seeds", o.seeds, "seed suite as N or START:COUNT");
    sub->add_option("--threads", o.threads, "worker threads (0 = all cores)");
    sub->add_option("-o,--out", o.out, "output directory");
    sub->add_option("--calibration", o.calibration, "calibration file path");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Confidence-aware attention calibration on a planted synthetic world"};
    app.require_subcommand(1);
    Overrides o;
    auto* calibrate_cmd = app.add_subcommand("calibrate", "capture the reference and write calibration vectors");
    auto* run_cmd = app.add_subcommand("run", "generate over the seed suite with the configured interventions");
    auto* eval_cmd = app.add_subcommand("eval", "compute metrics from an existing trace file");
    auto* ablate_cmd = app.add_subcommand("ablate", "baseline / VTC-only / AAR-only / both over the seed suite");
    auto* relevancy_cmd = app.add_subcommand("relevancy", "relevancy, concentration and confidence analyses");
    for (auto* sub : {calibrate_cmd, run_cmd, eval_cmd, ablate_cmd, relevancy_cmd}) add_common(sub, o);
    eval_cmd->add_option("--traces", o.traces, "trace JSONL (default: <out>/traces.jsonl)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const RunConfig cfg = effective_config(o);
        if (calibrate_cmd->parsed()) return cmd_calibrate(cfg);
        if (run_cmd->parsed()) return cmd_run(cfg);
        if (eval_cmd->parsed()) return cmd_eval(cfg, o.traces);
        if (ablate_cmd->parsed()) return cmd_ablate(cfg);
        if (relevancy_cmd->parsed()) return cmd_relevancy(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing artifact: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
