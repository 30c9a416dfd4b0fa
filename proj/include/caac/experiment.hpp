#pragma once

// Seed-suite driver shared by the CLI and the acceptance suite.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

#include "caac/generation.hpp"
#include "caac/metrics.hpp"
#include "caac/run_config.hpp"
#include "caac/vtc.hpp"
#include "caac/world.hpp"

namespace caac {

/// Run fn(i) for i in [0, n) on up to `threads` workers. The first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline World build_world(const RunConfig& cfg) { return World::build(cfg.world, cfg.model); }

inline ReferenceSpec reference_spec(const World& world, const RunConfig& cfg) {
    return world.reference(cfg.reference_kind, cfg.reference_noise_seed, cfg.reference_window);
}

struct CalibrationResult {
    CalibrationSet set;
    ReferenceCapture capture;
};

inline CalibrationResult calibrate(const World& world, const RunConfig& cfg) {
    CalibrationResult r;
    const ReferenceSpec ref = reference_spec(world, cfg);
    r.capture = capture_reference(ref, *world.decoder);
    r.set = build_calibration_set(r.capture, cfg.normalization, cfg.beta, cfg.effective_vtc_layers());
    r.set.reference = ref;
    r.set.model_fingerprint = model_fingerprint(world.model_config, world.config);
    return r;
}

/// Generation settings for the configured cell. `vtc` may be null when VTC is disabled.
inline GenerationConfig generation_config(const World& world, const RunConfig& cfg, const CalibrationSet* vtc) {
    GenerationConfig g;
    g.max_new_tokens = cfg.max_new_tokens;
    g.eos_token = world.vocab.eos();
    g.row_renorm = cfg.row_renorm;
    g.keep_snapshots = cfg.relevancy;
    if (cfg.vtc_enabled) {
        if (!vtc) throw MissingArtifactError("VTC is enabled but no calibration is loaded");
        g.vtc = vtc;
    }
    if (cfg.aar_enabled) g.aar = cfg.aar;
    return g;
}

struct SuiteResult {
    std::vector<Scene> scenes;
    std::vector<SceneRun> runs;
    /// With relevancy: mean over all steps of the sorted cumulative share of the
    /// final last row's image attention (mean over layers and heads).
    std::vector<double> concentration_curve;
};

/// Cumulative-share curve of the (layer, head)-mean image columns of one snapshot.
inline std::vector<double> snapshot_concentration(const RowSnapshot& snap, std::size_t image_slots) {
    std::vector<double> mean(image_slots, 0.0);
    for (const auto& row : snap.rows)
        for (std::size_t j = 0; j < image_slots; ++j) mean[j] += row[j];
    return concentration_profile(mean).cumulative_share;
}

/// One greedy generation per seed, in seed order regardless of thread count.
inline SuiteResult run_suite(const World& world, const GenerationConfig& g, std::uint64_t seed_start,
                             std::size_t seed_count, std::size_t threads, bool relevancy) {
    SuiteResult out;
    out.scenes.resize(seed_count);
    out.runs.resize(seed_count);
    const std::size_t ni = world.model_config.image_slots;
    std::vector<std::vector<double>> curves(seed_count);
    std::vector<std::size_t> curve_steps(seed_count, 0);
    parallel_for(seed_count, threads, [&](std::size_t i) {
        const std::uint64_t seed = seed_start + i;
        Scene scene = world.scene(seed);
        GenerationConfig local = g;
        local.keep_snapshots = relevancy;
        GenerationTrace trace = generate(*world.decoder, world.prompt(scene), local);
        if (relevancy) {
            annotate_relevancy(*world.decoder, trace);
            curves[i].assign(ni, 0.0);
            for (const auto& snap : trace.snapshots) {
                const auto c = snapshot_concentration(snap, ni);
                for (std::size_t j = 0; j < ni; ++j) curves[i][j] += c[j];
            }
            curve_steps[i] = trace.snapshots.size();
        }
        SceneRun run;
        run.seed = seed;
        run.present = scene.present;
        run.steps = std::move(trace.steps);
        out.runs[i] = std::move(run);
        out.scenes[i] = std::move(scene);
    });
    if (relevancy) {
        std::size_t steps = 0;
        out.concentration_curve.assign(ni, 0.0);
        for (std::size_t i = 0; i < seed_count; ++i) {
            steps += curve_steps[i];
            for (std::size_t j = 0; j < ni; ++j) out.concentration_curve[j] += curves[i][j];
        }
        if (steps > 0)
            for (double& v : out.concentration_curve) v /= static_cast<double>(steps);
    }
    return out;
}

inline SuiteResult run_suite(const World& world, const RunConfig& cfg, const CalibrationSet* vtc) {
    return run_suite(world, generation_config(world, cfg, vtc), cfg.seed_start, cfg.seed_count, cfg.threads,
                     cfg.relevancy);
}

/// All four ablation cells over the same seeds. VTC cells use `vtc`, AAR cells use cfg.aar.
inline std::map<AblationCell, SuiteResult> run_ablation(const World& world, const RunConfig& cfg,
                                                        const CalibrationSet& vtc) {
    GenerationConfig full = generation_config(world, cfg, &vtc);
    full.vtc = &vtc;
    full.aar = cfg.aar;
    std::map<AblationCell, SuiteResult> out;
    for (AblationCell c : kAblationCells)
        out.emplace(c, run_suite(world, cell_config(full, c), cfg.seed_start, cfg.seed_count, cfg.threads,
                                 cfg.relevancy));
    return out;
}

}  // namespace caac
