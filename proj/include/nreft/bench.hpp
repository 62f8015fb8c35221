#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nreft/layer_skip.hpp"
#include "nreft/model.hpp"
#include "nreft/rollout.hpp"
#include "nreft/task.hpp"

namespace nreft {

// Accuracy (pass@1), token throughput and delta-to-baseline reporting.

struct DecodeSettings {
    double temperature = 0.6;
    double top_p = 0.95;
    uint64_t seed = 0;
};

struct EvalResult {
    std::vector<double> per_benchmark;  // a_k
    double aggregate = 0.0;             // mean over benchmarks
};

using CompletionFn = std::function<std::vector<int>(const Problem&, Rng&)>;

// One completion per problem produced by `fn`; accuracy via the task suite.
EvalResult evaluate_pass_at_1_with(const std::vector<Dataset>& benchmarks, const CompletionFn& fn, uint64_t seed);

// One sampled response per problem from the unmasked model.
template <typename R>
EvalResult evaluate_pass_at_1(const PolicyParams<R>& params, const std::vector<Dataset>& benchmarks,
                              const DecodeSettings& decode, int completion_length) {
    const SkipMask no_skip = SkipMask::none(params.config.num_layers);
    CompletionFn fn = [&](const Problem& p, Rng& rng) {
        return sample_completion(params, p.prompt, no_skip, completion_length, decode.temperature, decode.top_p, rng)
            .seq.completion;
    };
    return evaluate_pass_at_1_with(benchmarks, fn, decode.seed);
}

// ------------------------------ throughput ------------------------------

struct ThroughputWorkload {
    std::vector<std::vector<int>> prompts;
    int group_size = 4;
    int length = 32;
    uint64_t seed = 0;
    int repetitions = 3;  // measured repetitions after one discarded warm-up
    int parallelism = 1;  // declared generation thread count, recorded in reports
};

struct ThroughputSample {
    int skipped_layers = 0;
    size_t total_tokens = 0;
    double wall_seconds = 0.0;  // median repetition
    double tokens_per_sec = 0.0;
};

// Wall-clock around generation only; median of `repetitions` runs.
template <typename R>
ThroughputSample measure_one_throughput(const PolicyParams<R>& params, const SkipMask& mask,
                                        const ThroughputWorkload& w) {
    if (w.repetitions < 1) throw ContractError("repetitions must be >= 1");
    auto run_once = [&]() {
        const auto t0 = std::chrono::steady_clock::now();
        RolloutBatch batch =
            generate_rollouts(params, mask, w.prompts, w.group_size, w.length, w.seed, /*step=*/0, w.parallelism);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return std::pair<double, size_t>(seconds, batch.total_generated_tokens());
    };
    run_once();  // warm-up, discarded
    std::vector<double> walls;
    size_t tokens = 0;
    for (int rep = 0; rep < w.repetitions; ++rep) {
        auto [seconds, count] = run_once();
        walls.push_back(seconds);
        tokens = count;
    }
    std::sort(walls.begin(), walls.end());
    const double median = walls[walls.size() / 2];
    ThroughputSample sample;
    sample.skipped_layers = mask.skip_count;
    sample.total_tokens = tokens;
    sample.wall_seconds = median;
    sample.tokens_per_sec = static_cast<double>(tokens) / median;
    return sample;
}

// Identical workload across skip configurations. Repetitions are interleaved
// round-robin over the configs so clock drift and scheduler bursts hit every
// configuration equally; per-config median reported.
template <typename R>
std::vector<ThroughputSample> measure_throughput(const PolicyParams<R>& params, const std::vector<SkipConfig>& configs,
                                                 const ThroughputWorkload& w) {
    if (w.repetitions < 1) throw ContractError("repetitions must be >= 1");
    std::vector<SkipMask> masks;
    for (size_t i = 0; i < configs.size(); ++i) {
        Rng mask_rng(derive_seed(w.seed, SeedScope::kThroughput, i));
        masks.push_back(sample_mask(configs[i], mask_rng));
    }
    auto run_once = [&](const SkipMask& mask) {
        const auto t0 = std::chrono::steady_clock::now();
        RolloutBatch batch =
            generate_rollouts(params, mask, w.prompts, w.group_size, w.length, w.seed, /*step=*/0, w.parallelism);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return std::pair<double, size_t>(seconds, batch.total_generated_tokens());
    };

    std::vector<std::vector<double>> walls(configs.size());
    size_t tokens = 0;
    for (const SkipMask& mask : masks) run_once(mask);  // warm-up pass, discarded
    for (int rep = 0; rep < w.repetitions; ++rep) {
        for (size_t i = 0; i < masks.size(); ++i) {
            auto [seconds, count] = run_once(masks[i]);
            walls[i].push_back(seconds);
            tokens = count;
        }
    }

    std::vector<ThroughputSample> samples;
    samples.reserve(configs.size());
    for (size_t i = 0; i < configs.size(); ++i) {
        std::sort(walls[i].begin(), walls[i].end());
        ThroughputSample sample;
        sample.skipped_layers = masks[i].skip_count;
        sample.total_tokens = tokens;
        sample.wall_seconds = walls[i][walls[i].size() / 2];
        sample.tokens_per_sec = static_cast<double>(tokens) / sample.wall_seconds;
        samples.push_back(sample);
    }
    return samples;
}

// ------------------------------ deltas ------------------------------

struct DeltaReport {
    std::string metric;
    double value = 0.0;
    double baseline = 0.0;
    double delta_pct = 0.0;  // 100 * (value - baseline) / baseline
    double delta_abs = 0.0;
    bool relative_valid = true;  // false when baseline is zero
};

DeltaReport make_delta(const std::string& metric, double value, double baseline);

std::string render_delta_table(std::span<const DeltaReport> rows);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

LinearFit least_squares_fit(std::span<const double> x, std::span<const double> y);

// Minimal line chart (tokens/sec against skipped layers or skip ratio).
std::string render_throughput_svg(std::span<const double> x, std::span<const double> y, const std::string& x_label,
                                  const std::string& y_label);

struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
};

std::string render_multi_series_svg(std::span<const SvgSeries> series, const std::string& x_label,
                                    const std::string& y_label);

}  // namespace nreft
