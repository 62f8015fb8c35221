#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "nreft/bench.hpp"
#include "nreft/config.hpp"
#include "nreft/metrics.hpp"
#include "nreft/theory.hpp"
#include "nreft/trainer.hpp"

namespace nreft {

// Orchestration of whole experiments: a single training run with its on-disk
// artifacts, the sweep grid, and the theory-check battery. The CLI is a thin
// wrapper around these.

struct RunPaths {
    std::filesystem::path dir;

    static RunPaths under(const std::string& out_dir) { return RunPaths{std::filesystem::path(out_dir)}; }
    std::string config_file() const { return (dir / "config.json").string(); }
    std::string metrics_file() const { return (dir / "metrics.jsonl").string(); }
    std::string timing_file() const { return (dir / "timing.jsonl").string(); }
    std::string sft_checkpoint() const { return (dir / "checkpoint_sft.bin").string(); }
    std::string final_checkpoint() const { return (dir / "checkpoint_final.bin").string(); }
    std::string summary_file() const { return (dir / "summary.json").string(); }
    std::string timing_summary_file() const { return (dir / "timing_summary.json").string(); }
    std::string train_dataset_file() const { return (dir / "train.jsonl").string(); }
    std::string benchmark_file(int k) const { return (dir / ("bench" + std::to_string(k) + ".jsonl")).string(); }
};

// Deterministic per-run results (everything a rerun must reproduce).
struct RunSummary {
    std::string run_id;
    double skip_ratio = 0.0;
    int skip_border = 0;
    std::string mode = "base";
    double lambda = 1.0;
    uint64_t seed = 0;
    long reft_steps = 0;
    double sft_initial_loss = 0.0;
    double sft_final_loss = 0.0;
    double reward_first_10 = 0.0;
    double reward_last_10 = 0.0;
    std::vector<double> accuracy_per_benchmark;
    double accuracy = 0.0;

    nlohmann::ordered_json to_json() const;
    static RunSummary from_json(const nlohmann::json& j);
};

struct TimingSummary {
    double median_tokens_per_sec = 0.0;  // over reinforced-step generation
    double generation_wall_seconds = 0.0;
    double total_wall_seconds = 0.0;

    nlohmann::ordered_json to_json() const;
    static TimingSummary from_json(const nlohmann::json& j);
};

RunSummary load_run_summary(const std::string& path);
TimingSummary load_timing_summary(const std::string& path);
void write_json_file(const nlohmann::json& j, const std::string& path);

// Builds the train/benchmark datasets for a config (shared by all commands).
std::pair<Dataset, std::vector<Dataset>> build_datasets(const RunConfig& cfg);

// Full Algorithm run: warm-up (unless warm_start is given), reinforced steps,
// checkpoints, metrics/timing logs, pass@1 evaluation and summary files, all
// under cfg.out_dir.
template <typename R>
std::pair<RunSummary, TimingSummary> execute_run(const RunConfig& cfg, const PolicyParams<R>* warm_start = nullptr) {
    const auto run_t0 = std::chrono::steady_clock::now();
    const RunPaths paths = RunPaths::under(cfg.out_dir);
    std::filesystem::create_directories(paths.dir);
    save_run_config(cfg, paths.config_file());

    auto [train, benchmarks] = build_datasets(cfg);
    export_dataset_file(train, paths.train_dataset_file());
    for (size_t k = 0; k < benchmarks.size(); ++k) {
        export_dataset_file(benchmarks[k], paths.benchmark_file(static_cast<int>(k)));
    }

    PolicyParams<R> warm_holder;
    if (!warm_start && !cfg.init_checkpoint.empty()) {
        warm_holder = load_checkpoint<R>(cfg.init_checkpoint);
        warm_start = &warm_holder;
    }
    PolicyParams<R> params =
        warm_start ? warm_start->clone() : PolicyParams<R>::random_init(cfg.model, cfg.seed);

    MetricsWriter writer(cfg.out_dir);
    std::vector<double> step_tokens_per_sec;
    double generation_wall = 0.0;
    const double tokens_per_step =
        static_cast<double>(cfg.train.batch_size) * cfg.train.group_size * cfg.train.completion_length;
    MetricsSink sink = [&](const MetricsRecord& r) {
        writer.write(r);
        if (r.phase == "reft") {
            step_tokens_per_sec.push_back(r.tokens_per_sec);
            if (r.tokens_per_sec > 0.0) generation_wall += tokens_per_step / r.tokens_per_sec;
        }
    };

    TrainConfig train_cfg = cfg.train;
    if (warm_start) train_cfg.sft_epochs = 0;  // warm-up already applied upstream
    PolicyParams<R> sft_snapshot;
    const TrainingArtifacts artifacts = run_training(params, train, train_cfg, cfg.run_id, sink, &sft_snapshot);
    save_checkpoint(paths.sft_checkpoint(), sft_snapshot);
    save_checkpoint(paths.final_checkpoint(), params);

    const EvalResult eval = evaluate_pass_at_1(params, benchmarks, cfg.eval, cfg.train.completion_length);
    MetricsRecord eval_rec;
    eval_rec.run_id = cfg.run_id;
    eval_rec.step = std::max<long>(1, train_cfg.reft_steps);
    eval_rec.phase = "eval";
    eval_rec.mitigation_mode = to_string(cfg.train.mitigation.mode);
    eval_rec.lambda = cfg.train.mitigation.lambda;
    eval_rec.accuracy = eval.aggregate;
    eval_rec.accuracy_per_benchmark = eval.per_benchmark;
    writer.write(eval_rec);

    RunSummary summary;
    summary.run_id = cfg.run_id;
    summary.skip_ratio = cfg.train.skip_ratio;
    summary.skip_border = cfg.train.skip_border;
    summary.mode = to_string(cfg.train.mitigation.mode);
    summary.lambda = cfg.train.mitigation.lambda;
    summary.seed = cfg.seed;
    summary.reft_steps = train_cfg.reft_steps;
    summary.sft_initial_loss = artifacts.sft.initial_loss;
    summary.sft_final_loss = artifacts.sft.final_loss;
    const auto& rewards = artifacts.step_rewards;
    const size_t window = std::min<size_t>(10, rewards.size());
    for (size_t i = 0; i < window; ++i) {
        summary.reward_first_10 += rewards[i] / static_cast<double>(window);
        summary.reward_last_10 += rewards[rewards.size() - 1 - i] / static_cast<double>(window);
    }
    summary.accuracy_per_benchmark = eval.per_benchmark;
    summary.accuracy = eval.aggregate;
    write_json_file(summary.to_json(), paths.summary_file());

    TimingSummary timing;
    std::vector<double> sorted = step_tokens_per_sec;
    std::sort(sorted.begin(), sorted.end());
    timing.median_tokens_per_sec = sorted.empty() ? 0.0 : sorted[sorted.size() / 2];
    timing.total_wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - run_t0).count();
    timing.generation_wall_seconds = generation_wall;
    write_json_file(timing.to_json(), paths.timing_summary_file());
    return {summary, timing};
}

// ------------------------------ sweep ------------------------------

struct SweepInstanceResult {
    RunSummary summary;
    TimingSummary timing;
    std::vector<DeltaReport> deltas;  // vs the baseline run
};

struct SweepResult {
    RunSummary baseline;
    TimingSummary baseline_timing;
    std::vector<SweepInstanceResult> instances;
    bool retrace_soft_check = true;  // every Retrace instance within 0.10 absolute accuracy delta
    std::string report_text;
};

std::string render_sweep_report(const SweepResult& result);
void write_sweep_chart(const SweepResult& result, const std::string& path);

// Grid: ratio in {0, 12.5, 25, 37.5}% x mode in {base, practical, retrace}
// with border 1, plus the classical baseline (ratio 0, border 0, base mode).
// The SFT warm-up is shared across the grid: step 1 does not depend on the
// skip configuration or the mitigation mode.
template <typename R>
SweepResult run_sweep(const RunConfig& base, int jobs = 1) {
    const std::vector<double> ratios = {0.0, 0.125, 0.25, 0.375};
    const std::vector<MitigationMode> modes = {MitigationMode::kBase, MitigationMode::kPractical,
                                               MitigationMode::kRetrace};
    const std::filesystem::path root(base.out_dir);
    std::filesystem::create_directories(root);

    // shared warm-up: identical for every grid cell, run once
    auto [train, benchmarks] = build_datasets(base);
    PolicyParams<R> warm = PolicyParams<R>::random_init(base.model, base.seed);
    const SftStats warm_stats = sft_train(warm, train, base.train.sft_epochs, base.train);
    const std::string warm_path = (root / "checkpoint_sft.bin").string();
    save_checkpoint(warm_path, warm);
    {
        nlohmann::ordered_json j;
        j["sft_steps"] = warm_stats.steps;
        j["sft_initial_loss"] = warm_stats.initial_loss;
        j["sft_final_loss"] = warm_stats.final_loss;
        write_json_file(j, (root / "warmup_summary.json").string());
    }

    std::vector<RunConfig> configs;
    {
        RunConfig baseline = base;
        baseline.run_id = "baseline";
        baseline.out_dir = (root / "baseline").string();
        baseline.init_checkpoint = warm_path;
        baseline.train.skip_ratio = 0.0;
        baseline.train.skip_border = 0;
        baseline.train.mitigation.mode = MitigationMode::kBase;
        baseline.finalize();
        configs.push_back(baseline);
    }
    for (double ratio : ratios) {
        for (MitigationMode mode : modes) {
            RunConfig inst = base;
            std::string pct = std::to_string(ratio * 100.0);
            pct.erase(pct.find_last_not_of('0') + 1);
            if (!pct.empty() && pct.back() == '.') pct.pop_back();
            inst.run_id = "x" + pct + "_" + to_string(mode);
            inst.out_dir = (root / inst.run_id).string();
            inst.init_checkpoint = warm_path;
            inst.train.skip_ratio = ratio;
            inst.train.skip_border = 1;
            inst.train.mitigation.mode = mode;
            inst.finalize();
            configs.push_back(inst);
        }
    }

    std::vector<RunSummary> summaries(configs.size());
    std::vector<TimingSummary> timings(configs.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= configs.size()) return;
            auto [summary, timing] = execute_run<R>(configs[i], &warm);
            summaries[i] = summary;
            timings[i] = timing;
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    SweepResult result;
    result.baseline = summaries[0];
    result.baseline_timing = timings[0];
    for (size_t i = 1; i < configs.size(); ++i) {
        SweepInstanceResult inst;
        inst.summary = summaries[i];
        inst.timing = timings[i];
        inst.deltas.push_back(make_delta("accuracy", summaries[i].accuracy, result.baseline.accuracy));
        inst.deltas.push_back(
            make_delta("tokens_per_sec", timings[i].median_tokens_per_sec, result.baseline_timing.median_tokens_per_sec));
        inst.deltas.push_back(
            make_delta("runtime_seconds", timings[i].total_wall_seconds, result.baseline_timing.total_wall_seconds));
        if (summaries[i].mode == "retrace" && std::abs(inst.deltas[0].delta_abs) > 0.10) {
            result.retrace_soft_check = false;
        }
        result.instances.push_back(std::move(inst));
    }
    result.report_text = render_sweep_report(result);
    std::ofstream report((root / "sweep_report.txt").string());
    report << result.report_text;
    write_sweep_chart(result, (root / "sweep_tokens_per_sec.svg").string());
    return result;
}

// ------------------------------ theory battery ------------------------------

struct TheoryBattery {
    IdentityReport identity_reward;
    IdentityReport identity_gradient;
    UnbiasednessReport mc_on_policy;
    UnbiasednessReport mc_ensemble;
    UnbiasednessReport mc_negative_control;  // expected to FAIL its band
    VarianceReport variance_practical;
    VarianceReport variance_retrace;
    VarianceReport variance_base;  // report-only
    PairedVarianceReport paired;

    bool all_pass() const;
};

TheoryBattery run_theory_battery(uint64_t seed, size_t mc_samples);
std::string render_theory_report(const TheoryBattery& battery);
nlohmann::ordered_json theory_battery_json(const TheoryBattery& battery);

}  // namespace nreft
