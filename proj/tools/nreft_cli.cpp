// Command-line entry point: reproducible experiment runs (warm-up, reinforced
// fine-tuning, evaluation, throughput, theory checks, delta reports, sweep).
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure,
// 3 theory-check failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "nreft/harness.hpp"

using namespace nreft;

namespace {

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    bool has_seed = false;
    uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "config file (json)");
    cmd->add_option("--set", flags.overrides, "override a config key, e.g. --set train.lr=0.003")->take_all();
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--seed", flags.seed, "master seed")->each([&flags](const std::string&) { flags.has_seed = true; });
}

RunConfig build_config(const CommonFlags& flags) {
    nlohmann::ordered_json j = to_json(RunConfig{});
    if (!flags.config_path.empty()) {
        std::ifstream in(flags.config_path);
        if (!in) throw ConfigError("cannot open config " + flags.config_path);
        merge_validated(j, nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true));
    }
    for (const std::string& assignment : flags.overrides) apply_override(j, assignment);
    RunConfig cfg = run_config_from_json(j);
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (flags.has_seed) cfg.seed = flags.seed;
    cfg.finalize();
    return cfg;
}

template <typename R>
int do_sft(const RunConfig& cfg) {
    const RunPaths paths = RunPaths::under(cfg.out_dir);
    std::filesystem::create_directories(paths.dir);
    save_run_config(cfg, paths.config_file());
    auto [train, benchmarks] = build_datasets(cfg);
    export_dataset_file(train, paths.train_dataset_file());
    auto params = PolicyParams<R>::random_init(cfg.model, cfg.seed);
    MetricsWriter writer(cfg.out_dir);
    const SftStats stats = sft_train(params, train, cfg.train.sft_epochs, cfg.train, cfg.run_id, writer.sink());
    save_checkpoint(paths.sft_checkpoint(), params);
    std::cout << "sft: " << stats.steps << " steps, loss " << stats.initial_loss << " -> " << stats.final_loss
              << "\ncheckpoint: " << paths.sft_checkpoint() << "\n";
    return 0;
}

template <typename R>
int do_reft(const RunConfig& cfg) {
    auto [summary, timing] = execute_run<R>(cfg);
    std::cout << "run " << summary.run_id << ": accuracy " << summary.accuracy << ", mean reward (first 10 steps) "
              << summary.reward_first_10 << " -> (last 10) " << summary.reward_last_10 << "\n"
              << "median generation tokens/sec " << timing.median_tokens_per_sec << ", total wall "
              << timing.total_wall_seconds << " s\nartifacts under " << cfg.out_dir << "\n";
    return 0;
}

template <typename R>
int do_eval(const RunConfig& cfg, const std::string& checkpoint) {
    const RunPaths paths = RunPaths::under(cfg.out_dir);
    std::filesystem::create_directories(paths.dir);
    const std::string source = checkpoint.empty() ? paths.final_checkpoint() : checkpoint;
    auto params = load_checkpoint<R>(source);
    auto [train, benchmarks] = build_datasets(cfg);
    const EvalResult result = evaluate_pass_at_1(params, benchmarks, cfg.eval, cfg.train.completion_length);

    nlohmann::ordered_json j;
    j["checkpoint"] = source;
    j["accuracy_per_benchmark"] = result.per_benchmark;
    j["accuracy"] = result.aggregate;
    write_json_file(j, (paths.dir / "eval_report.json").string());

    std::ofstream jsonl((paths.dir / "eval_report.jsonl").string());
    std::ostringstream table;
    table << std::left << std::setw(12) << "benchmark" << std::right << std::setw(10) << "problems" << std::setw(10)
          << "pass@1" << "\n" << std::string(32, '-') << "\n";
    for (size_t k = 0; k < result.per_benchmark.size(); ++k) {
        nlohmann::ordered_json line;
        line["benchmark"] = benchmarks[k].split;
        line["problems"] = benchmarks[k].problems.size();
        line["accuracy"] = result.per_benchmark[k];
        jsonl << line.dump() << "\n";
        table << std::left << std::setw(12) << benchmarks[k].split << std::right << std::setw(10)
              << benchmarks[k].problems.size() << std::setw(10) << std::fixed << std::setprecision(4)
              << result.per_benchmark[k] << "\n";
    }
    nlohmann::ordered_json agg;
    agg["benchmark"] = "aggregate";
    agg["accuracy"] = result.aggregate;
    jsonl << agg.dump() << "\n";
    table << std::left << std::setw(12) << "aggregate" << std::right << std::setw(10) << "" << std::setw(10)
          << std::fixed << std::setprecision(4) << result.aggregate << "\n";
    std::ofstream txt((paths.dir / "eval_report.txt").string());
    txt << table.str();
    std::cout << table.str();
    return 0;
}

template <typename R>
int do_throughput(const RunConfig& cfg, const std::string& checkpoint) {
    const RunPaths paths = RunPaths::under(cfg.out_dir);
    std::filesystem::create_directories(paths.dir);
    auto params = checkpoint.empty() ? PolicyParams<R>::random_init(cfg.model, cfg.seed)
                                     : load_checkpoint<R>(checkpoint);

    auto [train, benchmarks] = build_datasets(cfg);
    ThroughputWorkload workload;
    for (int i = 0; i < cfg.throughput.num_prompts; ++i) {
        workload.prompts.push_back(train.problems[static_cast<size_t>(i) % train.problems.size()].prompt);
    }
    workload.group_size = cfg.throughput.group_size;
    workload.length = cfg.throughput.length;
    workload.seed = cfg.seed;
    workload.repetitions = cfg.throughput.repetitions;

    std::vector<SkipConfig> skip_configs;
    for (double ratio : cfg.throughput.ratios) {
        skip_configs.push_back({ratio, ratio > 0.0 ? cfg.throughput.border : 0, params.config.num_layers});
    }
    const auto samples = measure_throughput(params, skip_configs, workload);

    std::ofstream jsonl((paths.dir / "throughput_report.jsonl").string());
    std::ostringstream table;
    table << std::left << std::setw(10) << "ratio" << std::right << std::setw(10) << "skipped" << std::setw(12)
          << "tokens" << std::setw(12) << "seconds" << std::setw(14) << "tokens/sec" << "\n";
    std::vector<double> xs, ys;
    for (size_t i = 0; i < samples.size(); ++i) {
        nlohmann::ordered_json j;
        j["ratio"] = cfg.throughput.ratios[i];
        j["skipped_layers"] = samples[i].skipped_layers;
        j["total_tokens"] = samples[i].total_tokens;
        j["wall_seconds"] = samples[i].wall_seconds;
        j["tokens_per_sec"] = samples[i].tokens_per_sec;
        j["parallelism"] = workload.parallelism;
        jsonl << j.dump() << "\n";
        table << std::left << std::setw(10) << cfg.throughput.ratios[i] << std::right << std::setw(10)
              << samples[i].skipped_layers << std::setw(12) << samples[i].total_tokens << std::setw(12) << std::fixed
              << std::setprecision(4) << samples[i].wall_seconds << std::setw(14) << std::setprecision(1)
              << samples[i].tokens_per_sec << "\n";
        xs.push_back(static_cast<double>(samples[i].skipped_layers));
        ys.push_back(samples[i].tokens_per_sec);
    }
    std::ofstream txt((paths.dir / "throughput_report.txt").string());
    txt << table.str();
    std::ofstream svg((paths.dir / "throughput.svg").string());
    svg << render_throughput_svg(xs, ys, "skipped layers", "tokens/sec");
    std::cout << table.str();
    return 0;
}

int do_theory(const RunConfig& cfg, size_t samples) {
    const RunPaths paths = RunPaths::under(cfg.out_dir);
    std::filesystem::create_directories(paths.dir);
    const TheoryBattery battery = run_theory_battery(cfg.seed, samples);
    const std::string report = render_theory_report(battery);
    std::ofstream txt((paths.dir / "theory_report.txt").string());
    txt << report;
    std::ofstream jsonl((paths.dir / "theory_report.jsonl").string());
    const auto j = theory_battery_json(battery);
    for (const auto& [key, value] : j.items()) {
        nlohmann::ordered_json line;
        line["check"] = key;
        line["result"] = value;
        jsonl << line.dump() << "\n";
    }
    std::cout << report;
    return battery.all_pass() ? 0 : 3;
}

int do_report(const std::string& run_dir, const std::string& baseline_dir, const std::string& out_path) {
    const RunPaths run = RunPaths::under(run_dir);
    const RunPaths base = RunPaths::under(baseline_dir);
    const RunSummary rs = load_run_summary(run.summary_file());
    const RunSummary bs = load_run_summary(base.summary_file());
    const TimingSummary rt = load_timing_summary(run.timing_summary_file());
    const TimingSummary bt = load_timing_summary(base.timing_summary_file());

    std::vector<DeltaReport> rows;
    rows.push_back(make_delta("accuracy", rs.accuracy, bs.accuracy));
    for (size_t k = 0; k < rs.accuracy_per_benchmark.size() && k < bs.accuracy_per_benchmark.size(); ++k) {
        rows.push_back(make_delta("accuracy_bench" + std::to_string(k), rs.accuracy_per_benchmark[k],
                                  bs.accuracy_per_benchmark[k]));
    }
    rows.push_back(make_delta("tokens_per_sec", rt.median_tokens_per_sec, bt.median_tokens_per_sec));
    rows.push_back(make_delta("generation_seconds", rt.generation_wall_seconds, bt.generation_wall_seconds));
    rows.push_back(make_delta("runtime_seconds", rt.total_wall_seconds, bt.total_wall_seconds));

    const std::string table = render_delta_table(rows);
    std::cout << table;
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << table;
        std::ofstream jsonl(out_path + ".jsonl");
        for (const auto& d : rows) {
            nlohmann::ordered_json j;
            j["metric"] = d.metric;
            j["value"] = d.value;
            j["baseline"] = d.baseline;
            j["delta_abs"] = d.delta_abs;
            if (d.relative_valid) j["delta_pct"] = d.delta_pct;
            jsonl << j.dump() << "\n";
        }
    }
    return 0;
}

template <typename R>
int do_sweep(const RunConfig& cfg, int jobs) {
    const SweepResult result = run_sweep<R>(cfg, jobs);
    std::cout << result.report_text;
    std::cout << "artifacts under " << cfg.out_dir << "\n";
    return 0;
}

template <typename F32, typename F64>
int dispatch_precision(const RunConfig& cfg, F32&& f32, F64&& f64) {
    return cfg.precision == Precision::kF32 ? f32() : f64();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reinforced fine-tuning with nested (layer-skipping) behavior policies"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string checkpoint;
    std::string report_run, report_baseline, report_out;
    size_t theory_samples = 100000;
    int sweep_jobs = std::max(1u, std::min(4u, std::thread::hardware_concurrency()));

    CLI::App* sft = app.add_subcommand("sft", "supervised warm-up only");
    add_common(sft, flags);
    CLI::App* reft = app.add_subcommand("reft", "full run: warm-up + reinforced steps + evaluation");
    add_common(reft, flags);
    reft->add_option("--init", checkpoint, "start reinforced training from this checkpoint (skips warm-up)");
    CLI::App* eval = app.add_subcommand("eval", "pass@1 evaluation of a checkpoint");
    add_common(eval, flags);
    eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate (default: <out>/checkpoint_final.bin)");
    CLI::App* thave = app.add_subcommand("throughput", "generation throughput across skip ratios");
    add_common(thave, flags);
    thave->add_option("--checkpoint", checkpoint, "optional checkpoint (default: random-initialized model)");
    CLI::App* theory = app.add_subcommand("theory", "unbiasedness and boundedness checks on a micro-model");
    add_common(theory, flags);
    theory->add_option("--samples", theory_samples, "Monte-Carlo sample count");
    CLI::App* report = app.add_subcommand("report", "delta table of a run against a baseline run");
    report->add_option("--run", report_run, "run directory")->required();
    report->add_option("--baseline", report_baseline, "baseline run directory")->required();
    report->add_option("--out", report_out, "write the table to this file");
    CLI::App* sweep = app.add_subcommand("sweep", "12 instances + 1 baseline over the ratio x mode grid");
    add_common(sweep, flags);
    sweep->add_option("--jobs", sweep_jobs, "parallel runs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (report->parsed()) return do_report(report_run, report_baseline, report_out);

        RunConfig cfg = build_config(flags);
        if (sft->parsed()) {
            return dispatch_precision(cfg, [&] { return do_sft<float>(cfg); }, [&] { return do_sft<double>(cfg); });
        }
        if (reft->parsed()) {
            if (!checkpoint.empty()) cfg.init_checkpoint = checkpoint;
            return dispatch_precision(cfg, [&] { return do_reft<float>(cfg); }, [&] { return do_reft<double>(cfg); });
        }
        if (eval->parsed()) {
            return dispatch_precision(cfg, [&] { return do_eval<float>(cfg, checkpoint); },
                                      [&] { return do_eval<double>(cfg, checkpoint); });
        }
        if (thave->parsed()) {
            return dispatch_precision(cfg, [&] { return do_throughput<float>(cfg, checkpoint); },
                                      [&] { return do_throughput<double>(cfg, checkpoint); });
        }
        if (theory->parsed()) return do_theory(cfg, theory_samples);
        if (sweep->parsed()) {
            return dispatch_precision(cfg, [&] { return do_sweep<float>(cfg, sweep_jobs); },
                                      [&] { return do_sweep<double>(cfg, sweep_jobs); });
        }
        std::cerr << "no command\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
}
