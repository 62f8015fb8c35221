// Acceptance suite: one binary, one pass/fail line per criterion, non-zero
// exit if anything fails. Tolerances and thresholds are pinned in code.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "nreft/harness.hpp"
#include "test_util.hpp"

using namespace nreft;

namespace {

struct CriterionResult {
    bool pass = false;
    std::string detail;
};

using CriterionFn = std::function<CriterionResult()>;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

#define REQUIRE_OR_FAIL(cond, message)                      \
    do {                                                    \
        if (!(cond)) return {false, std::string(message)};  \
    } while (0)

// ---------------------------------------------------------------- criterion 1

CriterionResult criterion_skip_arithmetic() {
    REQUIRE_OR_FAIL(skip_count({0.05, 1, 28}) == 1, "5% of 28 layers must skip 1");
    REQUIRE_OR_FAIL(skip_count({0.10, 1, 28}) == 3, "10% of 28 layers must skip 3");
    REQUIRE_OR_FAIL(skip_count({0.15, 1, 28}) == 4, "15% of 28 layers must skip 4");
    const auto valid = valid_set({0.10, 1, 28});
    REQUIRE_OR_FAIL(valid.size() == 26, "valid set of 28 layers with border 1 has 26 entries");
    REQUIRE_OR_FAIL(valid.front() == 1 && valid.back() == 26, "valid set must be {1,...,26}");
    return {true, "skip counts {1,3,4}, valid set {1..26}"};
}

// ---------------------------------------------------------------- criterion 2

CriterionResult criterion_mask_properties() {
    // randomized configurations: both mask conditions on every draw
    Rng meta(20260808);
    int checked = 0;
    for (int trial = 0; checked < 12000; ++trial) {
        const int layers = 3 + static_cast<int>(meta.below(30));
        const int border = static_cast<int>(meta.below(static_cast<uint64_t>(layers / 2 + 1)));
        if (layers - 2 * border <= 0) continue;
        const double ratio = meta.next_double() * 0.9;
        const SkipConfig cfg{ratio, border, layers};
        int count;
        try {
            count = skip_count(cfg);
        } catch (const ConfigError&) {
            continue;
        }
        Rng rng(meta.next_u64());
        const SkipMask mask = sample_mask(cfg, rng);
        int ones = 0;
        for (uint8_t bit : mask.sigma) ones += bit;
        REQUIRE_OR_FAIL(ones == count, "sum of mask bits must equal the skip count");
        for (int i = 0; i < border; ++i) {
            REQUIRE_OR_FAIL(mask.sigma[static_cast<size_t>(i)] == 0, "border index flagged");
            REQUIRE_OR_FAIL(mask.sigma[static_cast<size_t>(layers - 1 - i)] == 0, "border index flagged");
        }
        ++checked;
    }

    // marginal uniformity at significance 0.01 (Bonferroni over valid indices)
    const SkipConfig cfg{0.25, 1, 8};
    const int draws = 20000;
    std::vector<long> counts(8, 0);
    Rng rng(77);
    for (int i = 0; i < draws; ++i) {
        const SkipMask mask = sample_mask(cfg, rng);
        for (size_t j = 0; j < mask.sigma.size(); ++j) counts[j] += mask.sigma[j];
    }
    const double p = 2.0 / 6.0;
    const double z_star = testutil::normal_quantile(1.0 - 0.01 / (2.0 * 6.0));
    double worst_z = 0.0;
    for (int j = 1; j <= 6; ++j) {
        const double z = (static_cast<double>(counts[static_cast<size_t>(j)]) - draws * p) /
                         std::sqrt(draws * p * (1.0 - p));
        worst_z = std::max(worst_z, std::abs(z));
    }
    REQUIRE_OR_FAIL(counts[0] == 0 && counts[7] == 0, "border indices must never be flagged");
    REQUIRE_OR_FAIL(worst_z <= z_star, "marginal frequency outside the 0.01 significance band");
    std::ostringstream detail;
    detail << "12000 randomized draws ok; uniformity worst |z| = " << worst_z << " <= " << z_star;
    return {true, detail.str()};
}

// ---------------------------------------------------------------- criterion 3

CriterionResult criterion_baseline_reduction() {
    RunConfig cfg = default_run_config();
    auto params = PolicyParams<float>::random_init(cfg.model, 321);
    auto [train, benches] = build_datasets(cfg);

    std::vector<std::vector<int>> prompts;
    for (int i = 0; i < cfg.train.batch_size; ++i) prompts.push_back(train.problems[static_cast<size_t>(i)].prompt);

    const SkipMask no_skip = SkipMask::none(cfg.model.num_layers);
    const uint64_t seed = 987;
    const RolloutBatch nested = generate_rollouts(params, no_skip, prompts, cfg.train.group_size,
                                                  cfg.train.completion_length, seed, /*step=*/1);

    // classical on-policy sampling, same derived streams
    size_t sequences = 0;
    for (size_t i = 0; i < prompts.size(); ++i) {
        Rng rng(derive_seed(seed, SeedScope::kRollout, 1, i));
        for (int g = 0; g < cfg.train.group_size; ++g) {
            const auto direct =
                sample_completion(params, prompts[i], no_skip, cfg.train.completion_length, 1.0, 1.0, rng);
            REQUIRE_OR_FAIL(nested.prompts[i].completions[static_cast<size_t>(g)] == direct.seq.completion,
                            "nested rollout tokens differ from on-policy sampling");
            for (size_t t = 0; t < direct.logprobs.size(); ++t) {
                REQUIRE_OR_FAIL(nested.prompts[i].behavior_logprobs[static_cast<size_t>(g)][t] == direct.logprobs[t],
                                "recorded log-probs differ bitwise from on-policy sampling");
            }
            ++sequences;
        }
    }

    double worst = 0.0;
    for (const auto& pr : nested.prompts) {
        for (size_t g = 0; g < pr.completions.size(); ++g) {
            TokenSequence seq{pr.prompt, pr.completions[g]};
            const double target_lp = sequence_logprob(params, seq, no_skip);
            const double h = importance_ratio(target_lp, pr.behavior_sequence_logprob(static_cast<int>(g)));
            worst = std::max(worst, std::abs(h - 1.0));
        }
    }
    REQUIRE_OR_FAIL(worst <= 1e-6, "on-policy importance ratio deviates from 1 beyond 1e-6");
    std::ostringstream detail;
    detail << sequences << " sequences bit-identical; max |h-1| = " << worst;
    return {true, detail.str()};
}

// ---------------------------------------------------------- criteria 4 and 5

TheoryBattery& shared_battery() {
    static TheoryBattery battery = run_theory_battery(/*seed=*/42, /*mc_samples=*/100000);
    return battery;
}

CriterionResult criterion_unbiasedness() {
    const TheoryBattery& b = shared_battery();
    for (double err : b.identity_reward.per_member_error) {
        REQUIRE_OR_FAIL(err <= 1e-9, "per-member identity error above 1e-9");
    }
    REQUIRE_OR_FAIL(b.identity_reward.ensemble_average_error <= 1e-9, "ensemble-averaged identity error above 1e-9");
    REQUIRE_OR_FAIL(b.identity_reward.normalization_error <= 1e-9, "mean policy not normalized to 1e-9");
    REQUIRE_OR_FAIL(b.identity_gradient.pass, "gradient-coordinate identity failed");
    REQUIRE_OR_FAIL(b.mc_ensemble.samples >= 100000, "estimator must use 1e5 samples");
    REQUIRE_OR_FAIL(b.mc_ensemble.pass, "importance-weighted estimator outside 4 standard errors");
    REQUIRE_OR_FAIL(b.mc_on_policy.pass, "on-policy estimator outside its band");
    REQUIRE_OR_FAIL(!b.mc_negative_control.pass, "unit-weight control failed to exhibit bias");
    std::ostringstream detail;
    detail << "identity err <= " << std::max(b.identity_reward.ensemble_average_error,
                                             b.identity_reward.normalization_error)
           << "; estimator |" << b.mc_ensemble.estimate << " - " << b.mc_ensemble.exact << "| <= 4se; control bias "
           << std::abs(b.mc_negative_control.estimate - b.mc_negative_control.exact) << " > 4se";
    return {true, detail.str()};
}

CriterionResult criterion_boundedness() {
    const TheoryBattery& b = shared_battery();
    REQUIRE_OR_FAIL(b.variance_retrace.samples >= 100000, "retrace bound must use 1e5 samples");
    REQUIRE_OR_FAIL(b.variance_retrace.pass.value_or(false), "retrace weight exceeded lambda");
    REQUIRE_OR_FAIL(b.variance_retrace.max_weight <= b.variance_retrace.lambda, "max retrace weight above lambda");
    REQUIRE_OR_FAIL(b.variance_practical.pass.value_or(false), "practical weights must have zero variance");
    REQUIRE_OR_FAIL(b.variance_practical.variance == 0.0, "practical variance non-zero");
    REQUIRE_OR_FAIL(b.paired.base_variance > b.paired.retrace_variance,
                    "base variance not strictly above retrace on paired rollouts");
    std::ostringstream detail;
    detail << "max retrace weight " << b.variance_retrace.max_weight << " <= " << b.variance_retrace.lambda
           << " over " << b.variance_retrace.samples << " samples; paired var base " << b.paired.base_variance
           << " > retrace " << b.paired.retrace_variance;
    return {true, detail.str()};
}

// ---------------------------------------------------------------- criterion 6

CriterionResult criterion_throughput_scaling() {
    ModelConfig cfg;
    cfg.num_layers = 8;
    cfg.width = 64;
    cfg.num_heads = 4;
    cfg.vocab_size = vocab::kSize;
    cfg.max_sequence_length = 48;
    auto params = PolicyParams<float>::random_init(cfg, 8);

    auto [train, benches] = generate_dataset(99, 16, 4, 2);
    ThroughputWorkload workload;
    for (const auto& p : train.problems) workload.prompts.push_back(p.prompt);
    workload.group_size = 8;
    workload.length = 32;  // 4096 generated tokens per repetition
    workload.seed = 15;
    workload.repetitions = 7;

    std::vector<SkipConfig> configs;
    for (int skipped = 0; skipped <= 3; ++skipped) {
        configs.push_back({static_cast<double>(skipped) / 8.0, skipped == 0 ? 0 : 1, 8});
    }
    const auto samples = measure_throughput(params, configs, workload);
    std::vector<double> skipped_layers, tokens_per_sec;
    for (const auto& s : samples) {
        skipped_layers.push_back(static_cast<double>(s.skipped_layers));
        tokens_per_sec.push_back(s.tokens_per_sec);
    }
    REQUIRE_OR_FAIL(skipped_layers == (std::vector<double>{0, 1, 2, 3}), "skip counts must be 0..3");
    for (size_t i = 1; i < samples.size(); ++i) {
        REQUIRE_OR_FAIL(tokens_per_sec[i] > tokens_per_sec[i - 1],
                        "median tokens/sec not strictly increasing in skipped layers");
    }
    const LinearFit fit = least_squares_fit(skipped_layers, tokens_per_sec);
    REQUIRE_OR_FAIL(fit.r_squared >= 0.9, "linear fit of tokens/sec vs skipped layers has R^2 < 0.9");
    const double speedup = tokens_per_sec[2] / tokens_per_sec[0];
    REQUIRE_OR_FAIL(speedup >= 1.10, "25% skipping must improve tokens/sec by at least 10%");
    std::ostringstream detail;
    detail << "tokens/sec";
    for (double t : tokens_per_sec) detail << " " << static_cast<long>(t);
    detail << "; R^2 = " << fit.r_squared << "; 2-of-8 speedup " << (speedup - 1.0) * 100.0 << "%";
    return {true, detail.str()};
}

// ---------------------------------------------------------------- criterion 7

CriterionResult criterion_gradient_correctness() {
    ModelConfig cfg;
    cfg.vocab_size = 5;
    cfg.num_layers = 3;
    cfg.width = 8;
    cfg.num_heads = 2;
    cfg.max_sequence_length = 8;
    cfg.ffn_multiple = 2;
    auto params = PolicyParams<double>::random_init(cfg, 17, 0.4);

    SkipMask mask = SkipMask::none(3);
    mask.sigma[1] = 1;
    mask.skip_count = 1;
    const std::vector<std::vector<int>> prompts = {{0, 1}, {3, 2}};
    RolloutBatch rollouts = generate_rollouts(params, mask, prompts, 4, 2, 7);
    for (auto& pr : rollouts.prompts) pr.rewards = {1.0, 0.0, 1.0, 0.0};

    TrainConfig train_cfg;
    train_cfg.completion_length = 2;
    train_cfg.batch_size = 2;
    train_cfg.group_size = 4;

    std::ostringstream detail;
    for (MitigationMode mode : {MitigationMode::kBase, MitigationMode::kPractical, MitigationMode::kRetrace}) {
        train_cfg.mitigation.mode = mode;
        train_cfg.mitigation.lambda = 0.9;
        auto working = params.clone();
        const auto detached = compute_detached_inputs(working, rollouts, train_cfg);
        reft_loss(working, rollouts, detached, train_cfg, /*accumulate_grads=*/true);
        auto probe = params.clone();
        const double h = 1e-6;
        double max_rel = 0.0;
        auto named_w = working.named_tensors();
        auto named_p = probe.named_tensors();
        for (size_t ti = 0; ti < named_p.size(); ++ti) {
            Tensor<double>* t = named_p[ti].second;
            for (size_t i = 0; i < t->size(); ++i) {
                const double saved = t->data()[i];
                t->data()[i] = saved + h;
                const double up = reft_loss(probe, rollouts, detached, train_cfg, false);
                t->data()[i] = saved - h;
                const double down = reft_loss(probe, rollouts, detached, train_cfg, false);
                t->data()[i] = saved;
                const double numeric = (up - down) / (2.0 * h);
                const double analytic = named_w[ti].second->grad()[i];
                const double rel =
                    std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1.0});
                max_rel = std::max(max_rel, rel);
            }
        }
        if (max_rel >= 1e-3) {
            return {false, std::string("finite differences disagree in mode ") + to_string(mode)};
        }
        detail << to_string(mode) << " max rel err " << max_rel << "; ";
    }
    return {true, detail.str()};
}

// ---------------------------------------------------------------- criterion 8

struct EndToEndState {
    std::filesystem::path root;
    RunConfig base;
};

EndToEndState& end_to_end_state() {
    static EndToEndState state = [] {
        EndToEndState s;
        s.root = std::filesystem::path("acceptance_runs");
        std::filesystem::remove_all(s.root);
        s.base = default_run_config();
        s.base.out_dir = (s.root / "sweep").string();
        return s;
    }();
    return state;
}

CriterionResult criterion_end_to_end() {
    EndToEndState& state = end_to_end_state();

    // default desk run
    RunConfig single = state.base;
    single.run_id = "default";
    single.out_dir = (state.root / "default").string();
    single.finalize();
    const auto [summary, timing] = execute_run<float>(single);
    REQUIRE_OR_FAIL(summary.sft_final_loss < summary.sft_initial_loss, "SFT loss did not decrease");
    const double improvement = summary.reward_last_10 - summary.reward_first_10;
    REQUIRE_OR_FAIL(improvement >= 0.05, "baseline reward improvement below 0.05 (got " +
                                             std::to_string(improvement) + ")");
    const auto metrics = read_metrics_file(RunPaths::under(single.out_dir).metrics_file());
    long reft_records = 0;
    for (const auto& r : metrics) {
        if (r.phase == "reft") ++reft_records;
    }
    REQUIRE_OR_FAIL(reft_records == 99, "expected 99 reinforced-step records");

    // the 12 + 1 grid
    const SweepResult sweep = run_sweep<float>(state.base, /*jobs=*/2);
    REQUIRE_OR_FAIL(sweep.instances.size() == 12, "sweep must produce 12 instances plus the baseline");
    REQUIRE_OR_FAIL(std::filesystem::exists(state.root / "sweep" / "sweep_report.txt"), "sweep report missing");
    REQUIRE_OR_FAIL(std::filesystem::exists(state.root / "sweep" / "sweep_tokens_per_sec.svg"), "sweep chart missing");
    for (const auto& inst : sweep.instances) {
        REQUIRE_OR_FAIL(inst.deltas.size() == 3, "each instance needs accuracy/tokens-per-sec/runtime deltas");
    }
    REQUIRE_OR_FAIL(sweep.retrace_soft_check, "a retrace instance moved accuracy by more than 0.10 absolute");

    std::ostringstream detail;
    detail << "SFT loss " << summary.sft_initial_loss << " -> " << summary.sft_final_loss << "; reward "
           << summary.reward_first_10 << " -> " << summary.reward_last_10 << "; accuracy " << summary.accuracy
           << "; sweep 12+1 done, retrace |d_acc| <= 0.10";
    return {true, detail.str()};
}

// ---------------------------------------------------------------- criterion 9

CriterionResult criterion_reproducibility() {
    EndToEndState& state = end_to_end_state();
    const std::filesystem::path baseline_dir = state.root / "sweep" / "baseline";
    REQUIRE_OR_FAIL(std::filesystem::exists(baseline_dir / "config.json"),
                    "criterion 8 must run first (no stored baseline config)");

    RunConfig replay = load_run_config((baseline_dir / "config.json").string());
    replay.out_dir = (state.root / "replay").string();
    replay.finalize();
    execute_run<float>(replay);

    const std::string original = read_file((baseline_dir / "metrics.jsonl").string());
    const std::string replayed = read_file((state.root / "replay" / "metrics.jsonl").string());
    REQUIRE_OR_FAIL(!original.empty(), "baseline metrics log is empty");
    REQUIRE_OR_FAIL(original == replayed, "re-executed run's metrics log is not byte-identical");
    std::ostringstream detail;
    detail << "replayed baseline: " << original.size() << " bytes byte-identical";
    return {true, detail.str()};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, CriterionFn>> criteria = {
        {"skip-count arithmetic and valid set (exact)", criterion_skip_arithmetic},
        {"mask property suite and marginal uniformity", criterion_mask_properties},
        {"baseline reduction identity (bitwise, h = 1)", criterion_baseline_reduction},
        {"unbiasedness: exact identity + Monte-Carlo + negative control", criterion_unbiasedness},
        {"boundedness: retrace <= lambda, practical var 0, paired comparison", criterion_boundedness},
        {"throughput scaling on the 8-layer model", criterion_throughput_scaling},
        {"gradient correctness of the reinforced loss (3 modes)", criterion_gradient_correctness},
        {"end-to-end learning: default run + 12+1 sweep", criterion_end_to_end},
        {"reproducibility: byte-identical replay from stored config", criterion_reproducibility},
    };

    int failures = 0;
    for (size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        CriterionResult result;
        try {
            result = criteria[i].second();
        } catch (const std::exception& e) {
            result = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (result.pass ? "[PASS]" : "[FAIL]") << " criterion " << (i + 1) << " (" << std::fixed
                  << std::setprecision(1) << seconds << " s): " << criteria[i].first;
        if (!result.detail.empty()) std::cout << " -- " << result.detail;
        std::cout << "\n" << std::defaultfloat;
        if (!result.pass) ++failures;
    }
    std::cout << (failures == 0 ? "ACCEPTANCE: all criteria passed\n"
                                : "ACCEPTANCE: " + std::to_string(failures) + " criterion(s) failed\n");
    return failures == 0 ? 0 : 1;
}
