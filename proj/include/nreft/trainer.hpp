#pragma once

#include <chrono>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nreft/errors.hpp"
#include "nreft/metrics.hpp"
#include "nreft/mitigation.hpp"
#include "nreft/model.hpp"
#include "nreft/rollout.hpp"
#include "nreft/task.hpp"

namespace nreft {

// Two-phase fine-tuning: a supervised warm-up on reference chains of thought,
// then S reinforced steps. Each reinforced step samples one skip mask, rolls
// out G completions per prompt from the masked behavior model (which is the
// current parameter set, i.e. the previous step's target), scores them with
// the exact-match reward, forms group-relative advantages and applies one
// optimizer update weighted by the selected mitigation mode.
//
// Gradient path per mode: Base keeps the per-token probability ratio
// differentiable through the target numerator (the denominator is the
// recorded behavior log-prob, a constant); Practical and Retrace weight the
// log-likelihood term with a detached scalar. All three yield the estimator
// weight * advantage * grad log pi.

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

enum class LrSchedule { kConstant, kHarmonic };  // harmonic: lr / (1 + s), square-summable but not summable

inline const char* to_string(LrSchedule s) { return s == LrSchedule::kConstant ? "constant" : "harmonic"; }
inline LrSchedule lr_schedule_from_string(const std::string& s) {
    if (s == "constant") return LrSchedule::kConstant;
    if (s == "harmonic") return LrSchedule::kHarmonic;
    throw ConfigError("unknown lr schedule '" + s + "'");
}

struct TrainConfig {
    int sft_epochs = 2;
    int reft_steps = 99;
    int batch_size = 16;
    int group_size = 8;
    int completion_length = 32;
    double skip_ratio = 0.0;
    int skip_border = 0;
    Mitigation mitigation;
    AdamConfig adam;          // reinforced phase; adam.lr is the RL learning rate
    double sft_lr = 3e-3;     // warm-up phase learning rate
    LrSchedule schedule = LrSchedule::kConstant;
    double kl_beta = 0.0;  // must stay 0: no KL regularization term exists
    uint64_t seed = 42;
    int rollout_threads = 1;

    void validate() const {
        if (sft_epochs < 0 || reft_steps < 0) throw ConfigError("epochs and steps must be non-negative");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (group_size < 2) throw ConfigError("group_size must be >= 2 for group-normalized advantages");
        if (completion_length < 1) throw ConfigError("completion_length must be >= 1");
        if (skip_ratio < 0.0 || skip_ratio >= 1.0) throw ConfigError("skip_ratio must lie in [0, 1)");
        if (skip_border < 0) throw ConfigError("skip_border must be non-negative");
        if (kl_beta != 0.0) throw ConfigError("kl_beta must be 0 (no KL penalty)");
        if (!(adam.lr >= 0.0) || !(sft_lr >= 0.0)) throw ConfigError("learning rates must be non-negative");
        if (rollout_threads < 1) throw ConfigError("rollout_threads must be >= 1");
        mitigation.validate();
    }

    SkipConfig skip_config(int num_layers) const { return SkipConfig{skip_ratio, skip_border, num_layers}; }
};

inline double lr_at(const TrainConfig& cfg, long step) {
    switch (cfg.schedule) {
        case LrSchedule::kHarmonic: return cfg.adam.lr / (1.0 + static_cast<double>(step));
        case LrSchedule::kConstant: break;
    }
    return cfg.adam.lr;
}

// ------------------------------ advantages ------------------------------

struct AdvantageGroup {
    std::vector<double> rewards;
    std::vector<double> advantages;
};

// A_g = (r_g - mean) / (std + eps) with population std and eps = 1e-4.
// Uniform-reward groups get exactly zero advantages.
inline AdvantageGroup group_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) throw ContractError("group advantages need at least 2 rewards");
    AdvantageGroup g;
    g.rewards.assign(rewards.begin(), rewards.end());
    const double n = static_cast<double>(rewards.size());
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    var /= n;
    const double denom = std::sqrt(var) + 1e-4;
    g.advantages.resize(rewards.size());
    for (size_t i = 0; i < rewards.size(); ++i) {
        g.advantages[i] = var == 0.0 ? 0.0 : (rewards[i] - mean) / denom;
    }
    return g;
}

// ------------------------------ optimizer ------------------------------

template <typename R>
class Adam {
public:
    Adam(PolicyParams<R>& params, AdamConfig cfg) : cfg_(cfg) {
        for (auto& [name, t] : params.named_tensors()) {
            m_.emplace_back(t->size(), R(0));
            v_.emplace_back(t->size(), R(0));
        }
    }

    void step(PolicyParams<R>& params, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        auto named = params.named_tensors();
        for (size_t i = 0; i < named.size(); ++i) {
            Tensor<R>* t = named[i].second;
            const R* g = t->grad();
            if (!g) continue;
            R* w = t->data();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < t->size(); ++j) {
                m[j] = static_cast<R>(cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j]);
                v[j] = static_cast<R>(cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j]);
                const double mhat = static_cast<double>(m[j]) / bc1;
                const double vhat = static_cast<double>(v[j]) / bc2;
                w[j] -= static_cast<R>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    long steps_taken() const { return t_; }

private:
    AdamConfig cfg_;
    std::vector<std::vector<R>> m_, v_;
    long t_ = 0;
};

// ------------------------------ SFT warm-up ------------------------------

struct SftStats {
    long steps = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Teacher-forced cross-entropy on (prompt, padded CoT) pairs; per-token mean
// within a sequence, mean over the batch, one Adam step per batch. The full
// (unmasked) model is trained. Throws TrainingError on divergence.
template <typename R>
SftStats sft_train(PolicyParams<R>& params, const Dataset& data, int epochs, const TrainConfig& cfg,
                   const std::string& run_id = "run", const MetricsSink& sink = nullptr) {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    SftStats stats;
    if (epochs == 0 || data.problems.empty()) return stats;

    params.set_requires_grad(true);
    Adam<R> opt(params, cfg.adam);
    const SkipMask no_skip = SkipMask::none(params.config.num_layers);
    const int len = cfg.completion_length;
    const R token_weight = static_cast<R>(-1.0 / len);
    long global_step = 0;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<size_t> order(data.problems.size());
        std::iota(order.begin(), order.end(), size_t{0});
        Rng shuffle_rng(derive_seed(cfg.seed, SeedScope::kSftShuffle, static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = shuffle_rng.below(i);
            std::swap(order[i - 1], order[j]);
        }
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const auto t0 = std::chrono::steady_clock::now();
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            params.zero_grad();
            double batch_loss = 0.0;
            for (size_t i = start; i < end; ++i) {
                const Problem& p = data.problems[order[i]];
                TokenSequence seq{p.prompt, padded_cot(p, len)};
                Tape<R> tape;
                Tensor<R> lp = completion_logprobs(tape, params, seq, no_skip);
                std::vector<R> weights(lp.size(), token_weight);
                Tensor<R> loss = weighted_sum(tape, lp, std::span<const R>(weights));
                batch_loss += static_cast<double>(loss.item()) * inv_batch;
                tape.backward(loss, static_cast<R>(inv_batch));
            }
            if (!std::isfinite(batch_loss)) throw TrainingError("SFT loss diverged", global_step);
            opt.step(params, cfg.sft_lr);
            if (!params.all_finite()) throw TrainingError("non-finite parameter after SFT update", global_step);

            ++global_step;
            if (stats.steps == 0) stats.initial_loss = batch_loss;
            stats.final_loss = batch_loss;
            stats.steps = global_step;
            if (sink) {
                MetricsRecord rec;
                rec.run_id = run_id;
                rec.step = global_step;
                rec.phase = "sft";
                rec.loss = batch_loss;
                rec.mitigation_mode = to_string(cfg.mitigation.mode);
                rec.lambda = cfg.mitigation.lambda;
                rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                sink(rec);
            }
        }
    }
    return stats;
}

// ------------------------------ reinforced loss ------------------------------

// Quantities the loss treats as constants: group advantages (functions of the
// rewards only) and, in Practical/Retrace mode, the detached per-sequence
// mitigation weight evaluated at the parameters the step started from.
struct DetachedStepInputs {
    std::vector<std::vector<double>> advantages;  // per prompt, per sample
    std::vector<std::vector<double>> weights;     // detached h_m; 1.0 in Base/Practical
};

template <typename R>
DetachedStepInputs compute_detached_inputs(const PolicyParams<R>& params, const RolloutBatch& rollouts,
                                           const TrainConfig& cfg) {
    const SkipMask no_skip = SkipMask::none(params.config.num_layers);
    DetachedStepInputs inputs;
    for (const PromptRollout& pr : rollouts.prompts) {
        inputs.advantages.push_back(group_advantages(pr.rewards).advantages);
        std::vector<double> w(pr.completions.size(), 1.0);
        if (cfg.mitigation.mode == MitigationMode::kRetrace) {
            for (size_t g = 0; g < pr.completions.size(); ++g) {
                if (inputs.advantages.back()[g] == 0.0) continue;
                TokenSequence seq{pr.prompt, pr.completions[g]};
                const double target_lp = sequence_logprob(params, seq, no_skip);
                const double h = importance_ratio(target_lp, pr.behavior_sequence_logprob(static_cast<int>(g)));
                w[g] = retrace_weight(cfg.mitigation.lambda, h);
            }
        }
        inputs.weights.push_back(std::move(w));
    }
    return inputs;
}

// Mean over sequences of -(1/L) * sum_l w_l * A * (loss term), where the term
// is log pi in Practical/Retrace mode and the numerator-differentiable
// probability ratio in Base mode. With accumulate_grads the per-sequence
// gradients land in params (zeroed first); otherwise this is a pure forward
// evaluation usable for finite differencing against fixed detached inputs.
template <typename R>
double reft_loss(PolicyParams<R>& params, const RolloutBatch& rollouts, const DetachedStepInputs& inputs,
                 const TrainConfig& cfg, bool accumulate_grads, long* clamp_count = nullptr) {
    const SkipMask no_skip = SkipMask::none(params.config.num_layers);
    const int len = rollouts.completion_length;
    double n_seqs = 0.0;
    for (const auto& pr : rollouts.prompts) n_seqs += static_cast<double>(pr.completions.size());
    double loss_total = 0.0;

    if (accumulate_grads) {
        params.set_requires_grad(true);
        params.zero_grad();
    }
    for (size_t pi = 0; pi < rollouts.prompts.size(); ++pi) {
        const PromptRollout& pr = rollouts.prompts[pi];
        for (size_t g = 0; g < pr.completions.size(); ++g) {
            const double advantage = inputs.advantages[pi][g];
            if (advantage == 0.0) continue;  // zero-weight sequence contributes neither loss nor gradient
            TokenSequence seq{pr.prompt, pr.completions[g]};
            Tape<R> tape(accumulate_grads);
            Tensor<R> lp = completion_logprobs(tape, params, seq, no_skip);
            Tensor<R> loss;
            if (cfg.mitigation.mode == MitigationMode::kBase) {
                std::vector<R> behavior(lp.size());
                for (size_t i = 0; i < behavior.size(); ++i) {
                    behavior[i] = static_cast<R>(pr.behavior_logprobs[g][i]);
                }
                Tensor<R> log_ratio = add_constant(tape, lp, std::span<const R>(behavior), R(-1));
                Tensor<R> ratio = clamp_max(tape, exp(tape, log_ratio), static_cast<R>(kBaseRatioCap), clamp_count);
                std::vector<R> weights(lp.size(), static_cast<R>(-advantage / len));
                loss = weighted_sum(tape, ratio, std::span<const R>(weights));
            } else {
                const double w = inputs.weights[pi][g];
                std::vector<R> weights(lp.size(), static_cast<R>(-advantage * w / len));
                loss = weighted_sum(tape, lp, std::span<const R>(weights));
            }
            loss_total += static_cast<double>(loss.item()) / n_seqs;
            if (accumulate_grads) tape.backward(loss, static_cast<R>(1.0 / n_seqs));
        }
    }
    return loss_total;
}

// ------------------------------ reinforced step ------------------------------

// One gradient step: behavior = current parameters + freshly sampled mask,
// rollouts, rewards, group advantages, mitigation-weighted loss, one Adam
// update. Returns the step's metrics (tokens/sec measured around generation
// only). Throws TrainingError when the loss is non-finite.
template <typename R>
MetricsRecord reft_step(PolicyParams<R>& params, const std::vector<const Problem*>& batch, const TrainConfig& cfg,
                        const RewardLookup& lookup, Adam<R>& opt, long step, const std::string& run_id = "run") {
    const auto step_t0 = std::chrono::steady_clock::now();
    const SkipConfig skip_cfg = cfg.skip_config(params.config.num_layers);
    Rng mask_rng(derive_seed(cfg.seed, SeedScope::kSkipMask, static_cast<uint64_t>(step)));
    const SkipMask mask = sample_mask(skip_cfg, mask_rng);

    std::vector<std::vector<int>> prompts;
    prompts.reserve(batch.size());
    for (const Problem* p : batch) prompts.push_back(p->prompt);

    const auto gen_t0 = std::chrono::steady_clock::now();
    RolloutBatch rollouts = generate_rollouts(params, mask, prompts, cfg.group_size, cfg.completion_length, cfg.seed,
                                              step, cfg.rollout_threads);
    const double gen_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - gen_t0).count();
    score_rollouts(rollouts, lookup);

    const DetachedStepInputs inputs = compute_detached_inputs(params, rollouts, cfg);
    long clamp_count = 0;
    const double loss_total = reft_loss(params, rollouts, inputs, cfg, /*accumulate_grads=*/true, &clamp_count);
    if (!std::isfinite(loss_total)) throw TrainingError("reinforced loss diverged", step);
    opt.step(params, lr_at(cfg, step));
    if (!params.all_finite()) throw TrainingError("non-finite parameter after update", step);
    params.step_index = step;

    MetricsRecord rec;
    rec.run_id = run_id;
    rec.step = step;
    rec.phase = "reft";
    rec.loss = loss_total;
    rec.mean_reward = mean_reward(rollouts);
    rec.skip_indices = mask.skipped_indices();
    rec.mitigation_mode = to_string(cfg.mitigation.mode);
    rec.lambda = cfg.mitigation.lambda;
    rec.clamp_count = clamp_count;
    const size_t tokens = rollouts.total_generated_tokens();
    rec.tokens_per_sec = gen_seconds > 0.0 ? static_cast<double>(tokens) / gen_seconds : 0.0;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - step_t0).count();
    return rec;
}

// ------------------------------ full run ------------------------------

struct TrainingArtifacts {
    SftStats sft;
    std::vector<double> step_rewards;  // mean rollout reward per reinforced step
};

// Warm-up (unless epochs is 0) followed by reft_steps reinforced steps over
// shuffled prompt batches. Leaves the final parameters in `params`; the
// warm-up checkpoint is returned through `sft_snapshot` when requested.
template <typename R>
TrainingArtifacts run_training(PolicyParams<R>& params, const Dataset& train, const TrainConfig& cfg,
                               const std::string& run_id = "run", const MetricsSink& sink = nullptr,
                               PolicyParams<R>* sft_snapshot = nullptr) {
    cfg.validate();
    TrainingArtifacts artifacts;
    artifacts.sft = sft_train(params, train, cfg.sft_epochs, cfg, run_id, sink);
    if (sft_snapshot) *sft_snapshot = params.clone();
    if (cfg.reft_steps == 0) return artifacts;

    RewardLookup lookup;
    lookup.add(train);
    Adam<R> opt(params, cfg.adam);

    std::vector<size_t> order(train.problems.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t cursor = order.size();  // force a shuffle on first use
    uint64_t wrap = 0;

    for (long step = 1; step <= cfg.reft_steps; ++step) {
        std::vector<const Problem*> batch;
        batch.reserve(static_cast<size_t>(cfg.batch_size));
        while (batch.size() < static_cast<size_t>(cfg.batch_size)) {
            if (cursor >= order.size()) {
                Rng rng(derive_seed(cfg.seed, SeedScope::kReftBatch, wrap++));
                for (size_t i = order.size(); i > 1; --i) {
                    const size_t j = rng.below(i);
                    std::swap(order[i - 1], order[j]);
                }
                cursor = 0;
            }
            batch.push_back(&train.problems[order[cursor++]]);
        }
        MetricsRecord rec = reft_step(params, batch, cfg, lookup, opt, step, run_id);
        artifacts.step_rewards.push_back(rec.mean_reward.value_or(0.0));
        if (sink) sink(rec);
    }
    return artifacts;
}

}  // namespace nreft
