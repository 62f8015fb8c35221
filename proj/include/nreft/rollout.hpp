#pragma once

#include <cstdint>
#include <iosfwd>
#include <thread>
#include <vector>

#include "nreft/layer_skip.hpp"
#include "nreft/model.hpp"
#include "nreft/task.hpp"

namespace nreft {

// Groups of G fixed-length completions per prompt, sampled ancestrally from
// the masked (nested) behavior model. Behavior log-probabilities are recorded
// at sampling time, so no re-evaluation is needed to form importance ratios
// against them.

struct PromptRollout {
    std::vector<int> prompt;
    std::vector<std::vector<int>> completions;          // G x L
    std::vector<std::vector<double>> behavior_logprobs; // G x L
    std::vector<double> rewards;                        // G, filled by score_rollouts

    double behavior_sequence_logprob(int g) const {
        double s = 0.0;
        for (double lp : behavior_logprobs[static_cast<size_t>(g)]) s += lp;
        return s;
    }
};

struct RolloutBatch {
    long step = 0;
    SkipMask mask;
    int completion_length = 0;
    std::vector<PromptRollout> prompts;

    size_t total_generated_tokens() const {
        size_t total = 0;
        for (const auto& p : prompts) total += p.completions.size() * static_cast<size_t>(completion_length);
        return total;
    }
};

// Samples G completions per prompt from the masked model. Each prompt owns an
// independent random stream derived from (seed, step, prompt index), so the
// result is byte-identical regardless of `threads` and prompts can be rolled
// out concurrently. Sampling uses temperature 1 / top_p 1 so the recorded
// behavior log-probs are exact policy log-probabilities.
template <typename R>
RolloutBatch generate_rollouts(const PolicyParams<R>& params, const SkipMask& mask,
                               const std::vector<std::vector<int>>& prompts, int group_size, int length,
                               uint64_t seed, long step = 0, int threads = 1) {
    if (group_size < 1) throw ContractError("group_size must be >= 1");
    if (length < 1) throw ContractError("completion length must be >= 1");
    detail::check_mask(params, mask);

    RolloutBatch batch;
    batch.step = step;
    batch.mask = mask;
    batch.completion_length = length;
    batch.prompts.resize(prompts.size());

    auto roll_one = [&](size_t i) {
        PromptRollout& pr = batch.prompts[i];
        pr.prompt = prompts[i];
        pr.completions.reserve(static_cast<size_t>(group_size));
        pr.behavior_logprobs.reserve(static_cast<size_t>(group_size));
        Rng rng(derive_seed(seed, SeedScope::kRollout, static_cast<uint64_t>(step), static_cast<uint64_t>(i)));
        for (int g = 0; g < group_size; ++g) {
            SampledSequence s = sample_completion(params, prompts[i], mask, length, /*temperature=*/1.0,
                                                  /*top_p=*/1.0, rng);
            pr.completions.push_back(std::move(s.seq.completion));
            pr.behavior_logprobs.push_back(std::move(s.logprobs));
        }
    };

    if (threads <= 1 || prompts.size() <= 1) {
        for (size_t i = 0; i < prompts.size(); ++i) roll_one(i);
    } else {
        const size_t workers = std::min<size_t>(static_cast<size_t>(threads), prompts.size());
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                for (size_t i = w; i < prompts.size(); i += workers) roll_one(i);
            });
        }
        for (auto& t : pool) t.join();
    }
    return batch;
}

// Fills rewards: r_g = reward(completion_g, reference value of the prompt).
inline void score_rollouts(RolloutBatch& batch, const RewardLookup& lookup) {
    for (PromptRollout& pr : batch.prompts) {
        const std::vector<int>& ref = lookup.reference_value(pr.prompt);
        pr.rewards.resize(pr.completions.size());
        for (size_t g = 0; g < pr.completions.size(); ++g) {
            pr.rewards[g] = reward(pr.completions[g], ref);
        }
    }
}

inline double mean_reward(const RolloutBatch& batch) {
    double total = 0.0;
    size_t count = 0;
    for (const auto& pr : batch.prompts) {
        for (double r : pr.rewards) {
            total += r;
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

// Debug dump, one record per completion (line-delimited, same token-list
// format as dataset export plus log-probs and reward).
void dump_rollouts(const RolloutBatch& batch, std::ostream& out);

}  // namespace nreft
