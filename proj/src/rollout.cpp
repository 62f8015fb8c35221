#include "nreft/rollout.hpp"

#include <ostream>

#include <json.hpp>

namespace nreft {

void dump_rollouts(const RolloutBatch& batch, std::ostream& out) {
    for (size_t i = 0; i < batch.prompts.size(); ++i) {
        const PromptRollout& pr = batch.prompts[i];
        for (size_t g = 0; g < pr.completions.size(); ++g) {
            nlohmann::ordered_json line;
            line["step"] = batch.step;
            line["prompt_index"] = i;
            line["sample"] = g;
            line["skip_indices"] = batch.mask.skipped_indices();
            line["prompt"] = pr.prompt;
            line["completion"] = pr.completions[g];
            line["behavior_logprobs"] = pr.behavior_logprobs[g];
            if (g < pr.rewards.size()) line["reward"] = pr.rewards[g];
            out << line.dump() << "\n";
        }
    }
}

}  // namespace nreft
