#pragma once

#include <string>

namespace nreft {

// Importance-sampling ratio between target and behavior policies, and the
// weighting variants applied to the policy-gradient term:
//   Base      — the raw sequence ratio (clamped by a hard safety cap),
//   Practical — constant 1,
//   Retrace   — lambda * min(1, ratio), bounded above by lambda.

enum class MitigationMode { kBase, kPractical, kRetrace };

const char* to_string(MitigationMode mode);
MitigationMode mitigation_mode_from_string(const std::string& s);

struct Mitigation {
    MitigationMode mode = MitigationMode::kBase;
    double lambda = 1.0;  // meaningful only in Retrace mode

    void validate() const;  // throws ConfigError
};

// Safety cap applied to the raw ratio in Base mode before it enters a loss.
inline constexpr double kBaseRatioCap = 1e4;

// exp(target_logprob - behavior_logprob); throws NumericError on non-finite
// inputs. Ratios are always formed in log domain and exponentiated once.
double importance_ratio(double target_logprob, double behavior_logprob);

inline constexpr double practical_weight() { return 1.0; }

// lambda * min(1, base_ratio); result lies in (0, lambda].
double retrace_weight(double lambda, double base_ratio);

struct WeightResult {
    double weight = 1.0;
    bool clamped = false;  // Base-mode cap triggered
};

// Sequence-level weight for the selected mode, given the two log-probs.
WeightResult mitigation_weight(const Mitigation& m, double target_logprob, double behavior_logprob);

}  // namespace nreft
