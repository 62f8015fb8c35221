#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "nreft/mitigation.hpp"
#include "nreft/model.hpp"

namespace nreft {

// Executable verification of the two convergence-proof steps on enumerable
// micro-models (64-bit throughout):
//  * unbiasedness — importance-weighted expectations under nested behavior
//    policies equal the target-policy expectation, both as an exact algebraic
//    identity over the enumerated sequence space and as a Monte-Carlo
//    estimator within sampling error;
//  * boundedness — the mitigation weights obey their value bounds (Retrace
//    capped at lambda, Practical constant), with the raw ratio's variance
//    reported for comparison.

inline constexpr size_t kMaxEnumerableSequences = 100000;

using SequenceFunctional = std::function<double(std::span<const int>)>;

struct EnumerablePolicy {
    const PolicyParams<double>* params = nullptr;
    SkipMask mask;
    std::vector<int> prompt;
    int length = 0;
};

// vocab^length, guarded by the enumeration bound. Throws ContractError.
size_t enumerable_size(const EnumerablePolicy& policy);

// Completion with lexicographic index `index` (most-significant position first).
std::vector<int> sequence_from_index(size_t index, int vocab_size, int length);

// log P(seq | prompt) for every completion of the configured length, indexed
// lexicographically.
std::vector<double> enumerate_sequence_logprobs(const EnumerablePolicy& policy);

// Exact E[f] = sum over all sequences of P(seq) * f(seq).
double exact_expected_value(const EnumerablePolicy& policy, const SequenceFunctional& f);

struct EnsembleSpec {
    std::vector<SkipMask> masks;  // uniform selection weights 1/|Z|
};

// Mean behavior policy: per-sequence probability (1/|Z|) * sum_i P_i(seq).
std::vector<double> mean_behavior_distribution(const PolicyParams<double>& params, const EnsembleSpec& ensemble,
                                               std::span<const int> prompt, int length);

// ---------------------------- algebraic identity ----------------------------

// For each ensemble member: | sum_seq P_i(seq) * h_i(seq) * f(seq) - E_pi[f] |,
// the literal ratio-insertion identity of the unbiasedness argument, plus the
// 1/|Z|-averaged path and the mean-policy normalization error.
struct IdentityReport {
    double exact_target = 0.0;  // E_pi[f]
    std::vector<double> per_member_error;
    double ensemble_average_error = 0.0;
    double normalization_error = 0.0;  // |sum mean-policy probs - 1|
    double tolerance = 0.0;
    bool pass = false;
};

IdentityReport check_estimator_identity(const PolicyParams<double>& params, const EnsembleSpec& ensemble,
                                        std::span<const int> prompt, int length, const SequenceFunctional& f,
                                        double tolerance = 1e-9);

// ---------------------------- Monte-Carlo estimator ----------------------------

struct UnbiasednessReport {
    double exact = 0.0;
    double estimate = 0.0;
    double standard_error = 0.0;
    double tolerance = 0.0;
    size_t samples = 0;
    bool unit_weights = false;  // h forced to 1 (negative control of the ratio's role)
    bool pass = false;          // |estimate - exact| <= max(tolerance, 4 * standard_error)
};

// Draws a member uniformly, samples a sequence from it, and averages
// h_base * f. With unit_weights the ratio is replaced by 1, which is biased
// for genuinely off-policy ensembles.
UnbiasednessReport check_unbiasedness(const PolicyParams<double>& params, const EnsembleSpec& ensemble,
                                      std::span<const int> prompt, int length, const SequenceFunctional& f,
                                      size_t n_samples, double tolerance, uint64_t seed, bool unit_weights = false);

// ---------------------------- weight boundedness ----------------------------

struct VarianceReport {
    MitigationMode mode = MitigationMode::kBase;
    double lambda = 1.0;
    double max_weight = 0.0;
    double mean_weight = 0.0;
    double variance = 0.0;
    long clamped = 0;
    size_t samples = 0;
    std::optional<bool> pass;  // Retrace: max <= lambda; Practical: variance == 0; Base: report only
};

VarianceReport check_variance_bound(const PolicyParams<double>& params, const EnsembleSpec& ensemble,
                                    const Mitigation& mitigation, std::span<const int> prompt, int length,
                                    size_t n_samples, uint64_t seed);

// Base vs Retrace weight statistics on the SAME sampled rollouts.
struct PairedVarianceReport {
    double base_variance = 0.0;
    double retrace_variance = 0.0;
    double base_max = 0.0;
    double retrace_max = 0.0;
    size_t samples = 0;
};

PairedVarianceReport paired_variance_comparison(const PolicyParams<double>& params, const EnsembleSpec& ensemble,
                                                double lambda, std::span<const int> prompt, int length,
                                                size_t n_samples, uint64_t seed);

// ---------------------------- gradient projection ----------------------------

// Functional f(seq) = base(seq) * d log pi(seq) / d theta_j for one parameter
// coordinate, so the unbiasedness checks can exercise a policy-gradient
// component rather than a plain reward.
class GradientCoordinateFunctional {
public:
    GradientCoordinateFunctional(const PolicyParams<double>& params, std::vector<int> prompt, size_t tensor_index,
                                 size_t coordinate, SequenceFunctional base);
    double operator()(std::span<const int> completion) const;

private:
    mutable PolicyParams<double> params_;  // private clone; mutated only through grad buffers
    std::vector<int> prompt_;
    size_t tensor_index_;
    size_t coordinate_;
    SequenceFunctional base_;
};

}  // namespace nreft
