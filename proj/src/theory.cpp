#include "nreft/theory.hpp"

#include <algorithm>
#include <cmath>

#include "nreft/errors.hpp"
#include "nreft/rng.hpp"

namespace nreft {

size_t enumerable_size(const EnumerablePolicy& policy) {
    if (!policy.params) throw ContractError("enumerable policy has no parameters");
    if (policy.length < 1) throw ContractError("enumerable length must be >= 1");
    const int vocab = policy.params->config.vocab_size;
    size_t total = 1;
    for (int i = 0; i < policy.length; ++i) {
        total *= static_cast<size_t>(vocab);
        if (total > kMaxEnumerableSequences) {
            throw ContractError("vocab^length exceeds the enumeration bound of " +
                                std::to_string(kMaxEnumerableSequences));
        }
    }
    return total;
}

std::vector<int> sequence_from_index(size_t index, int vocab_size, int length) {
    std::vector<int> seq(static_cast<size_t>(length));
    for (int pos = length - 1; pos >= 0; --pos) {
        seq[static_cast<size_t>(pos)] = static_cast<int>(index % static_cast<size_t>(vocab_size));
        index /= static_cast<size_t>(vocab_size);
    }
    return seq;
}

std::vector<double> enumerate_sequence_logprobs(const EnumerablePolicy& policy) {
    const size_t total = enumerable_size(policy);
    const int vocab = policy.params->config.vocab_size;
    std::vector<double> logprobs(total);
    TokenSequence seq;
    seq.prompt = policy.prompt;
    for (size_t i = 0; i < total; ++i) {
        seq.completion = sequence_from_index(i, vocab, policy.length);
        logprobs[i] = sequence_logprob(*policy.params, seq, policy.mask);
    }
    return logprobs;
}

double exact_expected_value(const EnumerablePolicy& policy, const SequenceFunctional& f) {
    const size_t total = enumerable_size(policy);
    const int vocab = policy.params->config.vocab_size;
    const std::vector<double> logprobs = enumerate_sequence_logprobs(policy);
    double expectation = 0.0;
    for (size_t i = 0; i < total; ++i) {
        const std::vector<int> completion = sequence_from_index(i, vocab, policy.length);
        expectation += std::exp(logprobs[i]) * f(completion);
    }
    return expectation;
}

std::vector<double> mean_behavior_distribution(const PolicyParams<double>& params, const EnsembleSpec& ensemble,
                                               std::span<const int> prompt, int length) {
    if (ensemble.masks.empty()) throw ContractError("ensemble is empty");
    std::vector<int> prompt_vec(prompt.begin(), prompt.end());
    std::vector<double> mean;
    for (const SkipMask& mask : ensemble.masks) {
        EnumerablePolicy member{&params, mask, prompt_vec, length};
        const std::vector<double> logprobs = enumerate_sequence_logprobs(member);
        if (mean.empty()) mean.assign(logprobs.size(), 0.0);
        for (size_t i = 0; i < logprobs.size(); ++i) mean[i] += std::exp(logprobs[i]);
    }
    const double inv = 1.0 / static_cast<double>(ensemble.masks.size());
    for (double& p : mean) p *= inv;
    return mean;
}

IdentityReport check_estimator_identity(const PolicyParams<double>& params, const EnsembleSpec& ensemble,
                                        std::span<const int> prompt, int length, const SequenceFunctional& f,
                                        double tolerance) {
    if (ensemble.masks.empty()) throw ContractError("ensemble is empty");
    const std::vector<int> prompt_vec(prompt.begin(), prompt.end());
    const int vocab = params.config.vocab_size;

    const EnumerablePolicy target{&params, SkipMask::none(params.config.num_layers), prompt_vec, length};
    const size_t total = enumerable_size(target);
    const std::vector<double> target_logprobs = enumerate_sequence_logprobs(target);

    std::vector<double> f_values(total);
    IdentityReport report;
    report.tolerance = tolerance;
    for (size_t i = 0; i < total; ++i) {
        const std::vector<int> completion = sequence_from_index(i, vocab, length);
        f_values[i] = f(completion);
        report.exact_target += std::exp(target_logprobs[i]) * f_values[i];
    }

    double averaged = 0.0;
    std::vector<double> mean_policy(total, 0.0);
    for (const SkipMask& mask : ensemble.masks) {
        const EnumerablePolicy member{&params, mask, prompt_vec, length};
        const std::vector<double> member_logprobs = enumerate_sequence_logprobs(member);
        // sum_seq P_i(seq) * h_i(seq) * f(seq) with h_i = P_pi / P_i
        double weighted = 0.0;
        for (size_t i = 0; i < total; ++i) {
            const double p_i = std::exp(member_logprobs[i]);
            const double h = importance_ratio(target_logprobs[i], member_logprobs[i]);
            weighted += p_i * h * f_values[i];
            mean_policy[i] += p_i;
        }
        report.per_member_error.push_back(std::abs(weighted - report.exact_target));
        averaged += weighted;
    }
    averaged /= static_cast<double>(ensemble.masks.size());
    report.ensemble_average_error = std::abs(averaged - report.exact_target);

    double mass = 0.0;
    for (double p : mean_policy) mass += p;
    mass /= static_cast<double>(ensemble.masks.size());
    report.normalization_error = std::abs(mass - 1.0);

    report.pass = report.ensemble_average_error <= tolerance && report.normalization_error <= tolerance;
    for (double e : report.per_member_error) report.pass = report.pass && e <= tolerance;
    return report;
}

UnbiasednessReport check_unbiasedness(const PolicyParams<double>& params, const EnsembleSpec& ensemble,
                                      std::span<const int> prompt, int length, const SequenceFunctional& f,
                                      size_t n_samples, double tolerance, uint64_t seed, bool unit_weights) {
    if (ensemble.masks.empty()) throw ContractError("ensemble is empty");
    if (n_samples < 2) throw ContractError("need at least 2 samples");
    const std::vector<int> prompt_vec(prompt.begin(), prompt.end());
    const SkipMask no_skip = SkipMask::none(params.config.num_layers);

    UnbiasednessReport report;
    report.samples = n_samples;
    report.tolerance = tolerance;
    report.unit_weights = unit_weights;
    report.exact = exact_expected_value({&params, no_skip, prompt_vec, length}, f);

    Rng rng(derive_seed(seed, SeedScope::kTheory));
    double sum = 0.0, sum_sq = 0.0;
    for (size_t s = 0; s < n_samples; ++s) {
        const size_t member = rng.below(ensemble.masks.size());
        const SampledSequence sample =
            sample_completion(params, prompt_vec, ensemble.masks[member], length, 1.0, 1.0, rng);
        double h = 1.0;
        if (!unit_weights) {
            double behavior_lp = 0.0;
            for (double lp : sample.logprobs) behavior_lp += lp;
            const double target_lp = sequence_logprob(params, sample.seq, no_skip);
            h = importance_ratio(target_lp, behavior_lp);
        }
        const double x = h * f(sample.seq.completion);
        sum += x;
        sum_sq += x * x;
    }
    const double n = static_cast<double>(n_samples);
    report.estimate = sum / n;
    const double variance = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1.0));
    report.standard_error = std::sqrt(variance / n);
    report.pass = std::abs(report.estimate - report.exact) <= std::max(tolerance, 4.0 * report.standard_error);
    return report;
}

VarianceReport check_variance_bound(const PolicyParams<double>& params, const EnsembleSpec& ensemble,
                                    const Mitigation& mitigation, std::span<const int> prompt, int length,
                                    size_t n_samples, uint64_t seed) {
    if (ensemble.masks.empty()) throw ContractError("ensemble is empty");
    if (n_samples < 2) throw ContractError("need at least 2 samples");
    mitigation.validate();
    const std::vector<int> prompt_vec(prompt.begin(), prompt.end());
    const SkipMask no_skip = SkipMask::none(params.config.num_layers);

    VarianceReport report;
    report.mode = mitigation.mode;
    report.lambda = mitigation.lambda;
    report.samples = n_samples;

    Rng rng(derive_seed(seed, SeedScope::kTheory, /*step=*/1));
    double sum = 0.0, sum_sq = 0.0;
    for (size_t s = 0; s < n_samples; ++s) {
        const size_t member = rng.below(ensemble.masks.size());
        const SampledSequence sample =
            sample_completion(params, prompt_vec, ensemble.masks[member], length, 1.0, 1.0, rng);
        double behavior_lp = 0.0;
        for (double lp : sample.logprobs) behavior_lp += lp;
        const double target_lp = sequence_logprob(params, sample.seq, no_skip);
        const WeightResult w = mitigation_weight(mitigation, target_lp, behavior_lp);
        if (w.clamped) ++report.clamped;
        report.max_weight = std::max(report.max_weight, w.weight);
        sum += w.weight;
        sum_sq += w.weight * w.weight;
    }
    const double n = static_cast<double>(n_samples);
    report.mean_weight = sum / n;
    report.variance = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1.0));
    switch (mitigation.mode) {
        case MitigationMode::kRetrace:
            report.pass = report.max_weight <= mitigation.lambda;
            break;
        case MitigationMode::kPractical:
            report.pass = report.variance == 0.0;
            break;
        case MitigationMode::kBase:
            report.pass = std::nullopt;  // boundedness is assumed, only reported
            break;
    }
    return report;
}

PairedVarianceReport paired_variance_comparison(const PolicyParams<double>& params, const EnsembleSpec& ensemble,
                                                double lambda, std::span<const int> prompt, int length,
                                                size_t n_samples, uint64_t seed) {
    if (ensemble.masks.empty()) throw ContractError("ensemble is empty");
    if (n_samples < 2) throw ContractError("need at least 2 samples");
    const std::vector<int> prompt_vec(prompt.begin(), prompt.end());
    const SkipMask no_skip = SkipMask::none(params.config.num_layers);

    PairedVarianceReport report;
    report.samples = n_samples;
    Rng rng(derive_seed(seed, SeedScope::kTheory, /*step=*/2));
    double sum_b = 0.0, sum_b2 = 0.0, sum_r = 0.0, sum_r2 = 0.0;
    for (size_t s = 0; s < n_samples; ++s) {
        const size_t member = rng.below(ensemble.masks.size());
        const SampledSequence sample =
            sample_completion(params, prompt_vec, ensemble.masks[member], length, 1.0, 1.0, rng);
        double behavior_lp = 0.0;
        for (double lp : sample.logprobs) behavior_lp += lp;
        const double target_lp = sequence_logprob(params, sample.seq, no_skip);
        const double base = importance_ratio(target_lp, behavior_lp);
        const double retrace = retrace_weight(lambda, base);
        report.base_max = std::max(report.base_max, base);
        report.retrace_max = std::max(report.retrace_max, retrace);
        sum_b += base;
        sum_b2 += base * base;
        sum_r += retrace;
        sum_r2 += retrace * retrace;
    }
    const double n = static_cast<double>(n_samples);
    report.base_variance = std::max(0.0, (sum_b2 - sum_b * sum_b / n) / (n - 1.0));
    report.retrace_variance = std::max(0.0, (sum_r2 - sum_r * sum_r / n) / (n - 1.0));
    return report;
}

GradientCoordinateFunctional::GradientCoordinateFunctional(const PolicyParams<double>& params, std::vector<int> prompt,
                                                           size_t tensor_index, size_t coordinate,
                                                           SequenceFunctional base)
    : params_(params.clone()), prompt_(std::move(prompt)), tensor_index_(tensor_index), coordinate_(coordinate),
      base_(std::move(base)) {
    auto named = params_.named_tensors();
    if (tensor_index_ >= named.size()) throw IndexError("tensor index out of range");
    if (coordinate_ >= named[tensor_index_].second->size()) throw IndexError("coordinate out of range");
    params_.set_requires_grad(true);
}

double GradientCoordinateFunctional::operator()(std::span<const int> completion) const {
    const double base_value = base_(completion);
    if (base_value == 0.0) return 0.0;
    params_.zero_grad();
    TokenSequence seq;
    seq.prompt = prompt_;
    seq.completion.assign(completion.begin(), completion.end());
    Tape<double> tape;
    Tensor<double> lp = completion_logprobs(tape, params_, seq, SkipMask::none(params_.config.num_layers));
    Tensor<double> total = sum(tape, lp);
    tape.backward(total);
    auto named = params_.named_tensors();
    return base_value * named[tensor_index_].second->grad()[coordinate_];
}

}  // namespace nreft
