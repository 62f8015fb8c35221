#include "nreft/mitigation.hpp"

#include <algorithm>
#include <cmath>

#include "nreft/errors.hpp"

namespace nreft {

const char* to_string(MitigationMode mode) {
    switch (mode) {
        case MitigationMode::kBase: return "base";
        case MitigationMode::kPractical: return "practical";
        case MitigationMode::kRetrace: return "retrace";
    }
    return "?";
}

MitigationMode mitigation_mode_from_string(const std::string& s) {
    if (s == "base") return MitigationMode::kBase;
    if (s == "practical") return MitigationMode::kPractical;
    if (s == "retrace") return MitigationMode::kRetrace;
    throw ConfigError("unknown mitigation mode '" + s + "' (expected base, practical or retrace)");
}

void Mitigation::validate() const {
    if (mode == MitigationMode::kRetrace && (!(lambda > 0.0) || lambda > 1.0)) {
        throw ConfigError("retrace lambda must lie in (0, 1]");
    }
}

double importance_ratio(double target_logprob, double behavior_logprob) {
    if (!std::isfinite(target_logprob) || !std::isfinite(behavior_logprob)) {
        throw NumericError("importance ratio requires finite log-probabilities");
    }
    return std::exp(target_logprob - behavior_logprob);
}

double retrace_weight(double lambda, double base_ratio) {
    return lambda * std::min(1.0, base_ratio);
}

WeightResult mitigation_weight(const Mitigation& m, double target_logprob, double behavior_logprob) {
    switch (m.mode) {
        case MitigationMode::kPractical:
            return {practical_weight(), false};
        case MitigationMode::kRetrace:
            return {retrace_weight(m.lambda, importance_ratio(target_logprob, behavior_logprob)), false};
        case MitigationMode::kBase: {
            const double ratio = importance_ratio(target_logprob, behavior_logprob);
            if (ratio > kBaseRatioCap) return {kBaseRatioCap, true};
            return {ratio, false};
        }
    }
    return {1.0, false};
}

}  // namespace nreft
