#include "nreft/layer_skip.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nreft/errors.hpp"

namespace nreft {

void SkipConfig::validate() const {
    if (num_layers <= 0) throw ConfigError("num_layers must be positive");
    if (ratio < 0.0 || ratio >= 1.0) throw ConfigError("skip ratio must lie in [0, 1)");
    if (border < 0) throw ConfigError("border must be non-negative");
    if (num_layers - 2 * border <= 0) {
        throw ConfigError("border " + std::to_string(border) + " leaves no valid layers out of " +
                          std::to_string(num_layers));
    }
    skip_count(*this);  // propagates the count-vs-valid-set check
}

std::vector<int> SkipMask::skipped_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < sigma.size(); ++i) {
        if (sigma[i]) out.push_back(static_cast<int>(i));
    }
    return out;
}

std::vector<int> valid_set(const SkipConfig& cfg) {
    if (cfg.num_layers - 2 * cfg.border <= 0) {
        throw ConfigError("valid layer set is empty: num_layers=" + std::to_string(cfg.num_layers) +
                          " border=" + std::to_string(cfg.border));
    }
    std::vector<int> v;
    v.reserve(static_cast<size_t>(cfg.num_layers - 2 * cfg.border));
    for (int i = cfg.border; i <= cfg.num_layers - 1 - cfg.border; ++i) v.push_back(i);
    return v;
}

int skip_count(const SkipConfig& cfg) {
    if (cfg.ratio <= 0.0) return 0;
    const int rounded = static_cast<int>(std::floor(cfg.num_layers * cfg.ratio + 0.5));
    const int count = std::max(1, rounded);
    const int valid = cfg.num_layers - 2 * cfg.border;
    if (count > valid) {
        throw ConfigError("skip count " + std::to_string(count) + " exceeds valid set size " + std::to_string(valid));
    }
    return count;
}

SkipMask sample_mask(const SkipConfig& cfg, Rng& rng) {
    const int count = skip_count(cfg);
    SkipMask mask = SkipMask::none(cfg.num_layers);
    mask.skip_count = count;
    if (count == 0) return mask;

    // partial Fisher-Yates over the valid window: uniform without replacement
    std::vector<int> pool = valid_set(cfg);
    for (int i = 0; i < count; ++i) {
        const size_t j = static_cast<size_t>(i) + rng.below(pool.size() - static_cast<size_t>(i));
        std::swap(pool[static_cast<size_t>(i)], pool[j]);
        mask.sigma[static_cast<size_t>(pool[static_cast<size_t>(i)])] = 1;
    }
    return mask;
}

}  // namespace nreft
