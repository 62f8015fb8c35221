#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "nreft/mitigation.hpp"
#include "nreft/model.hpp"
#include "nreft/rng.hpp"

using namespace nreft;

TEST_CASE("identical policies give a ratio of one") {
    CHECK(importance_ratio(-3.25, -3.25) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ratio is the product of per-token ratios") {
    // target per-token probs (0.5, 0.4), behavior (0.25, 0.8):
    // (0.5/0.25) * (0.4/0.8) = 2 * 0.5 = 1
    const double target_lp = std::log(0.5) + std::log(0.4);
    const double behavior_lp = std::log(0.25) + std::log(0.8);
    CHECK(importance_ratio(target_lp, behavior_lp) == doctest::Approx(1.0).epsilon(1e-12));

    // log-domain sum equals the explicit per-token product
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        double sum_t = 0.0, sum_b = 0.0, product = 1.0;
        for (int tok = 0; tok < 8; ++tok) {
            const double lt = -0.1 - 3.0 * rng.next_double();
            const double lb = -0.1 - 3.0 * rng.next_double();
            sum_t += lt;
            sum_b += lb;
            product *= std::exp(lt) / std::exp(lb);
        }
        CHECK(importance_ratio(sum_t, sum_b) == doctest::Approx(product).epsilon(1e-6));
    }
}

TEST_CASE("ratio against a one-layer-skipped variant matches direct probability division") {
    ModelConfig cfg;
    cfg.vocab_size = 4;
    cfg.num_layers = 3;
    cfg.width = 8;
    cfg.num_heads = 2;
    cfg.max_sequence_length = 8;
    cfg.ffn_multiple = 2;
    auto params = PolicyParams<double>::random_init(cfg, 77, 0.6);
    SkipMask skipped = SkipMask::none(3);
    skipped.sigma[1] = 1;
    skipped.skip_count = 1;

    TokenSequence seq;
    seq.prompt = {1, 2};
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            seq.completion = {a, b};
            const double lp_target = sequence_logprob(params, seq);
            const double lp_behavior = sequence_logprob(params, seq, skipped);
            const double direct = std::exp(lp_target) / std::exp(lp_behavior);
            CHECK(importance_ratio(lp_target, lp_behavior) == doctest::Approx(direct).epsilon(1e-6));
        }
    }
}

TEST_CASE("non-finite log-probabilities are a numeric error") {
    CHECK_THROWS_AS(importance_ratio(std::numeric_limits<double>::infinity(), -1.0), NumericError);
    CHECK_THROWS_AS(importance_ratio(-1.0, std::numeric_limits<double>::quiet_NaN()), NumericError);
}

TEST_CASE("practical weight is the constant one") {
    CHECK(practical_weight() == 1.0);
    Mitigation practical{MitigationMode::kPractical, 1.0};
    for (double lp : {-0.5, -20.0, -3.7}) {
        CHECK(mitigation_weight(practical, lp, lp * 2.0).weight == 1.0);
    }
}

TEST_CASE("retrace weight clamps then scales") {
    CHECK(retrace_weight(0.9, 2.5) == doctest::Approx(0.9));
    CHECK(retrace_weight(0.9, 0.5) == doctest::Approx(0.45));
    CHECK(retrace_weight(1.0, 1.0) == doctest::Approx(1.0));
}

TEST_CASE("retrace weight is bounded by lambda for any ratio") {
    Rng rng(8);
    for (int trial = 0; trial < 5000; ++trial) {
        const double lambda = 0.05 + 0.95 * rng.next_double();
        const double ratio = std::exp(6.0 * (rng.next_double() - 0.3));
        const double w = retrace_weight(lambda, ratio);
        CHECK(w <= lambda);
        CHECK(w > 0.0);
        CHECK(lambda <= 1.0);
    }
}

TEST_CASE("base mode caps runaway ratios and reports the clamp") {
    Mitigation base{MitigationMode::kBase, 1.0};
    const WeightResult small = mitigation_weight(base, -1.0, -1.5);
    CHECK_FALSE(small.clamped);
    CHECK(small.weight == doctest::Approx(std::exp(0.5)));
    const WeightResult huge = mitigation_weight(base, 0.0, -20.0);
    CHECK(huge.clamped);
    CHECK(huge.weight == kBaseRatioCap);
}

TEST_CASE("on-policy sampled sequences have ratio exactly one") {
    ModelConfig cfg;
    cfg.vocab_size = 6;
    cfg.num_layers = 3;
    cfg.width = 8;
    cfg.num_heads = 2;
    cfg.max_sequence_length = 16;
    cfg.ffn_multiple = 2;
    auto params = PolicyParams<float>::random_init(cfg, 5, 0.4);
    const SkipMask none = SkipMask::none(3);
    Rng rng(19);
    for (int trial = 0; trial < 10; ++trial) {
        const std::vector<int> prompt = {static_cast<int>(rng.below(6))};
        const auto sampled = sample_completion(params, prompt, none, 8, 1.0, 1.0, rng);
        double behavior_lp = 0.0;
        for (double lp : sampled.logprobs) behavior_lp += lp;
        const double target_lp = sequence_logprob(params, sampled.seq, none);
        CHECK(importance_ratio(target_lp, behavior_lp) == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("mode names round-trip") {
    for (MitigationMode mode : {MitigationMode::kBase, MitigationMode::kPractical, MitigationMode::kRetrace}) {
        CHECK(mitigation_mode_from_string(to_string(mode)) == mode);
    }
    CHECK_THROWS_AS(mitigation_mode_from_string("unknown"), ConfigError);
    Mitigation bad{MitigationMode::kRetrace, 0.0};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
