#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "nreft/rollout.hpp"

using namespace nreft;

namespace {

ModelConfig toy_config() {
    ModelConfig cfg;
    cfg.vocab_size = vocab::kSize;
    cfg.num_layers = 3;
    cfg.width = 16;
    cfg.num_heads = 4;
    cfg.max_sequence_length = 32;
    cfg.ffn_multiple = 2;
    return cfg;
}

}  // namespace

TEST_CASE("zero-mask rollouts reduce to direct target-policy sampling") {
    auto params = PolicyParams<float>::random_init(toy_config(), 3, 0.3);
    auto [train, benches] = generate_dataset(7, 4, 4, 1);
    std::vector<std::vector<int>> prompts;
    for (int i = 0; i < 3; ++i) prompts.push_back(train.problems[static_cast<size_t>(i)].prompt);

    const uint64_t seed = 99;
    const RolloutBatch batch =
        generate_rollouts(params, SkipMask::none(3), prompts, /*G=*/4, /*length=*/8, seed, /*step=*/5);

    // classical on-policy sampling with the same per-prompt streams
    for (size_t i = 0; i < prompts.size(); ++i) {
        Rng rng(derive_seed(seed, SeedScope::kRollout, 5, i));
        for (int g = 0; g < 4; ++g) {
            const auto direct = sample_completion(params, prompts[i], SkipMask::none(3), 8, 1.0, 1.0, rng);
            CHECK(batch.prompts[i].completions[static_cast<size_t>(g)] == direct.seq.completion);
            REQUIRE(batch.prompts[i].behavior_logprobs[static_cast<size_t>(g)].size() == direct.logprobs.size());
            for (size_t t = 0; t < direct.logprobs.size(); ++t) {
                CHECK(batch.prompts[i].behavior_logprobs[static_cast<size_t>(g)][t] == direct.logprobs[t]);
            }
        }
    }
}

TEST_CASE("single prompt, single sample") {
    auto params = PolicyParams<float>::random_init(toy_config(), 3, 0.3);
    const std::vector<std::vector<int>> prompts = {{1, vocab::kPlus, 2, vocab::kEquals}};
    const RolloutBatch batch = generate_rollouts(params, SkipMask::none(3), prompts, 1, 12, 1);
    REQUIRE(batch.prompts.size() == 1);
    REQUIRE(batch.prompts[0].completions.size() == 1);
    CHECK(batch.prompts[0].completions[0].size() == 12);
    CHECK(batch.total_generated_tokens() == 12);
}

TEST_CASE("recorded behavior log-probs match re-evaluation under the batch mask") {
    auto params = PolicyParams<float>::random_init(toy_config(), 11, 0.4);
    SkipMask mask = SkipMask::none(3);
    mask.sigma[1] = 1;
    mask.skip_count = 1;
    const std::vector<std::vector<int>> prompts = {{3, vocab::kPlus, 4, vocab::kEquals},
                                                   {9, vocab::kPlus, 1, vocab::kEquals}};
    const RolloutBatch batch = generate_rollouts(params, mask, prompts, 3, 10, 21);
    for (const auto& pr : batch.prompts) {
        for (size_t g = 0; g < pr.completions.size(); ++g) {
            TokenSequence seq{pr.prompt, pr.completions[g]};
            CHECK(pr.behavior_sequence_logprob(static_cast<int>(g)) ==
                  doctest::Approx(sequence_logprob(params, seq, mask)).epsilon(1e-5));
        }
    }
}

TEST_CASE("rollouts are deterministic and thread-count independent") {
    auto params = PolicyParams<float>::random_init(toy_config(), 13, 0.3);
    auto [train, benches] = generate_dataset(17, 6, 4, 1);
    std::vector<std::vector<int>> prompts;
    for (const auto& p : train.problems) prompts.push_back(p.prompt);

    const RolloutBatch a = generate_rollouts(params, SkipMask::none(3), prompts, 2, 8, 5, 0, /*threads=*/1);
    const RolloutBatch b = generate_rollouts(params, SkipMask::none(3), prompts, 2, 8, 5, 0, /*threads=*/2);
    const RolloutBatch c = generate_rollouts(params, SkipMask::none(3), prompts, 2, 8, 5, 0, /*threads=*/1);
    REQUIRE(a.prompts.size() == b.prompts.size());
    for (size_t i = 0; i < a.prompts.size(); ++i) {
        CHECK(a.prompts[i].completions == b.prompts[i].completions);
        CHECK(a.prompts[i].completions == c.prompts[i].completions);
        CHECK(a.prompts[i].behavior_logprobs == b.prompts[i].behavior_logprobs);
    }
    CHECK(a.total_generated_tokens() == prompts.size() * 2 * 8);
}

TEST_CASE("scoring fills rewards from the reference values") {
    auto params = PolicyParams<float>::random_init(toy_config(), 3, 0.3);
    auto [train, benches] = generate_dataset(31, 8, 4, 1);
    RewardLookup lookup;
    lookup.add(train);

    std::vector<std::vector<int>> prompts = {train.problems[0].prompt, train.problems[1].prompt};
    RolloutBatch batch = generate_rollouts(params, SkipMask::none(3), prompts, 8, 16, 2);

    SUBCASE("random rollouts from an untrained model score zero") {
        score_rollouts(batch, lookup);
        // with 16 tokens of noise the exact-match reward is essentially always 0;
        // verify against the per-completion oracle either way
        for (const auto& pr : batch.prompts) {
            const auto& ref = lookup.reference_value(pr.prompt);
            for (size_t g = 0; g < pr.completions.size(); ++g) {
                CHECK(pr.rewards[g] == reward(pr.completions[g], ref));
            }
        }
    }

    SUBCASE("injecting the reference CoT yields reward one") {
        batch.prompts[0].completions[0] = padded_cot(train.problems[0], 16);
        score_rollouts(batch, lookup);
        CHECK(batch.prompts[0].rewards[0] == 1.0);
    }

    SUBCASE("unknown prompts are a lookup error") {
        batch.prompts[0].prompt = {9, 9, 9, 9, 9};
        CHECK_THROWS_AS(score_rollouts(batch, lookup), LookupError);
    }
}

TEST_CASE("mixed-group rewards match the elementwise oracle") {
    auto [train, benches] = generate_dataset(41, 4, 4, 1);
    RewardLookup lookup;
    lookup.add(train);
    const Problem& p = train.problems[0];

    RolloutBatch batch;
    batch.completion_length = 12;
    batch.mask = SkipMask::none(3);
    PromptRollout pr;
    pr.prompt = p.prompt;
    for (int g = 0; g < 8; ++g) {
        if (g % 3 == 0) {
            pr.completions.push_back(padded_cot(p, 12));
        } else {
            pr.completions.push_back(std::vector<int>(12, vocab::kPad));
        }
        pr.behavior_logprobs.push_back(std::vector<double>(12, -1.0));
    }
    batch.prompts.push_back(pr);
    score_rollouts(batch, lookup);
    for (int g = 0; g < 8; ++g) {
        CHECK(batch.prompts[0].rewards[static_cast<size_t>(g)] == (g % 3 == 0 ? 1.0 : 0.0));
    }
}

TEST_CASE("rollout dump emits one parseable line per completion") {
    auto params = PolicyParams<float>::random_init(toy_config(), 3, 0.3);
    const std::vector<std::vector<int>> prompts = {{1, vocab::kEquals}};
    RolloutBatch batch = generate_rollouts(params, SkipMask::none(3), prompts, 2, 4, 3);
    std::ostringstream out;
    dump_rollouts(batch, out);
    std::istringstream lines(out.str());
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) {
        if (!line.empty()) ++count;
    }
    CHECK(count == 2);
}
