#include "nreft/task.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nreft/errors.hpp"
#include "nreft/rng.hpp"

namespace nreft {

namespace {

std::vector<int> digits_msb_first(long v) {
    if (v == 0) return {0};
    std::vector<int> out;
    while (v > 0) {
        out.push_back(static_cast<int>(v % 10));
        v /= 10;
    }
    std::reverse(out.begin(), out.end());
    return out;
}

struct TierRange {
    long lo, hi;
};

TierRange tier_range(int tier) {
    if (tier == 0) return {0, 9};
    long lo = 1;
    for (int i = 0; i < tier; ++i) lo *= 10;
    return {lo, lo * 10 - 1};
}

}  // namespace

Problem make_problem(long a, long b) {
    if (a < 0 || b < 0) throw ContractError("operands must be non-negative");
    Problem p;
    for (int d : digits_msb_first(a)) p.prompt.push_back(d);
    p.prompt.push_back(vocab::kPlus);
    for (int d : digits_msb_first(b)) p.prompt.push_back(d);
    p.prompt.push_back(vocab::kEquals);

    // column-wise decomposition, least-significant digit first
    const size_t columns = std::max(digits_msb_first(a).size(), digits_msb_first(b).size());
    long ra = a, rb = b;
    int carry = 0;
    for (size_t i = 0; i < columns; ++i) {
        const int s = static_cast<int>(ra % 10 + rb % 10) + carry;
        ra /= 10;
        rb /= 10;
        carry = s / 10;
        p.cot.push_back(s % 10);
        p.cot.push_back(carry);
        p.value.push_back(s % 10);
    }
    if (carry > 0) {
        p.cot.push_back(carry);
        p.value.push_back(carry);
    }
    p.cot.push_back(vocab::kAnswer);
    for (int d : p.value) p.cot.push_back(d);
    return p;
}

std::pair<Dataset, std::vector<Dataset>> generate_dataset(uint64_t seed, int n_train, int n_bench_per_task,
                                                          int k_benchmarks) {
    if (n_train < 1 || n_bench_per_task < 1) throw ContractError("n_train and n_bench_per_task must be >= 1");
    if (k_benchmarks < 1 || k_benchmarks > 3) throw ConfigError("k_benchmarks must be in [1, 3]");

    std::vector<Dataset> benchmarks;
    std::set<std::vector<int>> bench_prompts;
    for (int k = 0; k < k_benchmarks; ++k) {
        const TierRange range = tier_range(k);
        const long span = range.hi - range.lo + 1;
        if (static_cast<long>(n_bench_per_task) > span * span) {
            throw ConfigError("n_bench_per_task exceeds the tier " + std::to_string(k) + " problem space");
        }
        Rng rng(derive_seed(seed, SeedScope::kDataset, /*step=*/1, static_cast<uint64_t>(k)));
        Dataset bench;
        bench.split = "bench" + std::to_string(k);
        bench.seed = seed;
        std::set<std::pair<long, long>> used;
        while (static_cast<int>(bench.problems.size()) < n_bench_per_task) {
            const long a = range.lo + static_cast<long>(rng.below(static_cast<uint64_t>(span)));
            const long b = range.lo + static_cast<long>(rng.below(static_cast<uint64_t>(span)));
            if (!used.insert({a, b}).second) continue;
            bench.problems.push_back(make_problem(a, b));
            bench_prompts.insert(bench.problems.back().prompt);
        }
        benchmarks.push_back(std::move(bench));
    }

    Dataset train;
    train.split = "train";
    train.seed = seed;
    Rng rng(derive_seed(seed, SeedScope::kDataset, /*step=*/0, 0));
    int tier = 0;
    long guard = 0;
    while (static_cast<int>(train.problems.size()) < n_train) {
        const TierRange range = tier_range(tier);
        tier = (tier + 1) % k_benchmarks;  // round-robin over tiers for coverage
        const long span = range.hi - range.lo + 1;
        const long a = range.lo + static_cast<long>(rng.below(static_cast<uint64_t>(span)));
        const long b = range.lo + static_cast<long>(rng.below(static_cast<uint64_t>(span)));
        Problem p = make_problem(a, b);
        if (bench_prompts.count(p.prompt)) {
            if (++guard > 1000000) throw ConfigError("unable to draw train problems disjoint from benchmarks");
            continue;
        }
        train.problems.push_back(std::move(p));
    }
    return {std::move(train), std::move(benchmarks)};
}

std::optional<std::vector<int>> extract_value(std::span<const int> completion, int answer_token, int digit_count) {
    // last delimiter wins
    long pos = -1;
    for (size_t i = 0; i < completion.size(); ++i) {
        if (completion[i] == answer_token) pos = static_cast<long>(i);
    }
    if (pos < 0) return std::nullopt;
    std::vector<int> span;
    for (size_t i = static_cast<size_t>(pos) + 1; i < completion.size(); ++i) {
        if (completion[i] < 0 || completion[i] >= digit_count) break;
        span.push_back(completion[i]);
    }
    if (span.empty()) return std::nullopt;
    return span;
}

std::optional<std::vector<int>> extract_value(std::span<const int> completion) {
    return extract_value(completion, vocab::kAnswer, 10);
}

double reward(std::span<const int> completion, std::span<const int> reference_value, int answer_token,
              int digit_count) {
    const auto extracted = extract_value(completion, answer_token, digit_count);
    if (!extracted) return 0.0;
    if (extracted->size() != reference_value.size()) return 0.0;
    return std::equal(extracted->begin(), extracted->end(), reference_value.begin()) ? 1.0 : 0.0;
}

double reward(std::span<const int> completion, std::span<const int> reference_value) {
    return reward(completion, reference_value, vocab::kAnswer, 10);
}

double benchmark_accuracy(const Dataset& benchmark, std::span<const std::vector<int>> completions) {
    if (benchmark.problems.empty()) throw ContractError("benchmark is empty");
    if (completions.size() != benchmark.problems.size()) throw ContractError("one completion per problem required");
    double correct = 0.0;
    for (size_t i = 0; i < completions.size(); ++i) {
        correct += reward(completions[i], benchmark.problems[i].value);
    }
    return correct / static_cast<double>(benchmark.problems.size());
}

double aggregate_accuracy(std::span<const double> per_benchmark) {
    if (per_benchmark.empty()) throw ContractError("no benchmark accuracies to aggregate");
    double s = 0.0;
    for (double a : per_benchmark) s += a;
    return s / static_cast<double>(per_benchmark.size());
}

std::vector<int> padded_cot(const Problem& p, int length) {
    if (static_cast<int>(p.cot.size()) > length) {
        throw ContractError("chain of thought (" + std::to_string(p.cot.size()) + " tokens) exceeds completion length " +
                            std::to_string(length));
    }
    std::vector<int> out = p.cot;
    out.resize(static_cast<size_t>(length), vocab::kPad);
    return out;
}

void RewardLookup::add(const Dataset& dataset) {
    for (const Problem& p : dataset.problems) by_prompt_[p.prompt] = p.value;
}

const std::vector<int>& RewardLookup::reference_value(std::span<const int> prompt) const {
    const std::vector<int> key(prompt.begin(), prompt.end());
    auto it = by_prompt_.find(key);
    if (it == by_prompt_.end()) throw LookupError("prompt has no reference value");
    return it->second;
}

void export_dataset(const Dataset& dataset, std::ostream& out) {
    nlohmann::ordered_json header;
    header["split"] = dataset.split;
    header["seed"] = dataset.seed;
    header["count"] = dataset.problems.size();
    out << header.dump() << "\n";
    for (const Problem& p : dataset.problems) {
        nlohmann::ordered_json line;
        line["prompt"] = p.prompt;
        line["cot"] = p.cot;
        line["value"] = p.value;
        out << line.dump() << "\n";
    }
}

Dataset import_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ContractError("dataset stream is empty");
    const auto header = nlohmann::json::parse(line);
    Dataset dataset;
    dataset.split = header.at("split").get<std::string>();
    dataset.seed = header.at("seed").get<uint64_t>();
    const size_t count = header.at("count").get<size_t>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        Problem p;
        p.prompt = j.at("prompt").get<std::vector<int>>();
        p.cot = j.at("cot").get<std::vector<int>>();
        p.value = j.at("value").get<std::vector<int>>();
        dataset.problems.push_back(std::move(p));
    }
    if (dataset.problems.size() != count) throw ContractError("dataset record count does not match header");
    return dataset;
}

void export_dataset_file(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ContractError("cannot open " + path + " for writing");
    export_dataset(dataset, out);
}

Dataset import_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open " + path);
    return import_dataset(in);
}

}  // namespace nreft
