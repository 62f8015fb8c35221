#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nreft {

// Synthetic verifiable reasoning task: multi-digit addition rendered over a
// small closed vocabulary. A problem "a + b = ?" has a one-line chain of
// thought (column-wise digit/carry decomposition, least-significant first)
// followed by a delimited answer, so a deterministic extractor can score
// completions with an exact-match reward.

namespace vocab {
// ids 0..9 are the digit tokens
inline constexpr int kPlus = 10;
inline constexpr int kEquals = 11;
inline constexpr int kAnswer = 12;  // answer delimiter
inline constexpr int kPad = 13;
inline constexpr int kSize = 14;

inline bool is_digit(int id) { return id >= 0 && id <= 9; }
}  // namespace vocab

struct Problem {
    std::vector<int> prompt;     // digits(a) + '+' + digits(b) + '='
    std::vector<int> cot;        // column steps, answer delimiter, value digits (unpadded)
    std::vector<int> value;      // canonical answer digits, least-significant first

    bool operator==(const Problem&) const = default;
};

struct Dataset {
    std::vector<Problem> problems;
    std::string split;  // "train" or "bench<k>"
    uint64_t seed = 0;

    bool operator==(const Dataset&) const = default;
};

// Builds the problem for a + b. Operands must be non-negative.
Problem make_problem(long a, long b);

// Deterministic dataset generation. Benchmark k draws operands from
// difficulty tier k (tier 0: [0,9], tier 1: [10,99], tier 2: [100,999]);
// benchmark problems are unique and the train split never shares a prompt
// with any benchmark. Train problems mix all tiers and may repeat.
std::pair<Dataset, std::vector<Dataset>> generate_dataset(uint64_t seed, int n_train, int n_bench_per_task,
                                                          int k_benchmarks);

// Answer span following the LAST answer delimiter: consecutive digit tokens
// up to the first non-digit. Absent when no delimiter exists or the span is
// empty. Padding after the answer is ignored by construction.
// The overloads with explicit `answer_token` / `digit_count` support reduced
// vocabularies (enumerable micro-models use e.g. 4 digits + delimiter + pad).
std::optional<std::vector<int>> extract_value(std::span<const int> completion);
std::optional<std::vector<int>> extract_value(std::span<const int> completion, int answer_token, int digit_count);

// 1.0 iff the extracted value exists and exactly equals the reference.
double reward(std::span<const int> completion, std::span<const int> reference_value);
double reward(std::span<const int> completion, std::span<const int> reference_value, int answer_token,
              int digit_count);

// a_k over one benchmark given one completion per problem; throws
// ContractError on an empty benchmark or a count mismatch.
double benchmark_accuracy(const Dataset& benchmark, std::span<const std::vector<int>> completions);

// a = mean over the per-benchmark accuracies.
double aggregate_accuracy(std::span<const double> per_benchmark);

// CoT padded with kPad to exactly `length` (throws ContractError if the CoT
// does not fit); this is the teacher-forcing target for fixed-length training.
std::vector<int> padded_cot(const Problem& p, int length);

// prompt -> reference value, for scoring rollouts
class RewardLookup {
public:
    void add(const Dataset& dataset);
    const std::vector<int>& reference_value(std::span<const int> prompt) const;  // throws LookupError

private:
    std::map<std::vector<int>, std::vector<int>> by_prompt_;
};

// Line-delimited export/import; round-trips exactly.
void export_dataset(const Dataset& dataset, std::ostream& out);
Dataset import_dataset(std::istream& in);
void export_dataset_file(const Dataset& dataset, const std::string& path);
Dataset import_dataset_file(const std::string& path);

}  // namespace nreft
