#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nreft {

// One line of the append-only run log. Deterministic fields (everything a
// rerun must reproduce byte-for-byte) go to metrics.jsonl; wall-clock derived
// fields go to a timing.jsonl sidecar so the metrics log stays reproducible.

struct MetricsRecord {
    std::string run_id;
    long step = 0;
    std::string phase;  // sft | reft | eval | throughput
    std::optional<double> loss;
    std::optional<double> mean_reward;
    std::vector<int> skip_indices;
    std::string mitigation_mode;
    double lambda = 1.0;
    long clamp_count = 0;
    std::optional<double> accuracy;
    std::optional<std::vector<double>> accuracy_per_benchmark;
    // timing sidecar fields
    double tokens_per_sec = 0.0;
    double wall_seconds = 0.0;

    std::string deterministic_line() const;
    std::string timing_line() const;
    static MetricsRecord parse_deterministic(const std::string& line);
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

// Append-only writer; one flushed line per record so every prefix of the log
// parses in isolation. Enforces strictly increasing steps within a phase.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& directory);
    void write(const MetricsRecord& record);
    MetricsSink sink();

private:
    std::ofstream metrics_;
    std::ofstream timing_;
    std::map<std::string, long> last_step_;
};

std::vector<MetricsRecord> read_metrics_file(const std::string& path);

}  // namespace nreft
