#include "nreft/metrics.hpp"

#include <filesystem>

#include <json.hpp>

#include "nreft/errors.hpp"

namespace nreft {

std::string MetricsRecord::deterministic_line() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["step"] = step;
    j["phase"] = phase;
    if (loss) j["loss"] = *loss;
    if (mean_reward) j["mean_reward"] = *mean_reward;
    j["skip_indices"] = skip_indices;
    j["mode"] = mitigation_mode;
    j["lambda"] = lambda;
    j["clamp_count"] = clamp_count;
    if (accuracy) j["accuracy"] = *accuracy;
    if (accuracy_per_benchmark) j["accuracy_per_benchmark"] = *accuracy_per_benchmark;
    return j.dump();
}

std::string MetricsRecord::timing_line() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["step"] = step;
    j["phase"] = phase;
    j["tokens_per_sec"] = tokens_per_sec;
    j["wall_seconds"] = wall_seconds;
    return j.dump();
}

MetricsRecord MetricsRecord::parse_deterministic(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    MetricsRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.step = j.at("step").get<long>();
    r.phase = j.at("phase").get<std::string>();
    if (j.contains("loss")) r.loss = j.at("loss").get<double>();
    if (j.contains("mean_reward")) r.mean_reward = j.at("mean_reward").get<double>();
    r.skip_indices = j.at("skip_indices").get<std::vector<int>>();
    r.mitigation_mode = j.at("mode").get<std::string>();
    r.lambda = j.at("lambda").get<double>();
    r.clamp_count = j.at("clamp_count").get<long>();
    if (j.contains("accuracy")) r.accuracy = j.at("accuracy").get<double>();
    if (j.contains("accuracy_per_benchmark")) {
        r.accuracy_per_benchmark = j.at("accuracy_per_benchmark").get<std::vector<double>>();
    }
    return r;
}

MetricsWriter::MetricsWriter(const std::string& directory) {
    std::filesystem::create_directories(directory);
    const auto metrics_path = std::filesystem::path(directory) / "metrics.jsonl";
    const auto timing_path = std::filesystem::path(directory) / "timing.jsonl";
    metrics_.open(metrics_path, std::ios::app);
    timing_.open(timing_path, std::ios::app);
    if (!metrics_ || !timing_) throw ContractError("cannot open log files under " + directory);
}

void MetricsWriter::write(const MetricsRecord& record) {
    auto it = last_step_.find(record.phase);
    if (it != last_step_.end() && record.step <= it->second) {
        throw ContractError("step " + std::to_string(record.step) + " does not increase within phase " + record.phase);
    }
    last_step_[record.phase] = record.step;
    metrics_ << record.deterministic_line() << "\n";
    metrics_.flush();
    timing_ << record.timing_line() << "\n";
    timing_.flush();
}

MetricsSink MetricsWriter::sink() {
    return [this](const MetricsRecord& r) { write(r); };
}

std::vector<MetricsRecord> read_metrics_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(MetricsRecord::parse_deterministic(line));
    }
    return out;
}

}  // namespace nreft
