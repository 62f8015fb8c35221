#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "nreft/bench.hpp"
#include "nreft/model.hpp"
#include "nreft/trainer.hpp"

namespace nreft {

// A run is fully described by one structured config: every knob of the
// experiment grid (skip ratio, border, mitigation mode, lambda, group size,
// lengths, steps, seeds) has an explicit key, and a run can be re-executed
// exactly from its stored config.

struct DataConfig {
    int n_train = 4096;
    int n_bench_per_task = 48;
    int k_benchmarks = 2;
};

struct ThroughputConfig {
    int num_prompts = 4;
    int group_size = 4;
    int length = 32;
    int repetitions = 3;
    int border = 1;
    std::vector<double> ratios = {0.0, 0.125, 0.25, 0.375};
};

struct RunConfig {
    std::string run_id = "run";
    std::string out_dir = "runs/run";
    uint64_t seed = 42;
    Precision precision = Precision::kF32;
    std::string init_checkpoint;  // when set, reinforced training starts from this
                                  // checkpoint and the warm-up phase is skipped
    ModelConfig model;
    DataConfig data;
    TrainConfig train;
    DecodeSettings eval;
    ThroughputConfig throughput;

    void finalize();  // propagates seed/precision into sub-configs and validates
};

RunConfig default_run_config();

nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

// Applies "dotted.key=value" onto a config json; unknown keys are rejected.
void apply_override(nlohmann::ordered_json& config, const std::string& assignment);

// Overlays `patch` onto `base`, rejecting keys absent from `base`.
void merge_validated(nlohmann::ordered_json& base, const nlohmann::json& patch, const std::string& path = "");

}  // namespace nreft
