#include "nreft/config.hpp"

#include <fstream>

#include "nreft/errors.hpp"
#include "nreft/task.hpp"

namespace nreft {

void RunConfig::finalize() {
    model.vocab_size = vocab::kSize;
    model.precision = precision;
    train.seed = seed;
    eval.seed = seed;
    model.validate();
    train.validate();
    if (data.n_train < 1 || data.n_bench_per_task < 1) throw ConfigError("dataset sizes must be >= 1");
    // the fixed-length contract must leave room for prompt + completion
    // (tier t operands have t+1 digits, so the widest prompt is 2*(k) + 2)
    const int max_prompt = 2 * data.k_benchmarks + 2;
    if (max_prompt + train.completion_length > model.max_sequence_length) {
        throw ConfigError("max_sequence_length too small for prompt plus completion_length");
    }
    SkipConfig skip = train.skip_config(model.num_layers);
    skip.validate();
    if (run_id.empty()) throw ConfigError("run_id must not be empty");
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.finalize();
    return cfg;
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["run_id"] = cfg.run_id;
    j["out_dir"] = cfg.out_dir;
    j["seed"] = cfg.seed;
    j["precision"] = to_string(cfg.precision);
    j["init_checkpoint"] = cfg.init_checkpoint;
    j["model"]["num_layers"] = cfg.model.num_layers;
    j["model"]["width"] = cfg.model.width;
    j["model"]["num_heads"] = cfg.model.num_heads;
    j["model"]["max_sequence_length"] = cfg.model.max_sequence_length;
    j["model"]["ffn_multiple"] = cfg.model.ffn_multiple;
    j["data"]["n_train"] = cfg.data.n_train;
    j["data"]["n_bench_per_task"] = cfg.data.n_bench_per_task;
    j["data"]["k_benchmarks"] = cfg.data.k_benchmarks;
    j["train"]["sft_epochs"] = cfg.train.sft_epochs;
    j["train"]["reft_steps"] = cfg.train.reft_steps;
    j["train"]["batch_size"] = cfg.train.batch_size;
    j["train"]["group_size"] = cfg.train.group_size;
    j["train"]["completion_length"] = cfg.train.completion_length;
    j["train"]["lr"] = cfg.train.adam.lr;
    j["train"]["sft_lr"] = cfg.train.sft_lr;
    j["train"]["beta1"] = cfg.train.adam.beta1;
    j["train"]["beta2"] = cfg.train.adam.beta2;
    j["train"]["eps"] = cfg.train.adam.eps;
    j["train"]["schedule"] = to_string(cfg.train.schedule);
    j["train"]["kl_beta"] = cfg.train.kl_beta;
    j["train"]["rollout_threads"] = cfg.train.rollout_threads;
    j["skip"]["ratio"] = cfg.train.skip_ratio;
    j["skip"]["border"] = cfg.train.skip_border;
    j["mitigation"]["mode"] = to_string(cfg.train.mitigation.mode);
    j["mitigation"]["lambda"] = cfg.train.mitigation.lambda;
    j["eval"]["temperature"] = cfg.eval.temperature;
    j["eval"]["top_p"] = cfg.eval.top_p;
    j["throughput"]["num_prompts"] = cfg.throughput.num_prompts;
    j["throughput"]["group_size"] = cfg.throughput.group_size;
    j["throughput"]["length"] = cfg.throughput.length;
    j["throughput"]["repetitions"] = cfg.throughput.repetitions;
    j["throughput"]["border"] = cfg.throughput.border;
    j["throughput"]["ratios"] = cfg.throughput.ratios;
    return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    cfg.run_id = j.at("run_id").get<std::string>();
    cfg.out_dir = j.at("out_dir").get<std::string>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.precision = precision_from_string(j.at("precision").get<std::string>());
    cfg.init_checkpoint = j.at("init_checkpoint").get<std::string>();
    const auto& m = j.at("model");
    cfg.model.num_layers = m.at("num_layers").get<int>();
    cfg.model.width = m.at("width").get<int>();
    cfg.model.num_heads = m.at("num_heads").get<int>();
    cfg.model.max_sequence_length = m.at("max_sequence_length").get<int>();
    cfg.model.ffn_multiple = m.at("ffn_multiple").get<int>();
    const auto& d = j.at("data");
    cfg.data.n_train = d.at("n_train").get<int>();
    cfg.data.n_bench_per_task = d.at("n_bench_per_task").get<int>();
    cfg.data.k_benchmarks = d.at("k_benchmarks").get<int>();
    const auto& t = j.at("train");
    cfg.train.sft_epochs = t.at("sft_epochs").get<int>();
    cfg.train.reft_steps = t.at("reft_steps").get<int>();
    cfg.train.batch_size = t.at("batch_size").get<int>();
    cfg.train.group_size = t.at("group_size").get<int>();
    cfg.train.completion_length = t.at("completion_length").get<int>();
    cfg.train.adam.lr = t.at("lr").get<double>();
    cfg.train.sft_lr = t.at("sft_lr").get<double>();
    cfg.train.adam.beta1 = t.at("beta1").get<double>();
    cfg.train.adam.beta2 = t.at("beta2").get<double>();
    cfg.train.adam.eps = t.at("eps").get<double>();
    cfg.train.schedule = lr_schedule_from_string(t.at("schedule").get<std::string>());
    cfg.train.kl_beta = t.at("kl_beta").get<double>();
    cfg.train.rollout_threads = t.at("rollout_threads").get<int>();
    const auto& s = j.at("skip");
    cfg.train.skip_ratio = s.at("ratio").get<double>();
    cfg.train.skip_border = s.at("border").get<int>();
    const auto& mit = j.at("mitigation");
    cfg.train.mitigation.mode = mitigation_mode_from_string(mit.at("mode").get<std::string>());
    cfg.train.mitigation.lambda = mit.at("lambda").get<double>();
    const auto& e = j.at("eval");
    cfg.eval.temperature = e.at("temperature").get<double>();
    cfg.eval.top_p = e.at("top_p").get<double>();
    const auto& tp = j.at("throughput");
    cfg.throughput.num_prompts = tp.at("num_prompts").get<int>();
    cfg.throughput.group_size = tp.at("group_size").get<int>();
    cfg.throughput.length = tp.at("length").get<int>();
    cfg.throughput.repetitions = tp.at("repetitions").get<int>();
    cfg.throughput.border = tp.at("border").get<int>();
    cfg.throughput.ratios = tp.at("ratios").get<std::vector<double>>();
    cfg.finalize();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    nlohmann::ordered_json base = to_json(RunConfig{});
    nlohmann::json file = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
    merge_validated(base, file);
    return run_config_from_json(base);
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    out << to_json(cfg).dump(2) << "\n";
}

void merge_validated(nlohmann::ordered_json& base, const nlohmann::json& patch, const std::string& path) {
    if (!patch.is_object()) throw ConfigError("config section '" + (path.empty() ? "<root>" : path) + "' must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key_path = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key_path + "'");
        if (base[it.key()].is_object() && it->is_object()) {
            nlohmann::ordered_json sub = base[it.key()];
            merge_validated(sub, *it, key_path);
            base[it.key()] = sub;
        } else {
            base[it.key()] = *it;
        }
    }
}

void apply_override(nlohmann::ordered_json& config, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
    const std::string key_path = assignment.substr(0, eq);
    const std::string raw_value = assignment.substr(eq + 1);

    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw_value);
    } catch (const nlohmann::json::parse_error&) {
        value = raw_value;  // unquoted strings (e.g. mode=retrace)
    }

    nlohmann::ordered_json* node = &config;
    size_t start = 0;
    while (true) {
        const size_t dot = key_path.find('.', start);
        const std::string key = key_path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->contains(key)) throw ConfigError("unknown config key '" + key_path + "'");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

}  // namespace nreft
