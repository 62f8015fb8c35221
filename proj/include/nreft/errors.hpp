#pragma once

#include <stdexcept>
#include <string>

namespace nreft {

// Error taxonomy shared by all modules. Everything derives from std::runtime_error
// so callers that do not care about the category can still catch one type.

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error("index error: " + msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("configuration error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct LookupError : std::runtime_error {
    explicit LookupError(const std::string& msg) : std::runtime_error("lookup error: " + msg) {}
};

struct TrainingError : std::runtime_error {
    TrainingError(const std::string& msg, long step)
        : std::runtime_error("training error at step " + std::to_string(step) + ": " + msg), step_index(step) {}
    long step_index;
};

}  // namespace nreft
