#pragma once

#include <stdexcept>
#include <string>

namespace grreal {

// Shape disagreement between operands (matrix/vector sizes).
struct dimension_error : std::runtime_error {
    explicit dimension_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (out-of-range hyperparameter, bad period layout, ...).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (CSV rows, unknown segment ids, ...).
struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Structural graph problem (cycles, dangling references).
struct graph_error : std::runtime_error {
    explicit graph_error(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf detected, or a diverging computation.
struct numerical_error : std::runtime_error {
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace grreal
