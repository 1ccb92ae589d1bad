#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmtl {

using Shape = std::vector<int>;

// Shape/axis mismatches between tensors fed to an operation.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition (non-scalar loss, empty
// confusion matrix, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration value (lambda outside [0,1], step <= 0, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace rmtl
