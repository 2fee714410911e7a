#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tdm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Runtime failure carrying the module that raised it, so the CLI can name it.
struct Error : std::runtime_error {
    Error(std::string mod, const std::string& msg)
        : std::runtime_error(mod + ": " + msg), module(std::move(mod)) {}
    std::string module;
};

// Fixed-point iteration of an implicit Euler step stopped making progress.
struct ContractionError : Error {
    ContractionError(std::string mod, const std::string& msg, long step, long sample = -1)
        : Error(std::move(mod), msg), step_index(step), sample_index(sample) {}
    long step_index;
    long sample_index;
};

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace tdm
