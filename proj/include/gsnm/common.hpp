// Shared error types and small helpers.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsnm {

// Input data violates the cohort contract (gaps, post-death fields, ...).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed configuration (unknown family, bad grid, missing field, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Estimation cannot proceed (no bracket, empty inclusion set, ...).
struct EstimationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double positive_part(double b) { return b > 0.0 ? b : 0.0; }

// 64-bit FNV-1a, used for config digests in run manifests.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace gsnm
