#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dagan {

// Global numeric precision. f64 is used for gradient checks and oracles,
// f32 for training runs. The flag applies process-wide; values are always
// held in doubles in memory, but in f32 mode every op output, gradient
// accumulation and optimizer state is rounded through IEEE single
// precision, and checkpoints are written with 4-byte payloads.
enum class Precision { f64, f32 };

Precision default_precision();
void set_default_precision(Precision p);

// Rounds v through the active precision.
inline double apply_precision(double v) {
    return default_precision() == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

// Configuration / input validation problems. CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A required upstream artifact (manifest, checkpoint, ...) is missing. Exit code 3.
struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values or a numerically failed run. Exit code 4.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace dagan
