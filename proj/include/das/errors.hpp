#pragma once

#include <stdexcept>
#include <string>

namespace das {

// Bad user input: malformed config files, inconsistent shapes in files,
// impossible scene constraints. CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, diverged optimization, behind-camera geometry.
// CLI maps this to exit code 2.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace das
