#pragma once

#include <stdexcept>
#include <string>

namespace flowreg {

//! Malformed inputs: shape mismatches, bad indices, schema violations.
struct StructuralError : std::runtime_error {
  explicit StructuralError(const std::string& msg) : std::runtime_error(msg) {}
};

//! NaN/Inf propagation or loss of numerical validity during computation.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

//! Invalid configuration values (hyperparameters, config files, CLI options).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace flowreg
