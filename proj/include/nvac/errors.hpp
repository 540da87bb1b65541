#pragma once

#include <stdexcept>
#include <string>

namespace nvac {

// Error categories map one-to-one onto CLI exit codes (see tools/).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ComputationError : std::runtime_error {
  explicit ComputationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when the eigenstate labeling rules cannot pick a winner (two overlap
// magnitudes equal within 1e-9); perturb theta slightly to lift the tie.
struct LabelingAmbiguityError : ComputationError {
  explicit LabelingAmbiguityError(const std::string& msg)
      : ComputationError(msg) {}
};

// Fit did not converge, was rejected, or is degenerate (singular normal
// equations); distinguished from ComputationError at the CLI boundary.
struct FitError : std::runtime_error {
  explicit FitError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace nvac
