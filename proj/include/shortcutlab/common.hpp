#pragma once

#include <stdexcept>
#include <string>

namespace shortcutlab {

// Error taxonomy. Configuration and data errors are caller mistakes and map to
// CLI exit code 1; the rest map to exit code 2.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace shortcutlab
