#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

/// Invalid configuration or violated precondition on user-supplied shapes.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File system failure while reading inputs or writing results.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-fatal diagnostics (degenerate attacks, fallbacks). Writes to stderr
/// unless silenced.
void log_warning(const std::string& message);
void set_warnings_enabled(bool enabled);

}  // namespace fedsim
