#pragma once

#include <stdexcept>
#include <string>

namespace bicap {

/// Invalid or inconsistent run configuration. CLI exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file (bad magic, truncated payload, non-finite values).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Data violates an experimental protocol rule, e.g. train/test class overlap.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Training produced a non-finite value. CLI exit status 3.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::string diagnostic)
      : std::runtime_error(what), diagnostic_(std::move(diagnostic)) {}

  const std::string& diagnostic() const noexcept { return diagnostic_; }

 private:
  std::string diagnostic_;
};

inline void expects(bool condition, const char* message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace bicap
