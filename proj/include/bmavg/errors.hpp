#pragma once

#include <stdexcept>
#include <string>

namespace bmavg {

/// Invalid user input. `field()` names the offending parameter when known.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& message, std::string field = {})
      : std::invalid_argument(message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A numerical procedure failed: non-convergence, non-PSD input, etc.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unregularized solve hit a singular system; retry with lambda > 0.
class SingularSystemError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace bmavg
