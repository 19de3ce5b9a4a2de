#pragma once

#include <stdexcept>
#include <string>

namespace robhedge {

/// Invalid configuration or input data (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure failed to produce a trustworthy answer (CLI exit code 3).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Solution blew up; `time()` is the first grid time where the state overflowed.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, double time) : NumericError(what), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// The truncation level admits no standardizing matrix.
class InfeasibleTruncation : public NumericError {
 public:
  InfeasibleTruncation(const std::string& what, double residual)
      : NumericError(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace robhedge
