#pragma once

#include <stdexcept>
#include <string>

namespace budis {

/// Bad input: malformed data, violated preconditions, inconsistent dimensions.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A fit or sampler failed numerically (non-PD precision, ELBO decrease, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace budis
