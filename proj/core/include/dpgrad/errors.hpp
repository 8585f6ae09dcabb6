#ifndef DPGRAD_ERRORS_HPP_
#define DPGRAD_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace dpgrad {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed data: non-finite entries, dimension mismatches, bad wire bytes.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A parameter is outside its documented domain (k > d, sigma < 0, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Config file problems: missing keys, unparsable or unknown keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// sigma == 0 means unbounded privacy loss; callers must handle it explicitly
// rather than receive an infinity that silently propagates.
class InfiniteBudgetError : public Error {
 public:
  using Error::Error;
};

// The requested privacy budget cannot fund any work.
class InfeasibleBudgetError : public Error {
 public:
  using Error::Error;
};

// Internal invariant broke; maps to a distinct process exit code.
class InternalError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InternalError(msg);
}

}  // namespace dpgrad

#endif  // DPGRAD_ERRORS_HPP_
