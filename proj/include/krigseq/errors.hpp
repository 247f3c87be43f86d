#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace krigseq {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point lies outside the problem's physical Domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent sizes, invalid parameter values, and the like.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A correlation matrix could not be factorized even after nugget escalation,
/// or a pivot fell below the duplicate-point guard.
class ConditioningError : public Error {
 public:
  ConditioningError(const std::string& msg, double final_nugget)
      : Error(msg), final_nugget(final_nugget) {}
  double final_nugget;
};

/// The trend matrix is rank deficient.
class TrendError : public Error {
 public:
  using Error::Error;
};

/// Adding a point that coincides with an existing design point.
class DegenerateUpdateError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment configuration (unknown names, bad counts). CLI exit 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A simulator call or an experiment step failed at runtime. CLI exit 3.
class RunError : public Error {
 public:
  using Error::Error;
};

/// No feasible allocation under the time budget.
class BudgetError : public Error {
 public:
  using Error::Error;
};

/// LOO-CV diagnostics unusable (e.g. nonpositive variance increment).
class DiagnosticsError : public Error {
 public:
  using Error::Error;
};

/// A synthetic benchmark function could not be calibrated.
class ConstructionError : public Error {
 public:
  using Error::Error;
};

/// File I/O failure; message names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Debug channel: diagnostic notes (clamped variances, escalated nuggets, ...)
/// go to the registered sink instead of polluting return values. The default
/// sink drops everything.
void set_debug_sink(std::function<void(const std::string&)> sink);
void debug_log(const std::string& message);

}  // namespace krigseq
