#pragma once

// Error taxonomy shared by all modules. The CLI maps these to process exit
// codes: ConfigError -> 2, NumericError -> 3, InvariantError -> 4.

#include <stdexcept>
#include <string>

namespace rehom {

// Bad or inconsistent user input: scenario files, parameter ranges,
// resolution-rule violations, resource caps.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Requested sizes exceed configured memory caps.
class ResourceError : public ConfigError {
public:
  explicit ResourceError(const std::string& msg) : ConfigError(msg) {}
};

// Numerical failure: solver non-convergence, loss of coercivity,
// NaN/blow-up during time stepping.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// A structural invariant that should hold by construction was violated.
class InvariantError : public std::runtime_error {
public:
  explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rehom
