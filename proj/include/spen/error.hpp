#pragma once

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spen {

// Bad user input: malformed files, unknown config keys, missing paths.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric failure inside a run: NaN/Inf losses or gradients, shape mismatches.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename... Args>
std::string msg_cat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << args);
  return oss.str();
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw NumericError(msg);
}

inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

inline void check_finite(const std::vector<double>& v, const std::string& what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(msg_cat("non-finite value in ", what));
    }
  }
}

inline void check_finite(double x, const std::string& what) {
  if (!std::isfinite(x)) {
    throw NumericError(msg_cat("non-finite value in ", what));
  }
}

}  // namespace spen
