#pragma once

#include <stdexcept>
#include <string>

namespace stuq {

// Bad user input: malformed files, inconsistent shapes, out-of-range knobs.
// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: NaN/Inf state, diverged training or sampling.
// The CLI maps this to exit code 2.
class DivergenceError : public std::runtime_error {
public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace stuq
