#pragma once

#include <stdexcept>
#include <string>

namespace qsmash {

// Bad input: malformed files, unknown devices or labels, rule conflicts.
// The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure while a run is executing (oracle misconfiguration, I/O, replay
// mismatch). The CLI maps these to exit code 2.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qsmash
