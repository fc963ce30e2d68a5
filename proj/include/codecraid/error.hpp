#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace codecraid {

// Bad input from the user: missing files, malformed manifests, invalid
// parameters. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure while doing the work: transcoder crashes, divergence, I/O on
// outputs. The CLI maps this to exit code 3.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace log {

inline bool& quiet() {
  static bool q = false;
  return q;
}

inline void warn(const std::string& msg) {
  if (!quiet()) std::clog << "warning: " << msg << '\n';
}

inline void info(const std::string& msg) {
  if (!quiet()) std::clog << msg << '\n';
}

}  // namespace log
}  // namespace codecraid
