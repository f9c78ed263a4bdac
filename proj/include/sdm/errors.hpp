#pragma once

#include <stdexcept>
#include <string>

namespace sdm {

// Thrown on contract violations: bad arguments, shape mismatches, invalid
// configuration. CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on file problems: missing files, size mismatches, malformed headers.
// CLI maps this to exit code 2.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sdm
