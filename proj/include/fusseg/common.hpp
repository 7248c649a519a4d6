#pragma once

#include <stdexcept>
#include <string>

namespace fusseg {

// Bad inputs, violated preconditions, malformed configs. CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// File system / format failures. CLI maps this to exit code 1.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

} // namespace fusseg
