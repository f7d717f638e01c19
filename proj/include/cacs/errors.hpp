#pragma once

#include <stdexcept>
#include <string>

namespace cacs {

/// I/O failure: missing file, unreadable or unwritable path. CLI exit code 2.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Contract violation: malformed header, shape mismatch, out-of-range value,
/// numeric domain error. CLI exit code 3.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cacs
