#pragma once

#include <stdexcept>
#include <string>

namespace taue {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition or invariant violation on an argument (shape, range, finiteness).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Configuration rejected during parsing or validation. `path` names the field,
// e.g. "boxes[1].p_min".
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Failure inside, or reported by, a denoiser backend. `phase` is empty until the
// pipeline tags it.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, std::string phase = {})
      : Error(phase.empty() ? what : "[" + phase + "] " + what), phase_(std::move(phase)), detail_(what) {}
  const std::string& phase() const noexcept { return phase_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string phase_;
  std::string detail_;
};

// The caller asked a backend for something it cannot do (attention hooks, shape).
class CapabilityError : public BackendError {
 public:
  using BackendError::BackendError;
};

// A job or request depends on state that does not exist yet.
class DependencyError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Filesystem, encoding or environment failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace taue
