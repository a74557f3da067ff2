#pragma once

#include <stdexcept>
#include <string>

namespace advscope {

// Exception hierarchy. The CLI maps each family onto its exit code and the
// server maps ValidationError/NotFoundError onto 400/404 responses.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejected input: bad shapes, out-of-range parameters, malformed requests.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message, std::string field = {})
      : Error(message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Malformed or truncated files (model blobs, archives, CIFAR batches).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure such as a diverging training run.
class ComputeError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

class InsufficientMembersError : public ComputeError {
 public:
  using ComputeError::ComputeError;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace advscope
