#pragma once

#include <stdexcept>
#include <string>

namespace mmreg {

// Process exit codes for the CLI. Library code throws; tools map to codes.
enum class ErrorCode : int {
  config = 2,   // bad flags, malformed config, checkpoint/config mismatch
  data = 3,     // missing/invalid input files, manifest or landmark problems
  runtime = 4,  // numeric failures, singular transforms, non-finite losses
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(ErrorCode::config, msg) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(ErrorCode::data, msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(ErrorCode::runtime, msg) {}
};

// Linear part of an affine map has |det| below the invertibility threshold.
class SingularTransform : public NumericError {
 public:
  explicit SingularTransform(const std::string& msg) : NumericError(msg) {}
};

class BoxOutOfRange : public DataError {
 public:
  explicit BoxOutOfRange(const std::string& msg) : DataError(msg) {}
};

class DuplicatePairId : public DataError {
 public:
  explicit DuplicatePairId(const std::string& msg) : DataError(msg) {}
};

class OutOfBoundsLandmark : public DataError {
 public:
  explicit OutOfBoundsLandmark(const std::string& msg) : DataError(msg) {}
};

}  // namespace mmreg
