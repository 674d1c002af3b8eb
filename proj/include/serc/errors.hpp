#pragma once

#include <stdexcept>
#include <string>

namespace serc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- expression evaluator ---

class ExprParseError : public Error {
 public:
  using Error::Error;
};

class DivisionByZeroError : public Error {
 public:
  using Error::Error;
};

class OverflowError : public Error {
 public:
  using Error::Error;
};

// --- trajectory assembly and serialization ---

class ObservationMismatchError : public Error {
 public:
  using Error::Error;
};

class AppendAfterFinalError : public Error {
 public:
  using Error::Error;
};

class NoFinalAnswerError : public Error {
 public:
  using Error::Error;
};

class MalformedRecord : public Error {
 public:
  MalformedRecord(std::string field_path, const std::string& detail)
      : Error("malformed record at '" + field_path + "': " + detail),
        field_path_(std::move(field_path)) {}

  const std::string& field_path() const noexcept { return field_path_; }

 private:
  std::string field_path_;
};

// --- tool sandbox ---

class MalformedToolCall : public Error {
 public:
  using Error::Error;
};

class UnknownToolError : public Error {
 public:
  using Error::Error;
};

class DuplicateToolError : public Error {
 public:
  using Error::Error;
};

// raised by tool handlers to signal a clean tool-error observation
class ToolFailure : public Error {
 public:
  using Error::Error;
};

class MissingRowError : public ToolFailure {
 public:
  using ToolFailure::ToolFailure;
};

class MissingColumnError : public ToolFailure {
 public:
  using ToolFailure::ToolFailure;
};

// --- wire protocol parsing (verifier / repair lines) ---

class SchemaError : public Error {
 public:
  using Error::Error;
};

class RangeError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

class StepMismatchError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

class UnknownActionError : public SchemaError {
 public:
  using SchemaError::SchemaError;
};

class OutOfRangeStepError : public Error {
 public:
  using Error::Error;
};

// --- optimizer ---

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class UnknownTemplateError : public Error {
 public:
  using Error::Error;
};

class CandidatesMismatchError : public Error {
 public:
  using Error::Error;
};

// --- remote backend ---

class ConfigError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

class BackendTimeout : public BackendError {
 public:
  using BackendError::BackendError;
};

class AuthError : public BackendError {
 public:
  using BackendError::BackendError;
};

class HttpError : public BackendError {
 public:
  HttpError(int status, const std::string& what)
      : BackendError(what), status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

class BackendProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

}  // namespace serc
