#pragma once

#include <stdexcept>
#include <string>

namespace ras {

enum class ErrorCode {
  DimensionMismatch,
  SumMismatch,
  IllegalZeroRun,
  EmptyMask,
  IndexOutOfRange,
  IdMismatch,
  SceneMismatch,
  SamplingExhausted,
  TooManyCandidates,
  VocabMiss,
  SequenceTooLong,
  EmptyBatch,
  ConfigInvalid,
  SchemaError,
  IoError,
};

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SumMismatch: return "SumMismatch";
    case ErrorCode::IllegalZeroRun: return "IllegalZeroRun";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::SceneMismatch: return "SceneMismatch";
    case ErrorCode::SamplingExhausted: return "SamplingExhausted";
    case ErrorCode::TooManyCandidates: return "TooManyCandidates";
    case ErrorCode::VocabMiss: return "VocabMiss";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace ras
