#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ted {

enum class ErrorCode {
  UsageError,
  IoFailure,
  ParseError,
  UnknownType,
  DanglingEdge,
  DimensionMismatch,
  DuplicateNodeId,
  PatternTypeUnknown,
  InstanceCapExceeded,
  MalformedMetapath,
  MalformedPattern,
  ShapeMismatch,
  NotScalarLoss,
  MissingProjection,
  EmptyBatch,
  InsufficientSamples,
  DivergedLoss,
  EmptyTestSet,
  SingleClass,
  InfeasibleConfig,
  NoLabeledPairs,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UsageError: return "UsageError";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownType: return "UnknownType";
    case ErrorCode::DanglingEdge: return "DanglingEdge";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateNodeId: return "DuplicateNodeId";
    case ErrorCode::PatternTypeUnknown: return "PatternTypeUnknown";
    case ErrorCode::InstanceCapExceeded: return "InstanceCapExceeded";
    case ErrorCode::MalformedMetapath: return "MalformedMetapath";
    case ErrorCode::MalformedPattern: return "MalformedPattern";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NotScalarLoss: return "NotScalarLoss";
    case ErrorCode::MissingProjection: return "MissingProjection";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::EmptyTestSet: return "EmptyTestSet";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::InfeasibleConfig: return "InfeasibleConfig";
    case ErrorCode::NoLabeledPairs: return "NoLabeledPairs";
  }
  return "Unknown";
}

// Every library failure surfaces as ted::Error carrying a stable code so
// callers (and the CLI's machine-readable error line) can dispatch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ted
