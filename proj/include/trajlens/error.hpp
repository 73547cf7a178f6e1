#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trajlens {

enum class ErrorCode {
  InvalidArgument,
  MalformedRow,
  EmptyTrajectory,
  OutOfRangeCoordinate,
  NonFinite,
  EmptyInput,
  EmptySelection,
  TooShort,
  MissingEmbeddings,
  RemoteUnavailable,
  DimensionMismatch,
  EmptyText,
  RaggedInput,
  ZeroVector,
  ConstantInput,
  LengthMismatch,
  IdMismatch,
  TooFewItems,
  DegenerateComponent,
  TooFewPoints,
  UnfittedModel,
  NoValidRecords,
  Io,
  LockHeld,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::EmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::OutOfRangeCoordinate: return "OutOfRangeCoordinate";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::MissingEmbeddings: return "MissingEmbeddings";
    case ErrorCode::RemoteUnavailable: return "RemoteUnavailable";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::RaggedInput: return "RaggedInput";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::TooFewItems: return "TooFewItems";
    case ErrorCode::DegenerateComponent: return "DegenerateComponent";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::UnfittedModel: return "UnfittedModel";
    case ErrorCode::NoValidRecords: return "NoValidRecords";
    case ErrorCode::Io: return "Io";
    case ErrorCode::LockHeld: return "LockHeld";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace trajlens
