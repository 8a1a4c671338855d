#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace biascope {

enum class ErrorCode {
  ZeroVector,
  SchemaError,
  DimensionMismatch,
  DuplicateId,
  UnknownCaptionId,
  EmptyTable,
  InvalidSpec,
  ClientError,
  EmptyResponse,
  ParseError,
  NoCandidates,
  EmptySubset,
  SingleClass,
  MissingPlaceholder,
  MissingTruth,
  MissingTextEmbedding,
  InvalidGroupId,
  NonFiniteLoss,
  EmptyGroup,
  EmptyMinority,
  DegenerateTable,
  GeneratorError,
  AttemptBudgetExceeded,
  MissingArtifact,
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::UnknownCaptionId: return "UnknownCaptionId";
    case ErrorCode::EmptyTable: return "EmptyTable";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::ClientError: return "ClientError";
    case ErrorCode::EmptyResponse: return "EmptyResponse";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::NoCandidates: return "NoCandidates";
    case ErrorCode::EmptySubset: return "EmptySubset";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::MissingPlaceholder: return "MissingPlaceholder";
    case ErrorCode::MissingTruth: return "MissingTruth";
    case ErrorCode::MissingTextEmbedding: return "MissingTextEmbedding";
    case ErrorCode::InvalidGroupId: return "InvalidGroupId";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::EmptyMinority: return "EmptyMinority";
    case ErrorCode::DegenerateTable: return "DegenerateTable";
    case ErrorCode::GeneratorError: return "GeneratorError";
    case ErrorCode::AttemptBudgetExceeded: return "AttemptBudgetExceeded";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library. `code()` is stable and what callers
/// (and the CLI exit-code mapping) should branch on; `what()` is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// CLI exit codes: 2 user/config, 3 upstream artifact, 4 generator/client.
constexpr int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingArtifact:
    case ErrorCode::MissingTextEmbedding:
      return 3;
    case ErrorCode::ClientError:
    case ErrorCode::EmptyResponse:
    case ErrorCode::ParseError:
    case ErrorCode::GeneratorError:
    case ErrorCode::AttemptBudgetExceeded:
      return 4;
    default:
      return 2;
  }
}

}  // namespace biascope
