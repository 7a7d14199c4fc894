#pragma once

#include <stdexcept>
#include <string>

namespace hic {

enum class ErrorCode {
  // configuration
  InvalidConfig,
  InvalidK,
  InvalidSpec,
  ConfigError,
  // input data
  ImageTooSmall,
  IoError,
  CorruptRecord,
  ParseError,
  OrphanFineClass,
  DuplicateClass,
  MissingClassDir,
  EmptyTrainingSet,
  EmptyCorpus,
  EmptyClass,
  EmptyDocument,
  DimensionMismatch,
  IncompleteClassifier,
  NoPairAvailable,
  // numerics
  EmptyNode,
  DegenerateSplit,
  NumericFailure,
};

// Categories double as process exit codes (0 ok, 2 config, 3 data, 4 numeric).
enum class ErrorCategory : int { Config = 2, Data = 3, Numeric = 4 };

constexpr ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidK:
    case ErrorCode::InvalidSpec:
    case ErrorCode::ConfigError:
      return ErrorCategory::Config;
    case ErrorCode::EmptyNode:
    case ErrorCode::DegenerateSplit:
    case ErrorCode::NumericFailure:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Data;
  }
}

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }
  ErrorCategory category() const { return category_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace hic
