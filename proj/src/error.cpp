#include "hic/error.hpp"

namespace hic {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::CorruptRecord: return "CorruptRecord";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::OrphanFineClass: return "OrphanFineClass";
    case ErrorCode::DuplicateClass: return "DuplicateClass";
    case ErrorCode::MissingClassDir: return "MissingClassDir";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::EmptyDocument: return "EmptyDocument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IncompleteClassifier: return "IncompleteClassifier";
    case ErrorCode::NoPairAvailable: return "NoPairAvailable";
    case ErrorCode::EmptyNode: return "EmptyNode";
    case ErrorCode::DegenerateSplit: return "DegenerateSplit";
    case ErrorCode::NumericFailure: return "NumericFailure";
  }
  return "Error";
}

}  // namespace hic
