#include "intact/error.hpp"

namespace intact {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidInterval: return "InvalidInterval";
    case ErrorCode::DivisorContainsZero: return "DivisorContainsZero";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::MissingLayer: return "MissingLayer";
    case ErrorCode::StatsDrift: return "StatsDrift";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::EmptyActivations: return "EmptyActivations";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::InvalidConfig: return "ConfigInvalid";
    case ErrorCode::MissingHypercube: return "MissingHypercube";
    case ErrorCode::SingleLayerSH: return "SingleLayerSH";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::MaskAllZero: return "MaskAllZero";
    case ErrorCode::MissingFisher: return "MissingFisher";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::IndivisibleClasses: return "IndivisibleClasses";
    case ErrorCode::IncompleteMatrix: return "IncompleteMatrix";
    case ErrorCode::NeedAtLeastTwoTasks: return "NeedAtLeastTwoTasks";
    case ErrorCode::MissingBaseline: return "MissingBaseline";
    case ErrorCode::DataMissing: return "DataMissing";
    case ErrorCode::NumericalDivergence: return "NumericalDivergence";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::Io: return "IoError";
  }
  return "Unknown";
}

}  // namespace intact
