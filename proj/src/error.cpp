#include "dflex/error.hpp"

namespace dflex {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::EmptyDistrict: return "EmptyDistrict";
    case ErrorCode::InvalidBand: return "InvalidBand";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::RaggedSeries: return "RaggedSeries";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::EmptyTrace: return "EmptyTrace";
    case ErrorCode::NonPsd: return "NonPsd";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::ForecastTooShort: return "ForecastTooShort";
    case ErrorCode::SolverFailed: return "SolverFailed";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteGrad: return "NonFiniteGrad";
    case ErrorCode::NonFiniteObservation: return "NonFiniteObservation";
    case ErrorCode::BufferUnderflow: return "BufferUnderflow";
    case ErrorCode::EmptyRollout: return "EmptyRollout";
    case ErrorCode::ZeroReferenceMean: return "ZeroReferenceMean";
    case ErrorCode::RosterMismatch: return "RosterMismatch";
    case ErrorCode::ConfigParse: return "ConfigParse";
    case ErrorCode::UnknownController: return "UnknownController";
    case ErrorCode::MissingDependency: return "MissingDependency";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::Io: return "Io";
    case ErrorCode::ControllerError: return "ControllerError";
  }
  return "Unknown";
}

}  // namespace dflex
