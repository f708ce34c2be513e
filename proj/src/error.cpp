#include "mvtn/error.hpp"

namespace mvtn {

const char* error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NonFiniteCoordinate: return "NonFiniteCoordinate";
    case ErrorCode::FaceCountExceedsCap: return "FaceCountExceedsCap";
    case ErrorCode::DegenerateMesh: return "DegenerateMesh";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::InvalidViewCount: return "InvalidViewCount";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DegeneratePose: return "DegeneratePose";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::BackwardAlreadyRun: return "BackwardAlreadyRun";
    case ErrorCode::AllBehindCamera: return "AllBehindCamera";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::MissingMvtn: return "MissingMvtn";
    case ErrorCode::ClassCountMismatch: return "ClassCountMismatch";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::SilhouetteCollision: return "SilhouetteCollision";
    case ErrorCode::MissingClass: return "MissingClass";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

}  // namespace mvtn
