#pragma once

#include <stdexcept>
#include <string>

namespace mvtn {

enum class ErrorCode {
  // mesh_geometry
  MalformedHeader,
  IndexOutOfRange,
  NonFiniteCoordinate,
  FaceCountExceedsCap,
  DegenerateMesh,
  InvalidRange,
  // camera_rig
  InvalidViewCount,
  NonFiniteInput,
  LengthMismatch,
  DegeneratePose,
  // autodiff_core
  DomainError,
  ShapeMismatch,
  NotScalar,
  BackwardAlreadyRun,
  // soft_renderer
  AllBehindCamera,
  // neural_blocks
  WidthMismatch,
  // training_engine
  LabelOutOfRange,
  NonFiniteGradient,
  MissingMvtn,
  ClassCountMismatch,
  // retrieval_lab
  RankDeficient,
  TooFewSamples,
  DimMismatch,
  NoPositives,
  // dataset_hub
  SpecInvalid,
  SilhouetteCollision,
  MissingClass,
  VersionMismatch,
  CorruptFile,
  IoError,
};

const char* error_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_name(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

}  // namespace mvtn
