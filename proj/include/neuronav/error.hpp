#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace neuronav {

enum class ErrorCode {
  // volume ingest
  MissingMagic,
  UnsupportedTransferSyntax,
  MissingTag,
  PixelLengthMismatch,
  MalformedDicom,
  InconsistentGeometry,
  NonUniformSpacing,
  TooFewSlices,
  HeaderParseError,
  LengthMismatch,
  // segmentation
  InvalidRange,
  InvalidConfig,
  EmptySegment,
  OpenSkull,
  DimensionMismatch,
  // mesh
  DimsTooSmall,
  IoError,
  ParseError,
  IndexOutOfRange,
  // registration
  MarkerNotVisible,
  NoMarkerFound,
  DecodeFailed,
  DegenerateConfiguration,
  SingularHomography,
  DivergedPose,
  InvalidArgument,
  // scene / service
  UnknownCommand,
  MissingPose,
  MissingMesh,
  PortInUse,
  BadRequest,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingMagic: return "MissingMagic";
    case ErrorCode::UnsupportedTransferSyntax: return "UnsupportedTransferSyntax";
    case ErrorCode::MissingTag: return "MissingTag";
    case ErrorCode::PixelLengthMismatch: return "PixelLengthMismatch";
    case ErrorCode::MalformedDicom: return "MalformedDicom";
    case ErrorCode::InconsistentGeometry: return "InconsistentGeometry";
    case ErrorCode::NonUniformSpacing: return "NonUniformSpacing";
    case ErrorCode::TooFewSlices: return "TooFewSlices";
    case ErrorCode::HeaderParseError: return "HeaderParseError";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptySegment: return "EmptySegment";
    case ErrorCode::OpenSkull: return "OpenSkull";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DimsTooSmall: return "DimsTooSmall";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::MarkerNotVisible: return "MarkerNotVisible";
    case ErrorCode::NoMarkerFound: return "NoMarkerFound";
    case ErrorCode::DecodeFailed: return "DecodeFailed";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::SingularHomography: return "SingularHomography";
    case ErrorCode::DivergedPose: return "DivergedPose";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnknownCommand: return "UnknownCommand";
    case ErrorCode::MissingPose: return "MissingPose";
    case ErrorCode::MissingMesh: return "MissingMesh";
    case ErrorCode::PortInUse: return "PortInUse";
    case ErrorCode::BadRequest: return "BadRequest";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

/// Pipeline stage attribution wrapped around a module error.
enum class Stage { Config, Ingest, Segmentation, Mesh, Export, Registration, Scene, Service };

inline std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Config: return "config";
    case Stage::Ingest: return "ingest";
    case Stage::Segmentation: return "segmentation";
    case Stage::Mesh: return "mesh";
    case Stage::Export: return "export";
    case Stage::Registration: return "registration";
    case Stage::Scene: return "scene";
    case Stage::Service: return "service";
  }
  return "unknown";
}

class StageError : public Error {
 public:
  StageError(Stage stage, const Error& cause)
      : Error(cause.code(), "Stage=" + std::string(to_string(stage)) + ": " + cause.detail()),
        stage_(stage) {}

  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

}  // namespace neuronav
