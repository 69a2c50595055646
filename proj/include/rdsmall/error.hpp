#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rdsmall {

enum class ErrorCode {
  NonFinite,
  LengthMismatch,
  EmptySide,
  ZeroScale,
  InsufficientData,
  BadBandwidth,
  DegenerateSample,
  ZeroCurvatureBound,
  NoFeasibleBandwidth,
  ZeroSE,
  EmptyWindowSide,
  OutOfSupport,
  InvalidArgument,
  FileNotFound,
  ParseError,
  MissingColumn,
  SpecValidation,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptySide: return "EmptySide";
    case ErrorCode::ZeroScale: return "ZeroScale";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::BadBandwidth: return "BadBandwidth";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::ZeroCurvatureBound: return "ZeroCurvatureBound";
    case ErrorCode::NoFeasibleBandwidth: return "NoFeasibleBandwidth";
    case ErrorCode::ZeroSE: return "ZeroSE";
    case ErrorCode::EmptyWindowSide: return "EmptyWindowSide";
    case ErrorCode::OutOfSupport: return "OutOfSupport";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::SpecValidation: return "SpecValidation";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// that callers (the simulation engine in particular) can turn recoverable
/// estimation failures into data instead of aborting.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rdsmall
