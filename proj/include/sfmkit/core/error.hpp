#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sfm {

// Every recoverable failure in the library is reported as an sfm::Error
// carrying one of these codes.
enum class ErrorCode {
  kInvalidArgument,
  kSingularMatrix,
  kNegativeDeterminant,
  kPointAtInfinity,
  kUnsupportedFormat,
  kCorruptFile,
  kZeroDimension,
  kNonPositiveSigma,
  kImageTooSmall,
  kEmptyInput,
  kDegeneratePoints,
  kDegenerateConfiguration,
  kInsufficientPoints,
  kNoConsensus,
  kCheiralityAmbiguous,
  kZeroBaseline,
  kCoincidentPoint,
  kCoplanarDegenerate,
  kBehindCamera,
  kDiverged,
  kNoValidPair,
  kNoRegistrableView,
  kEmptyCloud,
  kIoError,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kSingularMatrix: return "singular-matrix";
    case ErrorCode::kNegativeDeterminant: return "negative-determinant";
    case ErrorCode::kPointAtInfinity: return "point-at-infinity";
    case ErrorCode::kUnsupportedFormat: return "unsupported-format";
    case ErrorCode::kCorruptFile: return "corrupt-file";
    case ErrorCode::kZeroDimension: return "zero-dimension";
    case ErrorCode::kNonPositiveSigma: return "non-positive-sigma";
    case ErrorCode::kImageTooSmall: return "image-too-small";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kDegeneratePoints: return "degenerate-points";
    case ErrorCode::kDegenerateConfiguration: return "degenerate-configuration";
    case ErrorCode::kInsufficientPoints: return "insufficient-points";
    case ErrorCode::kNoConsensus: return "no-consensus";
    case ErrorCode::kCheiralityAmbiguous: return "cheirality-ambiguous";
    case ErrorCode::kZeroBaseline: return "zero-baseline";
    case ErrorCode::kCoincidentPoint: return "coincident-point";
    case ErrorCode::kCoplanarDegenerate: return "coplanar-degenerate";
    case ErrorCode::kBehindCamera: return "behind-camera";
    case ErrorCode::kDiverged: return "diverged";
    case ErrorCode::kNoValidPair: return "no-valid-pair";
    case ErrorCode::kNoRegistrableView: return "no-registrable-view";
    case ErrorCode::kEmptyCloud: return "empty-cloud";
    case ErrorCode::kIoError: return "io-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void Fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace sfm
