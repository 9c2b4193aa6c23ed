#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uhi {

enum class ErrorCode {
  InvalidArgument,
  EmptyOverlap,
  PatchTooLarge,
  OverlapConflict,
  GeoMismatch,
  DuplicateRole,
  UnsupportedFormat,
  CorruptFile,
  IoError,
  DateMismatch,
  MissingBand,
  DuplicateScene,
  ShapeMismatch,
  NonFiniteLoss,
  EmptySplit,
  EmptyCatalog,
  DegenerateDistribution,
  NoValidPixels,
  BboxOutOfBounds,
  ClassAbsent,
  UnreachableTarget,
  MissingHorizon,
  UnknownSample,
  UnknownCheckpoint,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so that
// callers (CLI, HTTP service) can map it onto exit codes or status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace uhi
