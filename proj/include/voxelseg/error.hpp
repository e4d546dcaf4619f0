#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace voxelseg {

// Every failure the library reports carries one of these codes. The CLI maps
// each code to a distinct process exit status (see exit_code()).
enum class ErrorCode {
  BadMagic,
  UnsupportedDatatype,
  DimensionMismatch,
  NonFiniteHeaderField,
  ValueOutOfRange,
  SingularAffine,
  DegenerateOrientation,
  InvalidWindow,
  ShapeMismatch,
  NonBinaryLabel,
  NonBinaryInput,
  OutOfRange,
  InvalidOverlap,
  LayoutMismatch,
  InvalidParams,
  NonScalarRoot,
  OddExtent,
  InvalidConfig,
  VersionMismatch,
  ManifestCorrupt,
  EmptyDataset,
  NonFiniteParameter,
  InfeasiblePlacement,
  ConfigInvalid,
  FileNotFound,
  IoError,
};

inline constexpr int kErrorCodeCount = static_cast<int>(ErrorCode::IoError) + 1;

std::string_view error_name(ErrorCode code) noexcept;

// Exit status used by the command-line tool: 2 is reserved for usage errors,
// library errors start at 10 in declaration order.
int exit_code(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace voxelseg
