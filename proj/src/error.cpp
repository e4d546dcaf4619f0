#include "voxelseg/error.hpp"

namespace voxelseg {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteHeaderField: return "NonFiniteHeaderField";
    case ErrorCode::ValueOutOfRange: return "ValueOutOfRange";
    case ErrorCode::SingularAffine: return "SingularAffine";
    case ErrorCode::DegenerateOrientation: return "DegenerateOrientation";
    case ErrorCode::InvalidWindow: return "InvalidWindow";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonBinaryLabel: return "NonBinaryLabel";
    case ErrorCode::NonBinaryInput: return "NonBinaryInput";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::InvalidOverlap: return "InvalidOverlap";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::NonScalarRoot: return "NonScalarRoot";
    case ErrorCode::OddExtent: return "OddExtent";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ManifestCorrupt: return "ManifestCorrupt";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NonFiniteParameter: return "NonFiniteParameter";
    case ErrorCode::InfeasiblePlacement: return "InfeasiblePlacement";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

int exit_code(ErrorCode code) noexcept { return 10 + static_cast<int>(code); }

}  // namespace voxelseg
