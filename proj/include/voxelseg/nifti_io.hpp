#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "voxelseg/volume.hpp"

namespace voxelseg::nifti {

enum class Datatype : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Float32 = 16,
  Float64 = 64,
};

bool is_supported_datatype(int code);
std::size_t datatype_width(Datatype dt);

// Fields of the 348-byte NIfTI-1 header that this reader consumes.
struct Header {
  std::int32_t sizeof_hdr = 348;
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = 0;
  std::int16_t bitpix = 0;
  std::array<float, 8> pixdim{};
  float vox_offset = 352.0f;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  std::array<float, 4> srow_x{};
  std::array<float, 4> srow_y{};
  std::array<float, 4> srow_z{};
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  bool big_endian = false;
};

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kDataOffset = 352;

// Decodes and validates the header; byte order is detected from sizeof_hdr.
Header parse_header(std::span<const std::uint8_t> bytes);

Volume read_nifti(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_nifti(const Volume& v, Datatype datatype);

// Same as write_nifti but emits big-endian bytes. Only used to build fixtures.
std::vector<std::uint8_t> write_nifti_big_endian(const Volume& v, Datatype datatype);

// Reads the header datatype without decoding voxel data.
Datatype stored_datatype(std::span<const std::uint8_t> bytes);

Volume load(const std::filesystem::path& path);
void save(const Volume& v, const std::filesystem::path& path, Datatype datatype);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace voxelseg::nifti
