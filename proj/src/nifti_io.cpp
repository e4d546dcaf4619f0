#include "voxelseg/nifti_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "voxelseg/error.hpp"
#include "voxelseg/geometry.hpp"

namespace voxelseg::nifti {
namespace {

// Field offsets inside the NIfTI-1 header.
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffSrowX = 280;
constexpr std::size_t kOffSrowY = 296;
constexpr std::size_t kOffSrowZ = 312;
constexpr std::size_t kOffMagic = 344;

template <typename T>
T byteswap_value(T value) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), &value, sizeof(T));
  std::reverse(raw.begin(), raw.end());
  std::memcpy(&value, raw.data(), sizeof(T));
  return value;
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    T value;
    std::memcpy(&value, bytes_.data() + offset, sizeof(T));
    return swap_ ? byteswap_value(value) : value;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  bool swap_;
};

class Writer {
 public:
  Writer(std::vector<std::uint8_t>& out, bool big_endian)
      : out_(out), swap_(big_endian != (std::endian::native == std::endian::big)) {}

  template <typename T>
  void put(std::size_t offset, T value) {
    if (swap_) value = byteswap_value(value);
    std::memcpy(out_.data() + offset, &value, sizeof(T));
  }

  bool swapping() const { return swap_; }

 private:
  std::vector<std::uint8_t>& out_;
  bool swap_;
};

void require_finite(float value, const char* field) {
  if (!std::isfinite(value)) fail(ErrorCode::NonFiniteHeaderField, std::string(field) + " is not finite");
}

template <typename T>
double decode_voxel(const std::uint8_t* p, bool swap) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if (swap) value = byteswap_value(value);
  return static_cast<double>(value);
}

template <typename T>
void encode_voxel(std::uint8_t* p, double value, bool swap) {
  T stored = static_cast<T>(value);
  if (swap) stored = byteswap_value(stored);
  std::memcpy(p, &stored, sizeof(T));
}

void check_representable(double value, Datatype dt) {
  auto integral_in = [&](double lo, double hi) {
    if (!(value >= lo && value <= hi) || std::trunc(value) != value) {
      fail(ErrorCode::ValueOutOfRange,
           "value " + std::to_string(value) + " not representable as datatype " +
               std::to_string(static_cast<int>(dt)));
    }
  };
  switch (dt) {
    case Datatype::UInt8: integral_in(0.0, 255.0); break;
    case Datatype::Int16: integral_in(-32768.0, 32767.0); break;
    case Datatype::Float32:
      if (std::isfinite(value) && std::abs(value) > std::numeric_limits<float>::max()) {
        fail(ErrorCode::ValueOutOfRange, "value overflows float32");
      }
      break;
    case Datatype::Float64: break;
  }
}

std::vector<std::uint8_t> encode(const Volume& v, Datatype datatype, bool big_endian) {
  if (!is_supported_datatype(static_cast<int>(datatype))) {
    fail(ErrorCode::UnsupportedDatatype, "datatype " + std::to_string(static_cast<int>(datatype)));
  }
  if (v.data.size() != voxel_count(v.extents)) {
    fail(ErrorCode::DimensionMismatch, "volume data length does not match extents");
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (v.extents[a] < 1 || v.extents[a] > 32767) {
      fail(ErrorCode::DimensionMismatch, "extent out of NIfTI-1 range");
    }
  }
  for (double value : v.data) check_representable(value, datatype);

  const std::size_t width = datatype_width(datatype);
  std::vector<std::uint8_t> out(kDataOffset + v.data.size() * width, 0);
  Writer w(out, big_endian);

  w.put<std::int32_t>(0, 348);
  w.put<std::int16_t>(kOffDim + 0, 3);
  for (std::size_t a = 0; a < 3; ++a) {
    w.put<std::int16_t>(kOffDim + 2 * (a + 1), static_cast<std::int16_t>(v.extents[a]));
  }
  for (std::size_t a = 4; a < 8; ++a) w.put<std::int16_t>(kOffDim + 2 * a, 1);
  w.put<std::int16_t>(kOffDatatype, static_cast<std::int16_t>(datatype));
  w.put<std::int16_t>(kOffBitpix, static_cast<std::int16_t>(8 * width));
  const auto spacing = v.spacing();
  w.put<float>(kOffPixdim, 1.0f);
  for (std::size_t a = 0; a < 3; ++a) w.put<float>(kOffPixdim + 4 * (a + 1), static_cast<float>(spacing[a]));
  for (std::size_t a = 4; a < 8; ++a) w.put<float>(kOffPixdim + 4 * a, 1.0f);
  w.put<float>(kOffVoxOffset, static_cast<float>(kDataOffset));
  w.put<float>(kOffSclSlope, 1.0f);
  w.put<float>(kOffSclInter, 0.0f);
  out[kOffXyztUnits] = 2;  // millimeters
  w.put<std::int16_t>(kOffQformCode, 0);
  w.put<std::int16_t>(kOffSformCode, 1);
  const std::size_t row_offsets[3] = {kOffSrowX, kOffSrowY, kOffSrowZ};
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      w.put<float>(row_offsets[r] + 4 * c, static_cast<float>(v.affine[r][c]));
    }
  }
  std::memcpy(out.data() + kOffMagic, "n+1\0", 4);

  std::uint8_t* p = out.data() + kDataOffset;
  const bool swap = w.swapping();
  for (double value : v.data) {
    switch (datatype) {
      case Datatype::UInt8: encode_voxel<std::uint8_t>(p, value, swap); break;
      case Datatype::Int16: encode_voxel<std::int16_t>(p, value, swap); break;
      case Datatype::Float32: encode_voxel<float>(p, value, swap); break;
      case Datatype::Float64: encode_voxel<double>(p, value, swap); break;
    }
    p += width;
  }
  return out;
}

}  // namespace

bool is_supported_datatype(int code) { return code == 2 || code == 4 || code == 16 || code == 64; }

std::size_t datatype_width(Datatype dt) {
  switch (dt) {
    case Datatype::UInt8: return 1;
    case Datatype::Int16: return 2;
    case Datatype::Float32: return 4;
    case Datatype::Float64: return 8;
  }
  fail(ErrorCode::UnsupportedDatatype, "datatype " + std::to_string(static_cast<int>(dt)));
}

Header parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) fail(ErrorCode::DimensionMismatch, "file shorter than a NIfTI-1 header");

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  bool swap = false;
  if (sizeof_hdr != 348) {
    if (byteswap_value(sizeof_hdr) != 348) fail(ErrorCode::BadMagic, "sizeof_hdr is not 348 in either byte order");
    swap = true;
  }
  const Reader r(bytes, swap);

  Header h;
  h.big_endian = swap != (std::endian::native == std::endian::big);
  h.sizeof_hdr = 348;
  std::memcpy(h.magic.data(), bytes.data() + kOffMagic, 4);
  if (std::memcmp(h.magic.data(), "n+1\0", 4) != 0) {
    fail(ErrorCode::BadMagic, "magic is not \"n+1\" (only single-file NIfTI-1 is supported)");
  }
  for (std::size_t i = 0; i < 8; ++i) h.dim[i] = r.get<std::int16_t>(kOffDim + 2 * i);
  h.datatype = r.get<std::int16_t>(kOffDatatype);
  h.bitpix = r.get<std::int16_t>(kOffBitpix);
  for (std::size_t i = 0; i < 8; ++i) h.pixdim[i] = r.get<float>(kOffPixdim + 4 * i);
  h.vox_offset = r.get<float>(kOffVoxOffset);
  h.scl_slope = r.get<float>(kOffSclSlope);
  h.scl_inter = r.get<float>(kOffSclInter);
  h.qform_code = r.get<std::int16_t>(kOffQformCode);
  h.sform_code = r.get<std::int16_t>(kOffSformCode);
  for (std::size_t c = 0; c < 4; ++c) {
    h.srow_x[c] = r.get<float>(kOffSrowX + 4 * c);
    h.srow_y[c] = r.get<float>(kOffSrowY + 4 * c);
    h.srow_z[c] = r.get<float>(kOffSrowZ + 4 * c);
  }

  if (!is_supported_datatype(h.datatype)) {
    fail(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(h.datatype));
  }
  const bool rank_ok = h.dim[0] == 3 || (h.dim[0] == 4 && h.dim[4] == 1);
  if (!rank_ok) fail(ErrorCode::DimensionMismatch, "only 3D volumes are supported (dim[0]=" + std::to_string(h.dim[0]) + ")");
  for (std::size_t a = 1; a <= 3; ++a) {
    if (h.dim[a] < 1) fail(ErrorCode::DimensionMismatch, "non-positive extent in dim[" + std::to_string(a) + "]");
  }
  for (std::size_t a = 1; a <= 3; ++a) require_finite(h.pixdim[a], "pixdim");
  require_finite(h.vox_offset, "vox_offset");
  require_finite(h.scl_slope, "scl_slope");
  require_finite(h.scl_inter, "scl_inter");
  if (h.sform_code > 0) {
    for (std::size_t c = 0; c < 4; ++c) {
      require_finite(h.srow_x[c], "srow_x");
      require_finite(h.srow_y[c], "srow_y");
      require_finite(h.srow_z[c], "srow_z");
    }
  }
  if (h.vox_offset < static_cast<float>(kDataOffset) || std::trunc(h.vox_offset) != h.vox_offset) {
    fail(ErrorCode::DimensionMismatch, "vox_offset must be an integer >= 352");
  }
  const std::size_t count = static_cast<std::size_t>(h.dim[1]) * h.dim[2] * h.dim[3];
  const std::size_t expected = static_cast<std::size_t>(h.vox_offset) +
                               count * datatype_width(static_cast<Datatype>(h.datatype));
  if (bytes.size() != expected) {
    fail(ErrorCode::DimensionMismatch, "expected " + std::to_string(expected) + " bytes, got " +
                                           std::to_string(bytes.size()));
  }
  return h;
}

Datatype stored_datatype(std::span<const std::uint8_t> bytes) {
  return static_cast<Datatype>(parse_header(bytes).datatype);
}

Volume read_nifti(std::span<const std::uint8_t> bytes) {
  const Header h = parse_header(bytes);
  const bool swap = h.big_endian != (std::endian::native == std::endian::big);

  Volume v;
  v.extents = {static_cast<std::size_t>(h.dim[1]), static_cast<std::size_t>(h.dim[2]),
               static_cast<std::size_t>(h.dim[3])};
  const std::size_t count = voxel_count(v.extents);
  v.data.assign(count, 0.0);

  const auto dt = static_cast<Datatype>(h.datatype);
  const std::size_t width = datatype_width(dt);
  const std::uint8_t* p = bytes.data() + static_cast<std::size_t>(h.vox_offset);
  // (1, 0) is skipped as well so stored values, signed zeros included, pass through untouched.
  const bool scaled = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
  const double slope = h.scl_slope;
  const double inter = h.scl_inter;
  for (std::size_t i = 0; i < count; ++i, p += width) {
    double value = 0.0;
    switch (dt) {
      case Datatype::UInt8: value = decode_voxel<std::uint8_t>(p, swap); break;
      case Datatype::Int16: value = decode_voxel<std::int16_t>(p, swap); break;
      case Datatype::Float32: value = decode_voxel<float>(p, swap); break;
      case Datatype::Float64: value = decode_voxel<double>(p, swap); break;
    }
    v.data[i] = scaled ? value * slope + inter : value;
  }

  Affine a = identity_affine();
  if (h.sform_code > 0) {
    for (std::size_t c = 0; c < 4; ++c) {
      a[0][c] = h.srow_x[c];
      a[1][c] = h.srow_y[c];
      a[2][c] = h.srow_z[c];
    }
  } else {
    for (std::size_t c = 0; c < 3; ++c) {
      const double s = h.pixdim[c + 1];
      a[c][c] = s > 0.0 ? s : 1.0;
    }
    v.affine_from_pixdim = true;
  }
  v.affine = a;
  v.orientation = geometry::orientation_of(a);
  return v;
}

std::vector<std::uint8_t> write_nifti(const Volume& v, Datatype datatype) {
  return encode(v, datatype, false);
}

std::vector<std::uint8_t> write_nifti_big_endian(const Volume& v, Datatype datatype) {
  return encode(v, datatype, true);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::FileNotFound, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

Volume load(const std::filesystem::path& path) { return read_nifti(read_file(path)); }

void save(const Volume& v, const std::filesystem::path& path, Datatype datatype) {
  write_file(path, write_nifti(v, datatype));
}

}  // namespace voxelseg::nifti
