#include "salref/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace salref {

static_assert(std::endian::native == std::endian::little,
              "NIfTI I/O assumes a little-endian host");

namespace {

constexpr int kHeaderSize = 348;
constexpr float kVoxOffset = 352.0f;

// NIfTI-1 datatype codes.
enum DType : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
};

template <typename T>
void put(std::vector<char>& buf, std::size_t offset, T value) {
  std::memcpy(buf.data() + offset, &value, sizeof(T));
}

template <typename T>
T get(const std::vector<char>& buf, std::size_t offset) {
  T value;
  std::memcpy(&value, buf.data() + offset, sizeof(T));
  return value;
}

int dtype_size(std::int16_t dt) {
  switch (dt) {
    case kUint8: return 1;
    case kInt16: return 2;
    case kInt32: return 4;
    case kFloat32: return 4;
    case kFloat64: return 8;
    default: return 0;
  }
}

struct RawImage {
  Dims dims;
  std::array<double, 3> spacing;
  std::int16_t datatype;
  std::vector<double> data;
};

RawImage read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open NIfTI file: " + path.string());

  std::vector<char> hdr(kHeaderSize);
  in.read(hdr.data(), kHeaderSize);
  if (in.gcount() != kHeaderSize) {
    throw FormatError("truncated NIfTI header: " + path.string());
  }

  if (static_cast<unsigned char>(hdr[0]) == 0x1f &&
      static_cast<unsigned char>(hdr[1]) == 0x8b) {
    throw UnsupportedError("gzip-compressed input not supported (decompress " +
                           path.string() + " to a plain .nii first)");
  }

  const auto sizeof_hdr = get<std::int32_t>(hdr, 0);
  if (sizeof_hdr != kHeaderSize) {
    // 348 byte-swapped = 0x5C010000.
    if (sizeof_hdr == 0x5C010000) {
      throw UnsupportedError("big-endian NIfTI not supported: " + path.string());
    }
    throw FormatError("bad sizeof_hdr in NIfTI header: " + path.string());
  }
  if (std::memcmp(hdr.data() + 344, "n+1\0", 4) != 0) {
    throw FormatError("bad NIfTI magic in " + path.string());
  }

  const auto ndim = get<std::int16_t>(hdr, 40);
  if (ndim < 1 || ndim > 7) {
    throw FormatError("bad dim[0] in NIfTI header: " + path.string());
  }
  Dims dims{1, 1, 1};
  dims.nx = get<std::int16_t>(hdr, 42);
  if (ndim >= 2) dims.ny = get<std::int16_t>(hdr, 44);
  if (ndim >= 3) dims.nz = get<std::int16_t>(hdr, 46);
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) {
    throw FormatError("non-positive dims in NIfTI header: " + path.string());
  }

  const auto datatype = get<std::int16_t>(hdr, 70);
  const int esize = dtype_size(datatype);
  if (esize == 0) {
    throw UnsupportedError("unsupported NIfTI datatype " +
                           std::to_string(datatype) + " in " + path.string());
  }

  std::array<double, 3> spacing = {
      get<float>(hdr, 80), get<float>(hdr, 84), get<float>(hdr, 88)};
  for (double& s : spacing) {
    if (!(s > 0.0)) s = 1.0;
  }

  const auto vox_offset = get<float>(hdr, 108);
  if (vox_offset < kHeaderSize || vox_offset != std::floor(vox_offset)) {
    throw FormatError("bad vox_offset in NIfTI header: " + path.string());
  }

  in.seekg(static_cast<std::streamoff>(vox_offset));
  const std::size_t n = dims.count();
  std::vector<char> raw(n * esize);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw FormatError("truncated NIfTI voxel data: " + path.string());
  }

  RawImage img{dims, spacing, datatype, std::vector<double>(n)};
  const char* p = raw.data();
  for (std::size_t i = 0; i < n; ++i, p += esize) {
    switch (datatype) {
      case kUint8: img.data[i] = *reinterpret_cast<const std::uint8_t*>(p); break;
      case kInt16: { std::int16_t v; std::memcpy(&v, p, 2); img.data[i] = v; break; }
      case kInt32: { std::int32_t v; std::memcpy(&v, p, 4); img.data[i] = v; break; }
      case kFloat32: { float v; std::memcpy(&v, p, 4); img.data[i] = v; break; }
      case kFloat64: { double v; std::memcpy(&v, p, 8); img.data[i] = v; break; }
    }
  }
  return img;
}

std::vector<char> make_header(const Dims& dims,
                              const std::array<double, 3>& spacing,
                              std::int16_t datatype) {
  std::vector<char> hdr(kHeaderSize, 0);
  put<std::int32_t>(hdr, 0, kHeaderSize);
  put<char>(hdr, 38, 'r');  // regular
  put<std::int16_t>(hdr, 40, 3);
  put<std::int16_t>(hdr, 42, static_cast<std::int16_t>(dims.nx));
  put<std::int16_t>(hdr, 44, static_cast<std::int16_t>(dims.ny));
  put<std::int16_t>(hdr, 46, static_cast<std::int16_t>(dims.nz));
  for (int i = 4; i <= 7; ++i) put<std::int16_t>(hdr, 40 + 2 * i, 1);
  put<std::int16_t>(hdr, 70, datatype);
  put<std::int16_t>(hdr, 72, static_cast<std::int16_t>(dtype_size(datatype) * 8));
  put<float>(hdr, 76, 1.0f);
  put<float>(hdr, 80, static_cast<float>(spacing[0]));
  put<float>(hdr, 84, static_cast<float>(spacing[1]));
  put<float>(hdr, 88, static_cast<float>(spacing[2]));
  put<float>(hdr, 108, kVoxOffset);
  put<float>(hdr, 112, 1.0f);  // scl_slope
  put<char>(hdr, 123, 2);      // xyzt_units: mm
  std::memcpy(hdr.data() + 344, "n+1\0", 4);
  return hdr;
}

void write_raw(const std::filesystem::path& path, const Dims& dims,
               const std::array<double, 3>& spacing, std::int16_t datatype,
               const std::vector<char>& payload) {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) {
    throw ValidationError("write_nifti: dims must be positive");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for write: " + path.string());
  const auto hdr = make_header(dims, spacing, datatype);
  out.write(hdr.data(), hdr.size());
  const char pad[4] = {0, 0, 0, 0};  // no extensions
  out.write(pad, 4);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace

Volume3D read_volume(const std::filesystem::path& path) {
  RawImage img = read_raw(path);
  Volume3D vol(img.dims);
  vol.spacing = img.spacing;
  vol.data = std::move(img.data);
  vol.validate();
  return vol;
}

BinaryMask read_mask(const std::filesystem::path& path) {
  RawImage img = read_raw(path);
  BinaryMask mask(img.dims);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = img.data[i];
    if (v != 0.0 && v != 1.0) {
      throw ValidationError("mask has non-binary value in " + path.string());
    }
    mask.bits[i] = (v != 0.0);
  }
  return mask;
}

LabelMap read_labels(const std::filesystem::path& path) {
  RawImage img = read_raw(path);
  LabelMap lbl(img.dims);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = img.data[i];
    if (v < 0.0 || v != std::floor(v)) {
      throw ValidationError("label map has non-integer or negative value in " +
                            path.string());
    }
    lbl.labels[i] = static_cast<std::int32_t>(v);
  }
  return lbl;
}

void write_nifti(const Volume3D& vol, const std::filesystem::path& path) {
  vol.validate();
  std::vector<char> payload(vol.data.size() * 4);
  for (std::size_t i = 0; i < vol.data.size(); ++i) {
    const float f = static_cast<float>(vol.data[i]);
    std::memcpy(payload.data() + 4 * i, &f, 4);
  }
  write_raw(path, vol.dims, vol.spacing, kFloat32, payload);
}

void write_nifti(const BinaryMask& mask, const std::filesystem::path& path) {
  std::vector<char> payload(mask.bits.size());
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    payload[i] = static_cast<char>(mask.bits[i] ? 1 : 0);
  }
  write_raw(path, mask.dims, {1.0, 1.0, 1.0}, kUint8, payload);
}

void write_nifti(const LabelMap& labels, const std::filesystem::path& path) {
  std::vector<char> payload(labels.labels.size() * 4);
  std::memcpy(payload.data(), labels.labels.data(), payload.size());
  write_raw(path, labels.dims, {1.0, 1.0, 1.0}, kInt32, payload);
}

}  // namespace salref
