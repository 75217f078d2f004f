/* Copyright 2026 The sr7t Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "sr7t/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <memory>

namespace sr7t::nifti {

namespace {

constexpr int kHeaderSize = 348;
constexpr float kVoxOffset = 352.0f;

enum DataType : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
  kInt64 = 1024,
};

struct GzFile {
  gzFile f = nullptr;
  GzFile(const std::filesystem::path& p, const char* mode) : f(gzopen(p.c_str(), mode)) {}
  ~GzFile() {
    if (f) gzclose(f);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;
};

template <typename T>
T get(const std::array<char, kHeaderSize>& h, int off, bool swap) {
  T v;
  std::memcpy(&v, h.data() + off, sizeof(T));
  if (swap) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::array<char, kHeaderSize>& h, int off, T v) {
  std::memcpy(h.data() + off, &v, sizeof(T));
}

void swap_elements(std::vector<char>& buf, int width) {
  if (width <= 1) return;
  for (std::size_t i = 0; i + width <= buf.size(); i += width) std::reverse(buf.begin() + i, buf.begin() + i + width);
}

struct RawImage {
  Dims dims;
  Spacing spacing;
  Affine affine;
  std::vector<double> values;
};

// Quaternion parameters to the voxel-to-world rows.
Affine qform_affine(float b, float c, float d, float qx, float qy, float qz, const float* pixdim) {
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    const double n = 1.0 / std::sqrt(static_cast<double>(b) * b + c * c + d * d);
    b = static_cast<float>(b * n);
    c = static_cast<float>(c * n);
    d = static_cast<float>(d * n);
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  const double qfac = pixdim[0] < 0 ? -1.0 : 1.0;
  const double xd = pixdim[1] > 0 ? pixdim[1] : 1.0;
  const double yd = pixdim[2] > 0 ? pixdim[2] : 1.0;
  const double zd = (pixdim[3] > 0 ? pixdim[3] : 1.0) * qfac;
  Affine aff;
  aff.code = 1;
  aff.rows = {(a * a + b * b - c * c - d * d) * xd, 2 * (b * c - a * d) * yd, 2 * (b * d + a * c) * zd, qx,
              2 * (b * c + a * d) * xd, (a * a + c * c - b * b - d * d) * yd, 2 * (c * d - a * b) * zd, qy,
              2 * (b * d - a * c) * xd, 2 * (c * d + a * b) * yd, (a * a + d * d - c * c - b * b) * zd, qz};
  return aff;
}

RawImage read_raw(const std::filesystem::path& path) {
  GzFile in(path, "rb");
  if (!in.f) throw VolumeError("cannot open NIfTI file " + path.string());
  std::array<char, kHeaderSize> h{};
  if (gzread(in.f, h.data(), kHeaderSize) != kHeaderSize) throw VolumeError("truncated NIfTI header in " + path.string());

  bool swap = false;
  auto sizeof_hdr = get<std::int32_t>(h, 0, false);
  if (sizeof_hdr != kHeaderSize) {
    swap = true;
    sizeof_hdr = get<std::int32_t>(h, 0, true);
    if (sizeof_hdr != kHeaderSize) throw VolumeError(path.string() + " is not a NIfTI-1 file");
  }
  if (std::memcmp(h.data() + 344, "n+1", 4) != 0)
    throw VolumeError(path.string() + " is not a single-file NIfTI-1 image (magic n+1)");

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = get<std::int16_t>(h, 40 + 2 * i, swap);
  if (dim[0] < 1 || dim[0] > 7) throw VolumeError("invalid dim[0] in " + path.string());
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] > 1) throw VolumeError(path.string() + " has more than three non-singleton dimensions");
  RawImage img;
  img.dims = {dim[1], dim[0] >= 2 ? dim[2] : 1, dim[0] >= 3 ? dim[3] : 1};
  if (img.dims.nx <= 0 || img.dims.ny <= 0 || img.dims.nz <= 0) throw VolumeError("invalid dimensions in " + path.string());

  const auto datatype = get<std::int16_t>(h, 70, swap);
  std::array<float, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = get<float>(h, 76 + 4 * i, swap);
  const float vox_offset = get<float>(h, 108, swap);
  const float slope = get<float>(h, 112, swap);
  const float inter = get<float>(h, 116, swap);
  img.spacing = {pixdim[1] > 0 ? pixdim[1] : 1.0, pixdim[2] > 0 ? pixdim[2] : 1.0, pixdim[3] > 0 ? pixdim[3] : 1.0};

  const auto qform_code = get<std::int16_t>(h, 252, swap);
  const auto sform_code = get<std::int16_t>(h, 254, swap);
  if (sform_code > 0) {
    img.affine.code = sform_code;
    for (int i = 0; i < 12; ++i) img.affine.rows[i] = get<float>(h, 280 + 4 * i, swap);
  } else if (qform_code > 0) {
    img.affine = qform_affine(get<float>(h, 256, swap), get<float>(h, 260, swap), get<float>(h, 264, swap),
                              get<float>(h, 268, swap), get<float>(h, 272, swap), get<float>(h, 276, swap),
                              pixdim.data());
  } else {
    img.affine.rows = {img.spacing.x, 0, 0, 0, 0, img.spacing.y, 0, 0, 0, 0, img.spacing.z, 0};
  }

  int width = 0;
  switch (datatype) {
    case kUInt8: case kInt8: width = 1; break;
    case kInt16: case kUInt16: width = 2; break;
    case kInt32: case kUInt32: case kFloat32: width = 4; break;
    case kFloat64: case kInt64: width = 8; break;
    default: throw VolumeError("unsupported NIfTI datatype " + std::to_string(datatype) + " in " + path.string());
  }

  const auto skip = static_cast<long>(vox_offset) - kHeaderSize;
  if (skip < 0) throw VolumeError("invalid vox_offset in " + path.string());
  std::vector<char> pad(static_cast<std::size_t>(skip));
  if (skip > 0 && gzread(in.f, pad.data(), static_cast<unsigned>(skip)) != skip)
    throw VolumeError("truncated NIfTI extension block in " + path.string());

  const auto n = static_cast<std::size_t>(img.dims.voxels());
  std::vector<char> buf(n * width);
  std::size_t got = 0;
  while (got < buf.size()) {
    const auto chunk = static_cast<unsigned>(std::min<std::size_t>(buf.size() - got, 1u << 30));
    const int r = gzread(in.f, buf.data() + got, chunk);
    if (r <= 0) throw VolumeError("truncated NIfTI voxel data in " + path.string());
    got += static_cast<std::size_t>(r);
  }
  if (swap) swap_elements(buf, width);

  img.values.resize(n);
  auto decode = [&](auto tag) {
    using T = decltype(tag);
    for (std::size_t i = 0; i < n; ++i) {
      T v;
      std::memcpy(&v, buf.data() + i * sizeof(T), sizeof(T));
      img.values[i] = static_cast<double>(v);
    }
  };
  switch (datatype) {
    case kUInt8: decode(std::uint8_t{}); break;
    case kInt8: decode(std::int8_t{}); break;
    case kInt16: decode(std::int16_t{}); break;
    case kUInt16: decode(std::uint16_t{}); break;
    case kInt32: decode(std::int32_t{}); break;
    case kUInt32: decode(std::uint32_t{}); break;
    case kInt64: decode(std::int64_t{}); break;
    case kFloat32: decode(float{}); break;
    case kFloat64: decode(double{}); break;
    default: break;
  }
  if (slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f))
    for (auto& v : img.values) v = v * slope + inter;
  return img;
}

bool gz_path(const std::filesystem::path& p) { return p.extension() == ".gz"; }

void write_raw(const std::filesystem::path& path, const Volume& like, std::int16_t datatype, const void* data,
               std::size_t bytes) {
  std::array<char, kHeaderSize> h{};
  put<std::int32_t>(h, 0, kHeaderSize);
  put<char>(h, 38, 'r');
  std::array<std::int16_t, 8> dim = {3, static_cast<std::int16_t>(like.dims.nx), static_cast<std::int16_t>(like.dims.ny),
                                     static_cast<std::int16_t>(like.dims.nz), 1, 1, 1, 1};
  if (like.dims.nx > 32767 || like.dims.ny > 32767 || like.dims.nz > 32767)
    throw VolumeError("volume too large for NIfTI-1");
  for (int i = 0; i < 8; ++i) put<std::int16_t>(h, 40 + 2 * i, dim[i]);
  put<std::int16_t>(h, 70, datatype);
  const std::int16_t bitpix = datatype == kUInt8 ? 8 : 32;
  put<std::int16_t>(h, 72, bitpix);
  std::array<float, 8> pixdim = {1.0f, static_cast<float>(like.spacing.x), static_cast<float>(like.spacing.y),
                                 static_cast<float>(like.spacing.z), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<float>(h, 76 + 4 * i, pixdim[i]);
  put<float>(h, 108, kVoxOffset);
  put<float>(h, 112, 1.0f);
  put<float>(h, 116, 0.0f);
  put<char>(h, 123, 2);  // mm
  const char* descrip = "sr7t";
  std::memcpy(h.data() + 148, descrip, std::strlen(descrip));
  put<std::int16_t>(h, 252, 0);
  put<std::int16_t>(h, 254, static_cast<std::int16_t>(like.affine.code > 0 ? like.affine.code : 2));
  for (int i = 0; i < 12; ++i) put<float>(h, 280 + 4 * i, static_cast<float>(like.affine.rows[i]));
  std::memcpy(h.data() + 344, "n+1", 4);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  GzFile out(path, gz_path(path) ? "wb6" : "wbT");
  if (!out.f) throw VolumeError("cannot write " + path.string());
  const char ext[4] = {0, 0, 0, 0};
  if (gzwrite(out.f, h.data(), kHeaderSize) != kHeaderSize || gzwrite(out.f, ext, 4) != 4)
    throw VolumeError("write failed for " + path.string());
  const auto* p = static_cast<const char*>(data);
  std::size_t done = 0;
  while (done < bytes) {
    const auto chunk = static_cast<unsigned>(std::min<std::size_t>(bytes - done, 1u << 30));
    if (gzwrite(out.f, p + done, chunk) != static_cast<int>(chunk)) throw VolumeError("write failed for " + path.string());
    done += chunk;
  }
}

}  // namespace

Volume read(const std::filesystem::path& path) {
  auto raw = read_raw(path);
  Volume v(raw.dims, raw.spacing);
  v.affine = raw.affine;
  std::transform(raw.values.begin(), raw.values.end(), v.data.begin(), [](double x) { return static_cast<float>(x); });
  return v;
}

std::vector<std::uint8_t> read_mask(const std::filesystem::path& path, const Dims& expected) {
  auto raw = read_raw(path);
  if (!(raw.dims == expected)) throw VolumeError("mask " + path.string() + " does not match the image shape");
  std::vector<std::uint8_t> m(raw.values.size());
  std::transform(raw.values.begin(), raw.values.end(), m.begin(), [](double x) { return x > 0 ? 1 : 0; });
  return m;
}

std::vector<std::int32_t> read_labels(const std::filesystem::path& path, Dims* dims_out) {
  auto raw = read_raw(path);
  if (dims_out) *dims_out = raw.dims;
  std::vector<std::int32_t> l(raw.values.size());
  std::transform(raw.values.begin(), raw.values.end(), l.begin(),
                 [](double x) { return static_cast<std::int32_t>(std::lround(x)); });
  return l;
}

void write(const std::filesystem::path& path, const Volume& volume) {
  volume.validate();
  write_raw(path, volume, kFloat32, volume.data.data(), volume.data.size() * sizeof(float));
}

void write_mask(const std::filesystem::path& path, const Volume& like, const std::vector<std::uint8_t>& mask) {
  if (static_cast<std::int64_t>(mask.size()) != like.dims.voxels()) throw VolumeError("mask size mismatch");
  write_raw(path, like, kUInt8, mask.data(), mask.size());
}

void write_labels(const std::filesystem::path& path, const Volume& like, const std::vector<std::int32_t>& labels) {
  if (static_cast<std::int64_t>(labels.size()) != like.dims.voxels()) throw VolumeError("label map size mismatch");
  write_raw(path, like, kInt32, labels.data(), labels.size() * sizeof(std::int32_t));
}

std::vector<std::int64_t> read_exclusions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw VolumeError("cannot open exclusion list " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw VolumeError("malformed exclusion list " + path.string() + ": " + e.what());
  }
  const auto& arr = j.is_object() ? j.at("excluded_axial_slices") : j;
  if (!arr.is_array()) throw VolumeError("exclusion list " + path.string() + " is not an array");
  std::vector<std::int64_t> out;
  for (const auto& v : arr) out.push_back(v.get<std::int64_t>());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void write_exclusions(const std::filesystem::path& path, const std::vector<std::int64_t>& slices) {
  std::ofstream out(path);
  if (!out) throw VolumeError("cannot write " + path.string());
  out << nlohmann::json{{"excluded_axial_slices", slices}}.dump(2) << "\n";
}

}  // namespace sr7t::nifti
