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

#include "sr7t/volume.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace sr7t {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

}  // namespace

Volume::Volume(Dims d, Spacing s) : dims(d), spacing(s), data(static_cast<std::size_t>(d.voxels()), 0.0f) {
  affine.rows = {s.x, 0, 0, 0, 0, s.y, 0, 0, 0, 0, s.z, 0};
}

bool Volume::is_excluded(std::int64_t z) const {
  return std::find(excluded_axial_slices.begin(), excluded_axial_slices.end(), z) !=
         excluded_axial_slices.end();
}

void Volume::validate() const {
  if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) throw VolumeError("volume has an empty dimension");
  if (static_cast<std::int64_t>(data.size()) != dims.voxels())
    throw VolumeError("volume data size does not match its dimensions");
  if (mask && static_cast<std::int64_t>(mask->size()) != dims.voxels())
    throw VolumeError("mask shape differs from data shape");
  if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
    throw VolumeError("voxel spacing must be strictly positive");
  for (auto z : excluded_axial_slices)
    if (z < 0 || z >= dims.nz)
      throw VolumeError("excluded axial slice " + std::to_string(z) + " is out of bounds");
}

Gender parse_gender(const std::string& s) {
  const auto v = lower(s);
  if (v == "f" || v == "female" || v == "0") return Gender::Female;
  if (v == "m" || v == "male" || v == "1") return Gender::Male;
  throw VolumeError("unknown gender '" + s + "'");
}

Diagnosis parse_diagnosis(const std::string& s) {
  const auto v = lower(s);
  if (v == "unimpaired" || v == "cu" || v == "cn" || v == "0") return Diagnosis::Unimpaired;
  if (v == "impaired" || v == "ci" || v == "1") return Diagnosis::Impaired;
  throw VolumeError("unknown diagnosis '" + s + "'");
}

std::vector<float> ContextVector::values() const {
  std::vector<float> v;
  v.reserve(4);
  v.push_back(static_cast<float>(age_scaled));
  v.push_back(static_cast<float>(gender_code));
  if (diagnosis_code) v.push_back(static_cast<float>(*diagnosis_code));
  v.push_back(static_cast<float>(slice_location));
  return v;
}

double percentile_linear(std::vector<float>& values, double pct) {
  if (values.empty()) throw VolumeError("percentile of an empty set");
  if (pct < 0 || pct > 100) throw VolumeError("percentile outside [0, 100]");
  const double h = (static_cast<double>(values.size()) - 1.0) * pct / 100.0;
  const auto lo_idx = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo_idx);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo_idx), values.end());
  const double lo = values[lo_idx];
  if (frac == 0.0 || lo_idx + 1 >= values.size()) return lo;
  const double hi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo_idx) + 1, values.end());
  return lo + frac * (hi - lo);
}

Volume clipped_minmax_normalize(const Volume& volume, double upper_percentile) {
  volume.validate();
  if (!volume.mask) throw VolumeError("normalization requires a brain mask");
  std::vector<float> masked;
  masked.reserve(static_cast<std::size_t>(volume.dims.voxels() / 4));
  for (std::size_t i = 0; i < volume.data.size(); ++i)
    if ((*volume.mask)[i]) masked.push_back(volume.data[i]);
  if (masked.size() < 2) throw VolumeError("normalization requires at least two masked voxels");
  const double lo = *std::min_element(masked.begin(), masked.end());
  const double hi = percentile_linear(masked, upper_percentile);
  if (!(hi > lo)) throw VolumeError("degenerate volume: masked percentile equals masked minimum");

  Volume out = volume;
  const double scale = hi - lo;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (!(*volume.mask)[i]) {
      out.data[i] = 0.0f;
      continue;
    }
    const double v = (static_cast<double>(volume.data[i]) - lo) / scale;
    out.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

double slice_location(std::int64_t s, std::int64_t top, std::int64_t bot) {
  if (top <= bot) throw VolumeError("slice_location requires top > bot");
  return static_cast<double>(2 * s - (top + bot)) / static_cast<double>(top - bot);
}

bool slice_has_mask(const Volume& volume, std::int64_t z) {
  if (!volume.mask) throw VolumeError("volume has no mask");
  const auto n = volume.dims.slice_voxels();
  const auto* m = volume.mask->data() + z * n;
  return std::any_of(m, m + n, [](std::uint8_t v) { return v != 0; });
}

std::pair<std::int64_t, std::int64_t> brain_extent(const Volume& volume) {
  if (!volume.mask) throw VolumeError("brain extent requires a mask");
  std::int64_t top = -1;
  std::int64_t bot = -1;
  for (std::int64_t z = 0; z < volume.dims.nz; ++z) {
    if (!slice_has_mask(volume, z)) continue;
    if (bot < 0) bot = z;
    top = z;
  }
  if (top < 0) throw VolumeError("brain mask is empty");
  return {top, bot};
}

CroppedVolume crop_center(const Volume& volume, std::pair<std::int64_t, std::int64_t> target_hw,
                          std::int64_t divisor) {
  volume.validate();
  const auto [h, w] = target_hw;
  if (h <= 0 || w <= 0) throw VolumeError("crop size must be positive");
  if (h > volume.dims.nx || w > volume.dims.ny)
    throw VolumeError("crop (" + std::to_string(h) + "," + std::to_string(w) + ") is larger than the volume (" +
                      std::to_string(volume.dims.nx) + "," + std::to_string(volume.dims.ny) + ")");
  if (divisor > 1 && (h % divisor != 0 || w % divisor != 0))
    throw VolumeError("crop size must be divisible by " + std::to_string(divisor));

  double cx = (volume.dims.nx - 1) / 2.0;
  double cy = (volume.dims.ny - 1) / 2.0;
  if (volume.mask) {
    std::int64_t x_min = volume.dims.nx, x_max = -1, y_min = volume.dims.ny, y_max = -1;
    for (std::int64_t z = 0; z < volume.dims.nz; ++z)
      for (std::int64_t y = 0; y < volume.dims.ny; ++y)
        for (std::int64_t x = 0; x < volume.dims.nx; ++x)
          if ((*volume.mask)[volume.index(x, y, z)]) {
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
          }
    if (x_max >= 0) {
      cx = (x_min + x_max) / 2.0;
      cy = (y_min + y_max) / 2.0;
    }
  }
  CropWindow win;
  win.height = h;
  win.width = w;
  win.source = volume.dims;
  win.x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(cx - (h - 1) / 2.0)), 0,
                                    volume.dims.nx - h);
  win.y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(cy - (w - 1) / 2.0)), 0,
                                    volume.dims.ny - w);
  return {apply_crop(volume, win), win};
}

Volume apply_crop(const Volume& volume, const CropWindow& win) {
  if (!(volume.dims == win.source)) throw VolumeError("crop window was computed for a different grid");
  Volume out({win.height, win.width, volume.dims.nz}, volume.spacing);
  out.affine = volume.affine;
  // Shift the origin so world coordinates of kept voxels are unchanged.
  for (int r = 0; r < 3; ++r)
    out.affine.rows[r * 4 + 3] += volume.affine.rows[r * 4 + 0] * win.x0 + volume.affine.rows[r * 4 + 1] * win.y0;
  out.excluded_axial_slices = volume.excluded_axial_slices;
  if (volume.mask) out.mask.emplace(static_cast<std::size_t>(out.dims.voxels()), 0);
  for (std::int64_t z = 0; z < out.dims.nz; ++z)
    for (std::int64_t y = 0; y < out.dims.ny; ++y)
      for (std::int64_t x = 0; x < out.dims.nx; ++x) {
        const auto src = volume.index(x + win.x0, y + win.y0, z);
        const auto dst = out.index(x, y, z);
        out.data[dst] = volume.data[src];
        if (volume.mask) (*out.mask)[dst] = (*volume.mask)[src];
      }
  return out;
}

Volume uncrop(const Volume& cropped, const CropWindow& win) {
  if (cropped.dims.nx != win.height || cropped.dims.ny != win.width || cropped.dims.nz != win.source.nz)
    throw VolumeError("cropped volume does not match the crop window");
  Volume out(win.source, cropped.spacing);
  out.affine = cropped.affine;
  for (int r = 0; r < 3; ++r)
    out.affine.rows[r * 4 + 3] -= cropped.affine.rows[r * 4 + 0] * win.x0 + cropped.affine.rows[r * 4 + 1] * win.y0;
  out.excluded_axial_slices = cropped.excluded_axial_slices;
  if (cropped.mask) out.mask.emplace(static_cast<std::size_t>(out.dims.voxels()), 0);
  for (std::int64_t z = 0; z < cropped.dims.nz; ++z)
    for (std::int64_t y = 0; y < cropped.dims.ny; ++y)
      for (std::int64_t x = 0; x < cropped.dims.nx; ++x) {
        const auto src = cropped.index(x, y, z);
        const auto dst = out.index(x + win.x0, y + win.y0, z);
        out.data[dst] = cropped.data[src];
        if (cropped.mask) (*out.mask)[dst] = (*cropped.mask)[src];
      }
  return out;
}

ContextVector make_context(const SubjectMetadata& meta, std::int64_t s, std::int64_t top,
                           std::int64_t bot, bool with_diagnosis) {
  if (!(meta.age > 0)) throw VolumeError("subject " + meta.subject_id + " has a non-positive age");
  ContextVector ctx;
  ctx.age_scaled = meta.age / 100.0;
  ctx.gender_code = static_cast<int>(meta.gender);
  if (with_diagnosis) {
    if (!meta.diagnosis)
      throw VolumeError("subject " + meta.subject_id + " has no diagnosis but the model is conditioned on it");
    ctx.diagnosis_code = static_cast<int>(*meta.diagnosis);
  }
  // A single-slice brain has no extent to normalize against.
  ctx.slice_location = top == bot ? 0.0 : slice_location(s, top, bot);
  return ctx;
}

std::vector<float> axial_slice(const Volume& volume, std::int64_t z) {
  const auto H = volume.dims.nx;
  const auto W = volume.dims.ny;
  std::vector<float> out(static_cast<std::size_t>(H * W));
  for (std::int64_t x = 0; x < H; ++x)
    for (std::int64_t y = 0; y < W; ++y) out[x * W + y] = volume.at(x, y, z);
  return out;
}

std::vector<float> slice_stack(const Volume& volume, std::int64_t s, std::int64_t top,
                               std::int64_t bot, int n_slices) {
  if (n_slices < 1 || n_slices % 2 == 0) throw VolumeError("number of input slices must be odd");
  const int half = n_slices / 2;
  const auto plane = volume.dims.slice_voxels();
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(plane * n_slices));
  for (int c = -half; c <= half; ++c) {
    auto z = s + c;
    if (z < bot || z > top || z < 0 || z >= volume.dims.nz) z = s;
    const auto sl = axial_slice(volume, z);
    out.insert(out.end(), sl.begin(), sl.end());
  }
  return out;
}

std::vector<SliceSample> extract_slice_samples(const Volume& input_3t, const Volume& target_7t,
                                               const SubjectMetadata& meta, bool with_diagnosis,
                                               int n_slices) {
  input_3t.validate();
  target_7t.validate();
  if (!(input_3t.dims == target_7t.dims))
    throw VolumeError("3T and 7T volumes have different shapes");
  if (input_3t.dims.nx % kSpatialDivisor != 0 || input_3t.dims.ny % kSpatialDivisor != 0)
    throw VolumeError("in-plane shape must be divisible by " + std::to_string(kSpatialDivisor) + "; crop first");
  const auto [top, bot] = brain_extent(input_3t);
  std::vector<SliceSample> samples;
  for (std::int64_t z = bot; z <= top; ++z) {
    if (!slice_has_mask(input_3t, z) || target_7t.is_excluded(z)) continue;
    SliceSample s;
    s.height = input_3t.dims.nx;
    s.width = input_3t.dims.ny;
    s.slice_index = z;
    s.input = slice_stack(input_3t, z, top, bot, n_slices);
    s.target = axial_slice(target_7t, z);
    s.context = make_context(meta, z, top, bot, with_diagnosis);
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<std::uint8_t> mask_intersection(const Volume& a, const Volume& b) {
  if (!(a.dims == b.dims)) throw VolumeError("mask intersection of volumes with different shapes");
  std::vector<std::uint8_t> out(static_cast<std::size_t>(a.dims.voxels()));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<std::uint8_t>(a.in_mask(static_cast<std::int64_t>(i)) && b.in_mask(static_cast<std::int64_t>(i)));
  return out;
}

}  // namespace sr7t
