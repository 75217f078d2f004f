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

#ifndef SR7T_VOLUME_HPP
#define SR7T_VOLUME_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sr7t {

// Five x2 downsamplings need in-plane sizes divisible by 2^5.
inline constexpr std::int64_t kSpatialDivisor = 32;

class VolumeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Grid extent. The third axis (z) is the axial axis, ordered inferior to
// superior; (x, y) is the in-plane (H, W) grid.
struct Dims {
  std::int64_t nx = 0;
  std::int64_t ny = 0;
  std::int64_t nz = 0;

  std::int64_t voxels() const { return nx * ny * nz; }
  std::int64_t slice_voxels() const { return nx * ny; }
  bool operator==(const Dims&) const = default;
};

struct Spacing {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;
  bool operator==(const Spacing&) const = default;
};

// Voxel-to-world transform, rows of a 3x4 matrix (NIfTI sform layout).
struct Affine {
  std::array<double, 12> rows = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  int code = 0;
};

/// Scalar intensity grid stored x-fastest (NIfTI order), with an optional
/// brain mask and the axial slices flagged as containing artifacts.
struct Volume {
  Dims dims;
  Spacing spacing;
  Affine affine;
  std::vector<float> data;
  std::optional<std::vector<std::uint8_t>> mask;
  std::vector<std::int64_t> excluded_axial_slices;

  Volume() = default;
  Volume(Dims d, Spacing s = {});

  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x + dims.nx * (y + dims.ny * z);
  }
  float& at(std::int64_t x, std::int64_t y, std::int64_t z) { return data[index(x, y, z)]; }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const { return data[index(x, y, z)]; }
  bool in_mask(std::int64_t i) const { return !mask || (*mask)[i] != 0; }
  bool is_excluded(std::int64_t z) const;

  /// Throws VolumeError if shapes, spacing or exclusion indices are inconsistent.
  void validate() const;
};

enum class Gender { Female = 0, Male = 1 };
enum class Diagnosis { Unimpaired = 0, Impaired = 1 };

struct SubjectMetadata {
  std::string subject_id;
  double age = 0.0;
  Gender gender = Gender::Female;
  std::optional<Diagnosis> diagnosis;
  std::string split;  // "train", "val", "test" or empty
};

Gender parse_gender(const std::string& s);
Diagnosis parse_diagnosis(const std::string& s);

struct ContextVector {
  double age_scaled = 0.0;
  int gender_code = 0;
  std::optional<int> diagnosis_code;
  double slice_location = 0.0;

  /// Entries in model order: age, gender, [diagnosis], slice location.
  std::vector<float> values() const;
  std::size_t size() const { return diagnosis_code ? 4 : 3; }
};

struct SliceSample {
  std::int64_t height = 0;  // nx
  std::int64_t width = 0;   // ny
  std::int64_t slice_index = 0;
  std::vector<float> input;   // 3 x H x W, row-major, channel 1 = center
  std::vector<float> target;  // H x W (empty at inference)
  ContextVector context;
};

/// Clipped min-max normalization: lo = min and hi = 99th percentile over
/// masked voxels, out = clamp((x - lo) / (hi - lo), 0, 1), background = 0.
Volume clipped_minmax_normalize(const Volume& volume, double upper_percentile = 99.0);

/// Linear-interpolation percentile (h = (n - 1) p / 100). `values` is reordered.
double percentile_linear(std::vector<float>& values, double pct);

/// (2s - (top + bot)) / (top - bot).
double slice_location(std::int64_t s, std::int64_t top, std::int64_t bot);

/// Highest and lowest axial indices holding at least one mask voxel.
std::pair<std::int64_t, std::int64_t> brain_extent(const Volume& volume);

struct CropWindow {
  std::int64_t x0 = 0;
  std::int64_t y0 = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  Dims source;
};

struct CroppedVolume {
  Volume volume;
  CropWindow window;
};

/// In-plane crop of target_hw centered on the mask's in-plane bounding box
/// (volume center without a mask), shifted to stay inside the grid.
CroppedVolume crop_center(const Volume& volume, std::pair<std::int64_t, std::int64_t> target_hw,
                          std::int64_t divisor = 32);

/// Same crop window applied to a second co-registered volume.
Volume apply_crop(const Volume& volume, const CropWindow& window);

/// Pastes a cropped volume back into a zero grid of the original extent.
Volume uncrop(const Volume& cropped, const CropWindow& window);

ContextVector make_context(const SubjectMetadata& meta, std::int64_t s, std::int64_t top,
                           std::int64_t bot, bool with_diagnosis);

/// Builds the 3-slice input stack for axial slice s; neighbors outside
/// [bot, top] replicate the center slice.
std::vector<float> slice_stack(const Volume& volume, std::int64_t s, std::int64_t top,
                               std::int64_t bot, int n_slices = 3);

std::vector<float> axial_slice(const Volume& volume, std::int64_t z);

bool slice_has_mask(const Volume& volume, std::int64_t z);

/// One sample per masked axial slice of the input; slices excluded in the
/// target are skipped as targets but still feed neighbors.
std::vector<SliceSample> extract_slice_samples(const Volume& input_3t, const Volume& target_7t,
                                               const SubjectMetadata& meta, bool with_diagnosis,
                                               int n_slices = 3);

/// Voxelwise AND of both masks; an absent mask counts as all-brain.
std::vector<std::uint8_t> mask_intersection(const Volume& a, const Volume& b);

}  // namespace sr7t

#endif  // SR7T_VOLUME_HPP
