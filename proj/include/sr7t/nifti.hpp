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

#ifndef SR7T_NIFTI_HPP
#define SR7T_NIFTI_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sr7t/volume.hpp"

namespace sr7t::nifti {

// NIfTI-1 single-file images (.nii, .nii.gz). Any scalar datatype is read
// into float with scl_slope/scl_inter applied; writes are float32 unless a
// volume is written as a label map.
Volume read(const std::filesystem::path& path);

/// Reads a mask image: voxels > 0 are brain.
std::vector<std::uint8_t> read_mask(const std::filesystem::path& path, const Dims& expected);

/// Reads an integer label map (e.g. a segmentation).
std::vector<std::int32_t> read_labels(const std::filesystem::path& path, Dims* dims_out = nullptr);

void write(const std::filesystem::path& path, const Volume& volume);
void write_mask(const std::filesystem::path& path, const Volume& like, const std::vector<std::uint8_t>& mask);
void write_labels(const std::filesystem::path& path, const Volume& like, const std::vector<std::int32_t>& labels);

/// JSON sidecar: either a bare array of axial indices or an object with an
/// "excluded_axial_slices" array.
std::vector<std::int64_t> read_exclusions(const std::filesystem::path& path);
void write_exclusions(const std::filesystem::path& path, const std::vector<std::int64_t>& slices);

}  // namespace sr7t::nifti

#endif  // SR7T_NIFTI_HPP
