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

#ifndef SR7T_METRICS_HPP
#define SR7T_METRICS_HPP

#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr7t/csv.hpp"
#include "sr7t/volume.hpp"

namespace sr7t::metrics {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kSsimC1 = 1e-4;
inline constexpr double kSsimC2 = 9e-4;

/// SynthSeg / FreeSurfer cerebellar labels (white matter and cortex, both hemispheres).
inline const std::set<std::int32_t> kCerebellumLabels = {7, 8, 46, 47};

/// Voxels used for image metrics: both brain masks, minus every excluded
/// axial slice of either volume.
std::vector<std::uint8_t> comparison_region(const Volume& reference, const Volume& other);

double mse(std::span<const float> a, std::span<const float> b, std::span<const std::uint8_t> region);

/// -10 log10(MSE); identical images (MSE == 0) are an error.
double psnr(std::span<const float> a, std::span<const float> b, std::span<const std::uint8_t> region);

/// Single-window SSIM over the region with population moments.
double ssim(std::span<const float> a, std::span<const float> b, std::span<const std::uint8_t> region);

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

double label_dice(std::span<const std::int32_t> a, std::span<const std::int32_t> b, std::int32_t label);

/// Unweighted mean of per-label Dice over labels present in both maps,
/// ignoring background (0) and `excluded`.
double per_subject_mean_dice(std::span<const std::int32_t> a, std::span<const std::int32_t> b,
                             const std::set<std::int32_t>& excluded = {});

struct ImageScores {
  double psnr = 0;
  double ssim = 0;
  double mse = 0;
  std::int64_t region_voxels = 0;
};

ImageScores compare_volumes(const Volume& reference, const Volume& prediction);

struct MetricRow {
  std::string subject_id;
  std::string metric;
  double value = 0;
};

/// One row per subject per metric, then one "ALL" row per metric carrying the
/// mean in `value` and the sample standard deviation in `sd`.
CsvTable metrics_report(const std::vector<MetricRow>& rows);

}  // namespace sr7t::metrics

#endif  // SR7T_METRICS_HPP
