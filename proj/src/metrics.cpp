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

#include "sr7t/metrics.hpp"

#include <array>
#include <cmath>
#include <map>

namespace sr7t::metrics {

namespace {

void check_sizes(std::size_t a, std::size_t b, std::size_t region) {
  if (a != b) throw MetricError("images have different sizes");
  if (region != a) throw MetricError("region size differs from image size");
}

}  // namespace

std::vector<std::uint8_t> comparison_region(const Volume& reference, const Volume& other) {
  auto region = mask_intersection(reference, other);
  const auto plane = reference.dims.slice_voxels();
  for (std::int64_t z = 0; z < reference.dims.nz; ++z) {
    if (!reference.is_excluded(z) && !other.is_excluded(z)) continue;
    std::fill(region.begin() + z * plane, region.begin() + (z + 1) * plane, 0);
  }
  return region;
}

double mse(std::span<const float> a, std::span<const float> b, std::span<const std::uint8_t> region) {
  check_sizes(a.size(), b.size(), region.size());
  double sum = 0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!region[i]) continue;
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
    ++n;
  }
  if (n == 0) throw MetricError("empty comparison region");
  return sum / static_cast<double>(n);
}

double psnr(std::span<const float> a, std::span<const float> b, std::span<const std::uint8_t> region) {
  const double m = mse(a, b, region);
  if (m == 0.0) throw MetricError("PSNR is undefined for identical images (MSE = 0)");
  return -10.0 * std::log10(m);
}

double ssim(std::span<const float> a, std::span<const float> b, std::span<const std::uint8_t> region) {
  check_sizes(a.size(), b.size(), region.size());
  double sa = 0, sb = 0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!region[i]) continue;
    sa += a[i];
    sb += b[i];
    ++n;
  }
  if (n == 0) throw MetricError("empty comparison region");
  const double ma = sa / n;
  const double mb = sb / n;
  double va = 0, vb = 0, cov = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!region[i]) continue;
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  va /= n;
  vb /= n;
  cov /= n;
  return ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) / ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
}

double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw MetricError("segmentations have different sizes");
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0;
    const bool y = b[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double label_dice(std::span<const std::int32_t> a, std::span<const std::int32_t> b, std::int32_t label) {
  if (a.size() != b.size()) throw MetricError("segmentations have different sizes");
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] == label;
    const bool y = b[i] == label;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double per_subject_mean_dice(std::span<const std::int32_t> a, std::span<const std::int32_t> b,
                             const std::set<std::int32_t>& excluded) {
  if (a.size() != b.size()) throw MetricError("segmentations have different sizes");
  // One pass: per-label counts |A|, |B|, |A n B|.
  std::map<std::int32_t, std::array<std::int64_t, 3>> counts;
  for (std::size_t i = 0; i < a.size(); ++i) {
    counts[a[i]][0] += 1;
    counts[b[i]][1] += 1;
    if (a[i] == b[i]) counts[a[i]][2] += 1;
  }
  double sum = 0;
  int n = 0;
  for (const auto& [label, c] : counts) {
    if (label == 0 || excluded.count(label) || c[0] == 0 || c[1] == 0) continue;
    sum += 2.0 * static_cast<double>(c[2]) / static_cast<double>(c[0] + c[1]);
    ++n;
  }
  if (n == 0) throw MetricError("no shared labels left after exclusions");
  return sum / n;
}

ImageScores compare_volumes(const Volume& reference, const Volume& prediction) {
  if (!(reference.dims == prediction.dims)) throw MetricError("volumes are on different grids");
  const auto region = comparison_region(reference, prediction);
  ImageScores s;
  for (auto r : region) s.region_voxels += r;
  s.mse = mse(reference.data, prediction.data, region);
  s.psnr = s.mse == 0.0 ? INFINITY : -10.0 * std::log10(s.mse);
  s.ssim = ssim(reference.data, prediction.data, region);
  return s;
}

CsvTable metrics_report(const std::vector<MetricRow>& rows) {
  CsvTable t;
  t.header = {"subject_id", "metric", "value", "sd"};
  std::map<std::string, std::vector<double>> by_metric;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    t.add_row({r.subject_id, r.metric, format_double(r.value), ""});
    if (!by_metric.count(r.metric)) order.push_back(r.metric);
    by_metric[r.metric].push_back(r.value);
  }
  for (const auto& m : order) {
    const auto& v = by_metric[m];
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    t.add_row({"ALL", m, format_double(mean), format_double(sd)});
  }
  return t;
}

}  // namespace sr7t::metrics
