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

// Shared helpers for the test binaries: scratch directories and phantoms.

#ifndef SR7T_TESTS_SUPPORT_HPP
#define SR7T_TESTS_SUPPORT_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "sr7t/volume.hpp"

namespace sr7t::testing {

inline std::filesystem::path fixture_dir() { return SR7T_FIXTURE_DIR; }

class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sr7t-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Ellipsoidal "brain" with smooth tissue-like contrast and a few sharp
/// rings, scaled to arbitrary scanner units. The mask is the ellipsoid.
inline Volume phantom(Dims d, std::uint64_t seed, double scale = 800.0, double noise = 0.0) {
  Volume v(d, Spacing{1.0, 1.0, 1.0});
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(d.voxels()), 0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double cx = (d.nx - 1) / 2.0, cy = (d.ny - 1) / 2.0, cz = (d.nz - 1) / 2.0;
  const double rx = d.nx * 0.42, ry = d.ny * 0.42, rz = d.nz * 0.45;
  for (std::int64_t z = 0; z < d.nz; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x) {
        const double ux = (x - cx) / rx, uy = (y - cy) / ry, uz = (z - cz) / rz;
        const double r = std::sqrt(ux * ux + uy * uy + uz * uz);
        if (r > 1.0) continue;
        const auto i = v.index(x, y, z);
        mask[i] = 1;
        double val = 0.35 + 0.4 * std::cos(3.0 * r) + 0.15 * std::sin(0.7 * x + 0.3 * y) +
                     0.1 * (std::fmod(r * 6.0, 1.0) > 0.5 ? 1.0 : 0.0);
        if (noise > 0) val += noise * gauss(rng);
        v.data[i] = static_cast<float>(scale * std::max(val, 0.01));
      }
  v.mask = std::move(mask);
  return v;
}

}  // namespace sr7t::testing

#endif  // SR7T_TESTS_SUPPORT_HPP
