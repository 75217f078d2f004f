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

#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <random>

#include "sr7t/csv.hpp"
#include "sr7t/manifest.hpp"
#include "sr7t/nifti.hpp"
#include "sr7t/volume.hpp"
#include "support.hpp"

using namespace sr7t;
using sr7t::testing::phantom;
using sr7t::testing::ScratchDir;

namespace {

Volume filled(Dims d, float value) {
  Volume v(d);
  std::fill(v.data.begin(), v.data.end(), value);
  v.mask = std::vector<std::uint8_t>(static_cast<std::size_t>(d.voxels()), 1);
  return v;
}

Volume slab(Dims d, std::int64_t z0, std::int64_t z1) {
  Volume v(d);
  v.mask = std::vector<std::uint8_t>(static_cast<std::size_t>(d.voxels()), 0);
  for (std::int64_t z = z0; z <= z1; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x) {
        (*v.mask)[v.index(x, y, z)] = 1;
        v.data[v.index(x, y, z)] = static_cast<float>(1 + x + 2 * y + 3 * z);
      }
  return v;
}

// Sorted-array percentile with h = (n - 1) p / 100.
double percentile_oracle(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (v.size() - 1) * p / 100.0;
  const auto i = static_cast<std::size_t>(h);
  if (i + 1 >= v.size()) return v.back();
  return v[i] + (h - i) * (v[i + 1] - v[i]);
}

SubjectMetadata meta_of(const std::string& id, double age = 70.0) {
  SubjectMetadata m;
  m.subject_id = id;
  m.age = age;
  m.gender = Gender::Male;
  m.diagnosis = Diagnosis::Impaired;
  return m;
}

}  // namespace

TEST_CASE("csv round-trips quoted fields") {
  CsvTable t;
  t.header = {"a", "b"};
  t.add_row({"plain", "with,comma"});
  t.add_row({"quote \"inside\"", "multi\nline"});
  const auto back = parse_csv(to_csv(t));
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  CHECK(back.at(1, "b") == "multi\nline");
  CHECK_THROWS_AS(back.at(0, "missing"), CsvError);
  CHECK_THROWS_AS(t.add_row({"short"}), CsvError);
  CHECK(parse_double(format_double(0.1), "x") == 0.1);
  CHECK_THROWS(parse_double("1.5abc", "x"));
}

TEST_CASE("percentile matches a sorted-array oracle") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 40);
    std::vector<float> v(n);
    std::vector<double> d(n);
    for (int i = 0; i < n; ++i) d[i] = v[i] = static_cast<float>(rng() % 1000) / 7.0f;
    const double p = (rng() % 10001) / 100.0;
    CHECK(percentile_linear(v, p) == doctest::Approx(percentile_oracle(d, p)).epsilon(1e-12));
  }
}

TEST_CASE("clipped min-max normalization") {
  SUBCASE("values 0..100: the maximum clips to exactly 1") {
    Volume v({101, 1, 1});
    for (int i = 0; i <= 100; ++i) v.data[i] = static_cast<float>(i);
    v.mask = std::vector<std::uint8_t>(101, 1);
    const auto n = clipped_minmax_normalize(v);
    CHECK(n.data[100] == 1.0f);
    CHECK(n.data[99] == 1.0f);
    CHECK(n.data[0] == 0.0f);
    CHECK(n.data[50] == doctest::Approx(50.0 / 99.0));
  }
  SUBCASE("brute-force oracle on {0, 5, 10} plus background") {
    Volume v({4, 1, 1});
    v.data = {0, 5, 10, 123};
    v.mask = std::vector<std::uint8_t>{1, 1, 1, 0};
    const auto n = clipped_minmax_normalize(v);
    const double hi = percentile_oracle({0, 5, 10}, 99.0);
    for (int i = 0; i < 3; ++i) CHECK(n.data[i] == doctest::Approx(std::clamp(v.data[i] / hi, 0.0, 1.0)));
    CHECK(n.data[3] == 0.0f);
  }
  SUBCASE("idempotent on already normalized data") {
    Volume v({10, 10, 1});
    for (int i = 0; i < 100; ++i) v.data[i] = i < 2 ? 1.0f : static_cast<float>(i % 50) / 50.0f;
    v.data[5] = 0.0f;
    v.mask = std::vector<std::uint8_t>(100, 1);
    v = clipped_minmax_normalize(v);
    const auto again = clipped_minmax_normalize(v);
    // p99 of the normalized volume is 1 whenever >1% of voxels saturate.
    CHECK(again.data == v.data);
  }
  SUBCASE("scale equivariance") {
    const auto v = phantom({32, 32, 8}, 3);
    const auto base = clipped_minmax_normalize(v);
    for (float c : {0.25f, 2.0f, 8.0f}) {
      auto s = v;
      for (auto& x : s.data) x *= c;
      CHECK(clipped_minmax_normalize(s).data == base.data);
    }
    for (float c : {0.3f, 3.7f, 1234.5f}) {
      auto s = v;
      for (auto& x : s.data) x *= c;
      const auto n = clipped_minmax_normalize(s);
      for (std::size_t i = 0; i < n.data.size(); ++i) REQUIRE(n.data[i] == doctest::Approx(base.data[i]).epsilon(1e-5));
    }
  }
  SUBCASE("errors") {
    auto v = filled({4, 4, 1}, 3.0f);
    CHECK_THROWS_AS(clipped_minmax_normalize(v), VolumeError);
    v.mask.reset();
    v.data[0] = 0;
    CHECK_THROWS_AS(clipped_minmax_normalize(v), VolumeError);
  }
}

TEST_CASE("slice location") {
  CHECK(slice_location(30, 50, 10) == 0.0);
  CHECK(slice_location(50, 50, 10) == 1.0);
  CHECK(slice_location(10, 50, 10) == -1.0);
  CHECK_THROWS_AS(slice_location(3, 5, 5), VolumeError);
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const std::int64_t bot = rng() % 50, top = bot + 1 + rng() % 100;
    for (std::int64_t s = bot; s < top; ++s) {
      REQUIRE(slice_location(s + 1, top, bot) > slice_location(s, top, bot));
      REQUIRE(slice_location(top + bot - s, top, bot) == -slice_location(s, top, bot));
    }
  }
}

TEST_CASE("brain extent") {
  CHECK(brain_extent(slab({4, 4, 60}, 10, 50)) == std::pair<std::int64_t, std::int64_t>{50, 10});
  CHECK(brain_extent(slab({4, 4, 20}, 7, 7)) == std::pair<std::int64_t, std::int64_t>{7, 7});
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    Volume v({5, 4, 30});
    v.mask = std::vector<std::uint8_t>(v.data.size(), 0);
    for (int k = 0; k < 4; ++k) (*v.mask)[rng() % v.data.size()] = 1;
    std::int64_t top = -1, bot = -1;
    for (std::int64_t z = 0; z < 30; ++z)
      for (std::int64_t i = 0; i < 20; ++i)
        if ((*v.mask)[z * 20 + i]) {
          if (bot < 0) bot = z;
          top = z;
        }
    CHECK(brain_extent(v) == std::pair{top, bot});
  }
  Volume empty({3, 3, 3});
  empty.mask = std::vector<std::uint8_t>(27, 0);
  CHECK_THROWS_AS(brain_extent(empty), VolumeError);
}

TEST_CASE("crop center") {
  auto v = phantom({320, 256, 3}, 4);
  v.excluded_axial_slices = {1};
  const auto c = crop_center(v, {288, 224});
  CHECK(c.volume.dims == Dims{288, 224, 3});
  CHECK(c.window.x0 == 16);
  CHECK(c.window.y0 == 16);
  CHECK(c.volume.excluded_axial_slices == std::vector<std::int64_t>{1});
  std::int64_t brain = 0, kept = 0;
  for (auto m : *v.mask) brain += m;
  for (auto m : *c.volume.mask) kept += m;
  CHECK(kept == brain);

  for (std::int64_t x : {0, 100, 287})
    for (std::int64_t y : {0, 50, 223}) CHECK(c.volume.at(x, y, 2) == v.at(x + c.window.x0, y + c.window.y0, 2));
  const auto back = uncrop(c.volume, c.window);
  CHECK(back.data == v.data);
  CHECK(*back.mask == *v.mask);
  for (int i = 0; i < 12; ++i) CHECK(back.affine.rows[i] == doctest::Approx(v.affine.rows[i]));

  const auto same = crop_center(v, {320, 256});
  CHECK(same.volume.data == v.data);
  CHECK_THROWS_AS(crop_center(v, {352, 224}), VolumeError);
  CHECK_THROWS_AS(crop_center(v, {280, 224}), VolumeError);
}

TEST_CASE("crop keeps an off-center brain inside the grid") {
  Volume v({64, 64, 1});
  v.mask = std::vector<std::uint8_t>(v.data.size(), 0);
  for (int x = 50; x < 60; ++x)
    for (int y = 2; y < 6; ++y) (*v.mask)[v.index(x, y, 0)] = 1;
  const auto c = crop_center(v, {32, 32});
  CHECK(c.window.x0 == 32);
  CHECK(c.window.y0 == 0);
}

TEST_CASE("slice samples") {
  const Dims d{32, 32, 60};
  const auto t3 = slab(d, 10, 50);
  auto t7 = slab(d, 10, 50);
  SUBCASE("one sample per brain slice") {
    const auto s = extract_slice_samples(t3, t7, meta_of("s"), true);
    REQUIRE(s.size() == 41);
    CHECK(s.front().slice_index == 10);
    CHECK(s.front().context.slice_location == -1.0);
    CHECK(s.back().context.slice_location == 1.0);
    CHECK(s[20].context.slice_location == 0.0);
    CHECK(s[0].context.age_scaled == doctest::Approx(0.7));
    CHECK(s[0].context.values().size() == 4);
    for (const auto& x : s) {
      CHECK(x.height % 32 == 0);
      CHECK(x.width % 32 == 0);
    }
  }
  SUBCASE("edge slices replicate the center") {
    const auto s = extract_slice_samples(t3, t7, meta_of("s"), false);
    const std::size_t plane = 32 * 32;
    const auto& first = s.front().input;
    CHECK(std::equal(first.begin(), first.begin() + plane, first.begin() + plane));
    CHECK_FALSE(std::equal(first.begin() + plane, first.begin() + 2 * plane, first.begin() + 2 * plane));
    const auto& last = s.back().input;
    CHECK(std::equal(last.begin() + plane, last.begin() + 2 * plane, last.begin() + 2 * plane));
    CHECK(s.front().context.values().size() == 3);
  }
  SUBCASE("excluded targets still feed neighbors") {
    t7.excluded_axial_slices = {30};
    const auto s = extract_slice_samples(t3, t7, meta_of("s"), true);
    CHECK(s.size() == 40);
    CHECK(std::none_of(s.begin(), s.end(), [](const SliceSample& x) { return x.slice_index == 30; }));
    const auto it = std::find_if(s.begin(), s.end(), [](const SliceSample& x) { return x.slice_index == 29; });
    const auto slice30 = axial_slice(t3, 30);
    CHECK(std::equal(slice30.begin(), slice30.end(), it->input.begin() + 2 * 32 * 32));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(extract_slice_samples(t3, slab({32, 32, 59}, 10, 50), meta_of("s"), true), VolumeError);
    CHECK_THROWS_AS(extract_slice_samples(slab({48, 32, 4}, 0, 3), slab({48, 32, 4}, 0, 3), meta_of("s"), true),
                    VolumeError);
    auto m = meta_of("s");
    m.diagnosis.reset();
    CHECK_THROWS_AS(extract_slice_samples(t3, t7, m, true), VolumeError);
    CHECK_NOTHROW(extract_slice_samples(t3, t7, m, false));
  }
}

TEST_CASE("volume validation") {
  auto v = filled({2, 2, 2}, 1.0f);
  v.excluded_axial_slices = {2};
  CHECK_THROWS_AS(v.validate(), VolumeError);
  v.excluded_axial_slices = {1};
  v.spacing.x = 0;
  CHECK_THROWS_AS(v.validate(), VolumeError);
}

TEST_CASE("nifti round trip") {
  ScratchDir dir("nifti");
  auto v = phantom({12, 10, 6}, 5);
  v.spacing = {0.5, 1.0, 0.5};
  v.affine.rows = {0.5, 0, 0, -3, 0, 1, 0, 4, 0, 0, 0.5, 7};
  v.affine.code = 1;
  for (const char* name : {"a.nii", "a.nii.gz"}) {
    nifti::write(dir / name, v);
    const auto r = nifti::read(dir / name);
    CHECK(r.dims == v.dims);
    CHECK(r.spacing == v.spacing);
    CHECK(r.data == v.data);
    for (int i = 0; i < 12; ++i) CHECK(r.affine.rows[i] == doctest::Approx(v.affine.rows[i]));
  }
  nifti::write_mask(dir / "m.nii.gz", v, *v.mask);
  CHECK(nifti::read_mask(dir / "m.nii.gz", v.dims) == *v.mask);
  CHECK_THROWS(nifti::read_mask(dir / "m.nii.gz", Dims{1, 2, 3}));

  std::vector<std::int32_t> labels(v.data.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::int32_t>(i % 60) - 3;
  nifti::write_labels(dir / "l.nii.gz", v, labels);
  Dims d;
  CHECK(nifti::read_labels(dir / "l.nii.gz", &d) == labels);
  CHECK(d == v.dims);

  nifti::write_exclusions(dir / "e.json", {3, 1, 3});
  CHECK(nifti::read_exclusions(dir / "e.json") == std::vector<std::int64_t>{1, 3});
  {
    std::ofstream f(dir / "e2.json");
    f << R"({"excluded_axial_slices": [4]})";
  }
  CHECK(nifti::read_exclusions(dir / "e2.json") == std::vector<std::int64_t>{4});

  {
    std::ofstream f(dir / "bad.nii", std::ios::binary);
    f << "not a nifti file";
  }
  CHECK_THROWS(nifti::read(dir / "bad.nii"));
  CHECK_THROWS(nifti::read(dir / "missing.nii"));
}

TEST_CASE("manifests resolve relative paths and the data root") {
  ScratchDir dir("manifest");
  const auto t3 = phantom({32, 32, 4}, 6);
  auto t7 = phantom({32, 32, 4}, 7);
  nifti::write(dir / "a3.nii.gz", t3);
  nifti::write(dir / "a7.nii.gz", t7);
  nifti::write_exclusions(dir / "ex.json", {2});
  {
    std::ofstream f(dir / "pairs.csv");
    f << "subject_id,t3,t7,mask_3t,mask_7t,exclusions\n";
    f << "a,a3.nii.gz,a7.nii.gz,,,ex.json\n";
  }
  const auto entries = read_pair_manifest(dir / "pairs.csv");
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].t3 == dir / "a3.nii.gz");
  CHECK_FALSE(entries[0].mask_3t);
  const auto [v3, v7] = load_pair(entries[0]);
  CHECK(v7.excluded_axial_slices == std::vector<std::int64_t>{2});
  REQUIRE(v3.mask);
  for (std::size_t i = 0; i < v3.data.size(); ++i) REQUIRE(((*v3.mask)[i] != 0) == (v3.data[i] != 0));

  {
    std::ofstream f(dir / "meta.csv");
    f << "subject_id,age,gender,diagnosis,split\n"
      << "a,71.5,F,impaired,train\n"
      << "b,60,male,,test\n";
  }
  const auto meta = read_metadata(dir / "meta.csv");
  CHECK(meta.at("a").age == 71.5);
  CHECK(meta.at("a").diagnosis == Diagnosis::Impaired);
  CHECK_FALSE(meta.at("b").diagnosis);
  CHECK(meta.at("b").gender == Gender::Male);
  CHECK(meta.at("b").split == "test");

  ::setenv(kDataRootEnv, dir.path().c_str(), 1);
  CHECK(resolve_path("x/y.nii", "/elsewhere") == dir / "x/y.nii");
  CHECK(resolve_path("/abs/y.nii", "/elsewhere") == "/abs/y.nii");
  ::unsetenv(kDataRootEnv);
  CHECK(resolve_path("y.nii", "/elsewhere") == "/elsewhere/y.nii");
}
