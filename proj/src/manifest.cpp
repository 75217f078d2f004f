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

#include "sr7t/manifest.hpp"

#include <cstdlib>

#include "sr7t/csv.hpp"
#include "sr7t/nifti.hpp"

namespace sr7t {

fs::path resolve_path(const std::string& p, const fs::path& manifest_dir) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv(kDataRootEnv); root && *root) return fs::path(root) / path;
  return manifest_dir / path;
}

namespace {

SubjectMetadata parse_meta_row(const CsvTable& t, std::size_t r) {
  SubjectMetadata m;
  m.subject_id = t.at(r, "subject_id");
  m.age = parse_double(t.at(r, "age"), "age");
  if (!(m.age > 0)) throw VolumeError("subject " + m.subject_id + " has a non-positive age");
  m.gender = parse_gender(t.at(r, "gender"));
  const auto diag = t.get_or(r, "diagnosis");
  if (!diag.empty()) m.diagnosis = parse_diagnosis(diag);
  m.split = t.get_or(r, "split");
  return m;
}

std::optional<fs::path> optional_path(const CsvTable& t, std::size_t r, const std::string& col, const fs::path& dir) {
  const auto v = t.get_or(r, col);
  if (v.empty()) return std::nullopt;
  return resolve_path(v, dir);
}

}  // namespace

std::map<std::string, SubjectMetadata> read_metadata(const fs::path& path) {
  const auto t = read_csv(path);
  std::map<std::string, SubjectMetadata> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    auto m = parse_meta_row(t, r);
    if (out.count(m.subject_id)) throw CsvError("duplicate subject_id " + m.subject_id + " in " + path.string());
    out.emplace(m.subject_id, std::move(m));
  }
  return out;
}

std::vector<PairEntry> read_pair_manifest(const fs::path& path) {
  const auto t = read_csv(path);
  const auto dir = path.parent_path();
  std::vector<PairEntry> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    PairEntry e;
    e.subject_id = t.at(r, "subject_id");
    e.t3 = resolve_path(t.at(r, "t3"), dir);
    e.t7 = resolve_path(t.at(r, "t7"), dir);
    e.mask_3t = optional_path(t, r, "mask_3t", dir);
    e.mask_7t = optional_path(t, r, "mask_7t", dir);
    e.exclusions = optional_path(t, r, "exclusions", dir);
    out.push_back(std::move(e));
  }
  return out;
}

Volume load_volume(const fs::path& image, const std::optional<fs::path>& mask,
                   const std::optional<fs::path>& exclusions) {
  auto v = nifti::read(image);
  if (mask) {
    v.mask = nifti::read_mask(*mask, v.dims);
  } else {
    std::vector<std::uint8_t> m(v.data.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = v.data[i] != 0.0f;
    v.mask = std::move(m);
  }
  if (exclusions) v.excluded_axial_slices = nifti::read_exclusions(*exclusions);
  v.validate();
  return v;
}

std::pair<Volume, Volume> load_pair(const PairEntry& e) {
  auto t3 = load_volume(e.t3, e.mask_3t);
  auto t7 = load_volume(e.t7, e.mask_7t, e.exclusions);
  if (!(t3.dims == t7.dims))
    throw VolumeError("subject " + e.subject_id + ": 3T and 7T volumes are not on the same grid");
  return {std::move(t3), std::move(t7)};
}

std::vector<InferenceEntry> read_inference_manifest(const fs::path& path) {
  const auto t = read_csv(path);
  const auto dir = path.parent_path();
  std::vector<InferenceEntry> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    InferenceEntry e;
    e.input = resolve_path(t.at(r, "input_path"), dir);
    e.output = resolve_path(t.at(r, "output_path"), dir);
    e.mask = optional_path(t, r, "mask_path", dir);
    e.meta = parse_meta_row(t, r);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace sr7t
