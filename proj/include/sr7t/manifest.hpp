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

#ifndef SR7T_MANIFEST_HPP
#define SR7T_MANIFEST_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sr7t/volume.hpp"

namespace sr7t {

namespace fs = std::filesystem;

/// Environment variable naming the root that relative manifest paths are
/// resolved against. Without it, paths resolve against the manifest's folder.
inline constexpr const char* kDataRootEnv = "SR7T_DATA_ROOT";

fs::path resolve_path(const std::string& p, const fs::path& manifest_dir);

/// Metadata CSV: subject_id, age, gender, diagnosis, split.
std::map<std::string, SubjectMetadata> read_metadata(const fs::path& path);

/// Co-registered training pair. Columns: subject_id, t3, t7 and optionally
/// mask_3t, mask_7t, exclusions (JSON sidecar for the 7T volume).
struct PairEntry {
  std::string subject_id;
  fs::path t3;
  fs::path t7;
  std::optional<fs::path> mask_3t;
  std::optional<fs::path> mask_7t;
  std::optional<fs::path> exclusions;
};

std::vector<PairEntry> read_pair_manifest(const fs::path& path);

/// Loads one pair with masks and exclusions attached. Missing masks fall back
/// to nonzero voxels (images are skull stripped).
std::pair<Volume, Volume> load_pair(const PairEntry& entry);

Volume load_volume(const fs::path& image, const std::optional<fs::path>& mask,
                   const std::optional<fs::path>& exclusions = std::nullopt);

/// Inference manifest: input_path, output_path, subject_id, age, gender and
/// optionally diagnosis, mask_path.
struct InferenceEntry {
  fs::path input;
  fs::path output;
  std::optional<fs::path> mask;
  SubjectMetadata meta;
};

std::vector<InferenceEntry> read_inference_manifest(const fs::path& path);

}  // namespace sr7t

#endif  // SR7T_MANIFEST_HPP
