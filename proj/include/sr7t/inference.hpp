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

#ifndef SR7T_INFERENCE_HPP
#define SR7T_INFERENCE_HPP

#include <filesystem>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr7t/manifest.hpp"
#include "sr7t/model.hpp"
#include "sr7t/volume.hpp"

namespace sr7t::inference {

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Slice-by-slice synthesis of a normalized, cropped 3T volume. Slices with
/// no brain voxels are zero; predictions are clamped to [0, 1]. Geometry and
/// mask are copied from the input.
Volume synthesize_volume(model::AttentionUNet& net, const Volume& input_3t, const SubjectMetadata& meta,
                         int batch_slices = 1);

struct EntryReport {
  std::string subject_id;
  std::string input;
  std::string output;
  bool ok = false;
  std::string error;
  double seconds = 0;
};

struct BatchReport {
  std::vector<EntryReport> entries;
  double wall_seconds = 0;
  std::size_t failures() const;
  nlohmann::json to_json() const;
};

/// Runs every manifest entry; a failing entry is recorded and does not stop
/// the others.
BatchReport batch_synthesize(model::AttentionUNet& net, const std::vector<InferenceEntry>& entries, int jobs = 1,
                             int batch_slices = 1);

}  // namespace sr7t::inference

#endif  // SR7T_INFERENCE_HPP
