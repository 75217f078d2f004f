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

#ifndef SR7T_SURVEY_HPP
#define SR7T_SURVEY_HPP

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr7t/stats.hpp"
#include "sr7t/volume.hpp"

namespace sr7t::survey {

class SurveyError : public std::runtime_error {
 public:
  enum class Kind { BadRequest, NotFound, Conflict };
  SurveyError(Kind kind, const std::string& what) : std::runtime_error(what), kind(kind) {}
  Kind kind;
};

struct Variant {
  std::string image_type;
  Volume volume;
};

struct SubjectVariants {
  std::string subject_id;
  std::vector<Variant> variants;
};

/// CSV with subject_id, image_type, path. Every subject must provide the
/// same set of image types on the same grid.
std::vector<SubjectVariants> load_study_manifest(const std::filesystem::path& path);

struct QueryPlan {
  std::string query_id;
  std::string subject_id;
  int axis = 2;  // 0 = sagittal (x), 1 = coronal (y), 2 = axial (z)
  std::int64_t index = 0;
  std::vector<std::string> display_types;  // true type shown at display slot i
};

struct StudyPlan {
  std::string name;
  std::vector<std::string> criteria;
  std::uint64_t seed = 0;
  std::vector<std::string> variant_types;  // sorted
  std::vector<QueryPlan> queries;

  std::size_t k() const { return variant_types.size(); }
  nlohmann::json to_json() const;
  static StudyPlan from_json(const nlohmann::json& j);
};

/// Blinded label of display slot i: A, B, ..., Z, AA, AB, ...
std::string slot_label(std::size_t i);

/// Uniform random permutation of 0..k-1: entry i is the variant shown at slot i.
std::vector<int> blinded_order(int k, std::mt19937_64& rng);

/// Seeded query selection: n_queries subjects, a random axis and a random
/// slice on it that is nonzero in every variant, and a blinded order per query.
StudyPlan plan_study(const std::vector<SubjectVariants>& subjects, std::size_t n_queries,
                     std::vector<std::string> criteria, std::uint64_t seed, std::string name = "study");

/// One plane of a volume: width runs along the first remaining axis, rows
/// from the top of the second remaining axis down.
std::vector<float> extract_plane(const Volume& v, int axis, std::int64_t index, std::int64_t& width,
                                 std::int64_t& height);

/// 8-bit grayscale PNG.
std::vector<std::uint8_t> encode_png_gray(const std::vector<std::uint8_t>& pixels, std::int64_t width,
                                          std::int64_t height);

/// PNGs per query in display order, windowed with the min and max over all
/// variants of that query.
std::vector<std::vector<std::vector<std::uint8_t>>> render_study(const StudyPlan& plan,
                                                                 const std::vector<SubjectVariants>& subjects);

struct NextItem {
  bool complete = false;
  std::string query_id;
  int criterion_index = 0;
  std::string criterion;
  std::vector<std::string> labels;
  std::size_t answered = 0;
  std::size_t total = 0;
};

struct Acknowledgment {
  std::string query_id;
  int criterion_index = 0;
  std::size_t answered = 0;
  std::size_t total = 0;
  nlohmann::json to_json() const;
};

/// SQLite-backed study store. Submitted rankings are append-only.
class SurveyStore {
 public:
  explicit SurveyStore(const std::filesystem::path& db_path);
  ~SurveyStore();
  SurveyStore(const SurveyStore&) = delete;
  SurveyStore& operator=(const SurveyStore&) = delete;

  std::string create_study(const StudyPlan& plan, const std::vector<std::vector<std::vector<std::uint8_t>>>& images);
  StudyPlan plan(const std::string& study_id) const;
  std::vector<std::string> study_ids() const;

  /// Token of the rater's session, created on first use.
  std::string open_session(const std::string& study_id, const std::string& rater_id);
  NextItem next(const std::string& token) const;
  std::vector<std::uint8_t> image(const std::string& study_id, const std::string& query_id,
                                  const std::string& label) const;
  std::string session_study(const std::string& token) const;

  /// ranks[i] is the rank of display slot i. Identical resubmission returns
  /// the same acknowledgment; a different payload is a conflict.
  Acknowledgment submit(const std::string& token, const std::string& query_id, int criterion_index,
                        const std::vector<int>& ranks);

  /// Unblinded ranks of completed sessions (all sessions when
  /// include_unfinished), sorted by rater, query order, criterion, type.
  stats::RankTable export_ranks(const std::string& study_id, bool include_unfinished = false) const;

 private:
  struct Db;
  std::unique_ptr<Db> db_;
  mutable std::mutex mu_;
};

/// JSON/PNG HTTP front end of a SurveyStore.
class SurveyServer {
 public:
  explicit SurveyServer(SurveyStore& store);
  ~SurveyServer();
  /// Binds to host:port (port 0 picks a free one) and returns the port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace sr7t::survey

#endif  // SR7T_SURVEY_HPP
