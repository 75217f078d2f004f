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

#include "sr7t/survey.hpp"

#include <png.h>
#include <sqlite3.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include "sr7t/csv.hpp"
#include "sr7t/manifest.hpp"
#include "sr7t/nifti.hpp"

namespace sr7t::survey {

using nlohmann::json;
using Kind = SurveyError::Kind;

// ---------------------------------------------------------------------------
// Study planning and rendering

std::vector<SubjectVariants> load_study_manifest(const std::filesystem::path& path) {
  const auto table = read_csv(path);
  for (const char* col : {"subject_id", "image_type", "path"}) {
    if (!table.find(col)) throw SurveyError(Kind::BadRequest, path.string() + ": missing column '" + col + "'");
  }
  const auto dir = path.parent_path();
  std::map<std::string, std::map<std::string, std::filesystem::path>> by_subject;
  std::set<std::string> types;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& sid = table.at(r, "subject_id");
    const auto& type = table.at(r, "image_type");
    if (sid.empty() || type.empty()) throw SurveyError(Kind::BadRequest, "manifest row " + std::to_string(r + 1) + " is incomplete");
    if (!by_subject[sid].emplace(type, resolve_path(table.at(r, "path"), dir)).second) {
      throw SurveyError(Kind::BadRequest, "subject " + sid + " lists variant " + type + " twice");
    }
    types.insert(type);
  }
  if (types.size() < 2) throw SurveyError(Kind::BadRequest, "a study needs at least two image types");
  std::vector<SubjectVariants> out;
  for (const auto& [sid, paths] : by_subject) {
    for (const auto& t : types) {
      if (!paths.count(t)) throw SurveyError(Kind::BadRequest, "subject " + sid + " is missing variant " + t);
    }
    SubjectVariants s;
    s.subject_id = sid;
    for (const auto& [type, p] : paths) {
      Variant v{type, nifti::read(p)};
      if (!s.variants.empty() && !(v.volume.dims == s.variants.front().volume.dims)) {
        throw SurveyError(Kind::BadRequest, "subject " + sid + ": variant " + type + " is on a different grid");
      }
      s.variants.push_back(std::move(v));
    }
    out.push_back(std::move(s));
  }
  return out;
}

json StudyPlan::to_json() const {
  json qs = json::array();
  for (const auto& q : queries) {
    qs.push_back({{"query_id", q.query_id},
                  {"subject_id", q.subject_id},
                  {"axis", q.axis},
                  {"index", q.index},
                  {"display_types", q.display_types}});
  }
  return {{"name", name}, {"criteria", criteria}, {"seed", seed}, {"variant_types", variant_types}, {"queries", qs}};
}

StudyPlan StudyPlan::from_json(const json& j) {
  StudyPlan p;
  p.name = j.at("name");
  p.criteria = j.at("criteria").get<std::vector<std::string>>();
  p.seed = j.at("seed");
  p.variant_types = j.at("variant_types").get<std::vector<std::string>>();
  for (const auto& q : j.at("queries")) {
    p.queries.push_back({q.at("query_id"), q.at("subject_id"), q.at("axis"), q.at("index"),
                         q.at("display_types").get<std::vector<std::string>>()});
  }
  return p;
}

std::string slot_label(std::size_t i) {
  std::string s;
  ++i;
  while (i > 0) {
    --i;
    s.insert(s.begin(), static_cast<char>('A' + i % 26));
    i /= 26;
  }
  return s;
}

std::vector<int> blinded_order(int k, std::mt19937_64& rng) {
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

namespace {

bool plane_nonzero(const Volume& v, int axis, std::int64_t index) {
  const auto& d = v.dims;
  for (std::int64_t a = 0; a < (axis == 0 ? d.ny : d.nx); ++a) {
    for (std::int64_t b = 0; b < (axis == 2 ? d.ny : d.nz); ++b) {
      float x = axis == 0 ? v.at(index, a, b) : axis == 1 ? v.at(a, index, b) : v.at(a, b, index);
      if (x != 0.0f) return true;
    }
  }
  return false;
}

std::int64_t axis_size(const Dims& d, int axis) { return axis == 0 ? d.nx : axis == 1 ? d.ny : d.nz; }

}  // namespace

StudyPlan plan_study(const std::vector<SubjectVariants>& subjects, std::size_t n_queries,
                     std::vector<std::string> criteria, std::uint64_t seed, std::string name) {
  if (criteria.empty()) throw SurveyError(Kind::BadRequest, "a study needs at least one criterion");
  for (const auto& c : criteria) {
    if (c.empty()) throw SurveyError(Kind::BadRequest, "criterion prompts must be nonempty");
  }
  if (subjects.empty()) throw SurveyError(Kind::BadRequest, "no subjects in the study manifest");
  if (n_queries == 0 || n_queries > subjects.size()) {
    throw SurveyError(Kind::BadRequest, "n_queries must be between 1 and " + std::to_string(subjects.size()));
  }
  StudyPlan plan;
  plan.name = std::move(name);
  plan.criteria = std::move(criteria);
  plan.seed = seed;
  for (const auto& v : subjects.front().variants) plan.variant_types.push_back(v.image_type);
  std::sort(plan.variant_types.begin(), plan.variant_types.end());
  const int k = static_cast<int>(plan.variant_types.size());

  std::vector<const SubjectVariants*> order;
  for (const auto& s : subjects) {
    std::vector<std::string> types;
    for (const auto& v : s.variants) types.push_back(v.image_type);
    std::sort(types.begin(), types.end());
    if (types != plan.variant_types) throw SurveyError(Kind::BadRequest, "subject " + s.subject_id + " has a different variant set");
    order.push_back(&s);
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->subject_id < b->subject_id; });
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(n_queries);

  const std::size_t width = std::max<std::size_t>(2, std::to_string(n_queries).size());
  for (std::size_t qi = 0; qi < n_queries; ++qi) {
    const auto& s = *order[qi];
    QueryPlan q;
    const auto num = std::to_string(qi + 1);
    q.query_id = "q" + std::string(width - num.size(), '0') + num;
    q.subject_id = s.subject_id;
    std::uniform_int_distribution<int> pick_axis(0, 2);
    q.axis = pick_axis(rng);
    std::vector<std::int64_t> candidates;
    for (std::int64_t i = 0; i < axis_size(s.variants.front().volume.dims, q.axis); ++i) {
      bool ok = true;
      for (const auto& v : s.variants) ok = ok && plane_nonzero(v.volume, q.axis, i);
      if (ok) candidates.push_back(i);
    }
    if (candidates.empty()) throw SurveyError(Kind::BadRequest, "subject " + s.subject_id + " has no nonzero slice");
    std::uniform_int_distribution<std::size_t> pick_slice(0, candidates.size() - 1);
    q.index = candidates[pick_slice(rng)];
    for (int slot : blinded_order(k, rng)) q.display_types.push_back(plan.variant_types[static_cast<std::size_t>(slot)]);
    plan.queries.push_back(std::move(q));
  }
  return plan;
}

std::vector<float> extract_plane(const Volume& v, int axis, std::int64_t index, std::int64_t& width,
                                 std::int64_t& height) {
  const auto& d = v.dims;
  if (axis < 0 || axis > 2) throw SurveyError(Kind::BadRequest, "axis must be 0, 1 or 2");
  if (index < 0 || index >= axis_size(d, axis)) throw SurveyError(Kind::BadRequest, "slice index out of range");
  width = axis == 0 ? d.ny : d.nx;
  height = axis == 2 ? d.ny : d.nz;
  std::vector<float> out(static_cast<std::size_t>(width * height));
  for (std::int64_t r = 0; r < height; ++r) {
    const auto b = height - 1 - r;
    for (std::int64_t c = 0; c < width; ++c) {
      out[r * width + c] = axis == 0 ? v.at(index, c, b) : axis == 1 ? v.at(c, index, b) : v.at(c, b, index);
    }
  }
  return out;
}

namespace {

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

}  // namespace

std::vector<std::uint8_t> encode_png_gray(const std::vector<std::uint8_t>& pixels, std::int64_t width,
                                          std::int64_t height) {
  if (width <= 0 || height <= 0 || pixels.size() != static_cast<std::size_t>(width * height)) {
    throw SurveyError(Kind::BadRequest, "encode_png_gray: pixel buffer does not match the image size");
  }
  std::vector<std::uint8_t> out;
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (std::int64_t r = 0; r < height; ++r) rows[r] = const_cast<png_bytep>(pixels.data() + r * width);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed");
  }
  png_set_write_fn(png, &out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::vector<std::vector<std::uint8_t>>> render_study(const StudyPlan& plan,
                                                                 const std::vector<SubjectVariants>& subjects) {
  std::map<std::string, const SubjectVariants*> by_id;
  for (const auto& s : subjects) by_id[s.subject_id] = &s;
  std::vector<std::vector<std::vector<std::uint8_t>>> out;
  for (const auto& q : plan.queries) {
    auto it = by_id.find(q.subject_id);
    if (it == by_id.end()) throw SurveyError(Kind::BadRequest, "subject " + q.subject_id + " is not loaded");
    std::map<std::string, std::vector<float>> planes;
    std::int64_t w = 0, h = 0;
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (const auto& v : it->second->variants) {
      auto p = extract_plane(v.volume, q.axis, q.index, w, h);
      for (float x : p) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
      planes[v.image_type] = std::move(p);
    }
    const float span = hi > lo ? hi - lo : 1.0f;
    std::vector<std::vector<std::uint8_t>> images;
    for (const auto& type : q.display_types) {
      const auto& p = planes.at(type);
      std::vector<std::uint8_t> px(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) {
        px[i] = static_cast<std::uint8_t>(std::lround(std::clamp((p[i] - lo) / span, 0.0f, 1.0f) * 255.0f));
      }
      images.push_back(encode_png_gray(px, w, h));
    }
    out.push_back(std::move(images));
  }
  return out;
}

json Acknowledgment::to_json() const {
  return {{"status", "recorded"},
          {"query_id", query_id},
          {"criterion_index", criterion_index},
          {"progress", {{"answered", answered}, {"total", total}}}};
}

// ---------------------------------------------------------------------------
// Store

namespace {

class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &s_, nullptr) != SQLITE_OK) {
      throw std::runtime_error(std::string("sqlite prepare: ") + sqlite3_errmsg(db));
    }
  }
  ~Stmt() { sqlite3_finalize(s_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, const std::string& v) {
    sqlite3_bind_text(s_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }
  Stmt& bind(int i, std::int64_t v) {
    sqlite3_bind_int64(s_, i, v);
    return *this;
  }
  Stmt& bind_blob(int i, const std::vector<std::uint8_t>& v) {
    sqlite3_bind_blob(s_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT);
    return *this;
  }
  bool step() {
    const int rc = sqlite3_step(s_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw std::runtime_error(std::string("sqlite step: ") + sqlite3_errmsg(db_));
  }
  std::string text(int i) const {
    const auto* p = sqlite3_column_text(s_, i);
    return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(s_, i)))
             : std::string();
  }
  std::int64_t integer(int i) const { return sqlite3_column_int64(s_, i); }
  std::vector<std::uint8_t> blob(int i) const {
    const auto* p = static_cast<const std::uint8_t*>(sqlite3_column_blob(s_, i));
    return p ? std::vector<std::uint8_t>(p, p + sqlite3_column_bytes(s_, i)) : std::vector<std::uint8_t>();
  }

 private:
  sqlite3* db_;
  sqlite3_stmt* s_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw std::runtime_error("sqlite: " + msg);
  }
}

std::string random_hex(std::size_t bytes) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (std::size_t i = 0; i < bytes; ++i) {
    const auto b = static_cast<unsigned>(rng() & 0xff);
    s += digits[b >> 4];
    s += digits[b & 15];
  }
  return s;
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS studies (
  id TEXT PRIMARY KEY,
  name TEXT NOT NULL,
  created_ms INTEGER NOT NULL,
  plan TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS images (
  study_id TEXT NOT NULL,
  query_id TEXT NOT NULL,
  label TEXT NOT NULL,
  png BLOB NOT NULL,
  PRIMARY KEY (study_id, query_id, label)
);
CREATE TABLE IF NOT EXISTS sessions (
  token TEXT PRIMARY KEY,
  study_id TEXT NOT NULL,
  rater_id TEXT NOT NULL,
  created_ms INTEGER NOT NULL,
  UNIQUE (study_id, rater_id)
);
CREATE TABLE IF NOT EXISTS records (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  study_id TEXT NOT NULL,
  rater_id TEXT NOT NULL,
  query_id TEXT NOT NULL,
  criterion INTEGER NOT NULL,
  ranks TEXT NOT NULL,
  created_ms INTEGER NOT NULL,
  UNIQUE (study_id, rater_id, query_id, criterion)
);
CREATE TRIGGER IF NOT EXISTS records_no_update BEFORE UPDATE ON records
BEGIN SELECT RAISE(ABORT, 'records are append-only'); END;
CREATE TRIGGER IF NOT EXISTS records_no_delete BEFORE DELETE ON records
BEGIN SELECT RAISE(ABORT, 'records are append-only'); END;
)sql";

}  // namespace

struct SurveyStore::Db {
  sqlite3* handle = nullptr;
  mutable std::map<std::string, StudyPlan> plans;
  ~Db() { sqlite3_close(handle); }

  const StudyPlan& plan(const std::string& id) const {
    auto it = plans.find(id);
    if (it != plans.end()) return it->second;
    Stmt s(handle, "SELECT plan FROM studies WHERE id = ?");
    s.bind(1, id);
    if (!s.step()) throw SurveyError(Kind::NotFound, "unknown study '" + id + "'");
    return plans.emplace(id, StudyPlan::from_json(json::parse(s.text(0)))).first->second;
  }

  std::pair<std::string, std::string> session(const std::string& token) const {
    Stmt s(handle, "SELECT study_id, rater_id FROM sessions WHERE token = ?");
    s.bind(1, token);
    if (!s.step()) throw SurveyError(Kind::NotFound, "unknown session");
    return {s.text(0), s.text(1)};
  }

  std::set<std::pair<std::string, int>> answered(const std::string& study, const std::string& rater) const {
    Stmt s(handle, "SELECT query_id, criterion FROM records WHERE study_id = ? AND rater_id = ?");
    s.bind(1, study).bind(2, rater);
    std::set<std::pair<std::string, int>> out;
    while (s.step()) out.emplace(s.text(0), static_cast<int>(s.integer(1)));
    return out;
  }
};

SurveyStore::SurveyStore(const std::filesystem::path& db_path) : db_(std::make_unique<Db>()) {
  if (sqlite3_open_v2(db_path.string().c_str(), &db_->handle,
                      SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX, nullptr) != SQLITE_OK) {
    throw std::runtime_error("cannot open survey store " + db_path.string());
  }
  exec(db_->handle, "PRAGMA journal_mode=WAL; PRAGMA foreign_keys=ON;");
  exec(db_->handle, kSchema);
}

SurveyStore::~SurveyStore() = default;

std::string SurveyStore::create_study(const StudyPlan& plan,
                                      const std::vector<std::vector<std::vector<std::uint8_t>>>& images) {
  if (images.size() != plan.queries.size()) throw SurveyError(Kind::BadRequest, "rendered image count does not match the plan");
  std::lock_guard lock(mu_);
  const std::string id = "s" + random_hex(6);
  exec(db_->handle, "BEGIN");
  try {
    Stmt s(db_->handle, "INSERT INTO studies (id, name, created_ms, plan) VALUES (?, ?, ?, ?)");
    s.bind(1, id).bind(2, plan.name).bind(3, now_ms()).bind(4, plan.to_json().dump());
    s.step();
    for (std::size_t q = 0; q < plan.queries.size(); ++q) {
      if (images[q].size() != plan.k()) throw SurveyError(Kind::BadRequest, "query image count does not match k");
      for (std::size_t i = 0; i < images[q].size(); ++i) {
        Stmt im(db_->handle, "INSERT INTO images (study_id, query_id, label, png) VALUES (?, ?, ?, ?)");
        im.bind(1, id).bind(2, plan.queries[q].query_id).bind(3, slot_label(i)).bind_blob(4, images[q][i]);
        im.step();
      }
    }
    exec(db_->handle, "COMMIT");
  } catch (...) {
    exec(db_->handle, "ROLLBACK");
    throw;
  }
  return id;
}

StudyPlan SurveyStore::plan(const std::string& study_id) const {
  std::lock_guard lock(mu_);
  return db_->plan(study_id);
}

std::vector<std::string> SurveyStore::study_ids() const {
  std::lock_guard lock(mu_);
  Stmt s(db_->handle, "SELECT id FROM studies ORDER BY created_ms, id");
  std::vector<std::string> out;
  while (s.step()) out.push_back(s.text(0));
  return out;
}

std::string SurveyStore::open_session(const std::string& study_id, const std::string& rater_id) {
  if (rater_id.empty()) throw SurveyError(Kind::BadRequest, "rater_id must be nonempty");
  std::lock_guard lock(mu_);
  db_->plan(study_id);
  {
    Stmt s(db_->handle, "SELECT token FROM sessions WHERE study_id = ? AND rater_id = ?");
    s.bind(1, study_id).bind(2, rater_id);
    if (s.step()) return s.text(0);
  }
  const auto token = random_hex(16);
  Stmt s(db_->handle, "INSERT INTO sessions (token, study_id, rater_id, created_ms) VALUES (?, ?, ?, ?)");
  s.bind(1, token).bind(2, study_id).bind(3, rater_id).bind(4, now_ms());
  s.step();
  return token;
}

std::string SurveyStore::session_study(const std::string& token) const {
  std::lock_guard lock(mu_);
  return db_->session(token).first;
}

NextItem SurveyStore::next(const std::string& token) const {
  std::lock_guard lock(mu_);
  const auto [study, rater] = db_->session(token);
  const auto& plan = db_->plan(study);
  const auto done = db_->answered(study, rater);
  NextItem item;
  item.total = plan.queries.size() * plan.criteria.size();
  item.answered = done.size();
  for (const auto& q : plan.queries) {
    for (std::size_t c = 0; c < plan.criteria.size(); ++c) {
      if (done.count({q.query_id, static_cast<int>(c)})) continue;
      item.query_id = q.query_id;
      item.criterion_index = static_cast<int>(c);
      item.criterion = plan.criteria[c];
      for (std::size_t i = 0; i < plan.k(); ++i) item.labels.push_back(slot_label(i));
      return item;
    }
  }
  item.complete = true;
  return item;
}

std::vector<std::uint8_t> SurveyStore::image(const std::string& study_id, const std::string& query_id,
                                             const std::string& label) const {
  std::lock_guard lock(mu_);
  Stmt s(db_->handle, "SELECT png FROM images WHERE study_id = ? AND query_id = ? AND label = ?");
  s.bind(1, study_id).bind(2, query_id).bind(3, label);
  if (!s.step()) throw SurveyError(Kind::NotFound, "no image " + label + " for query " + query_id);
  return s.blob(0);
}

Acknowledgment SurveyStore::submit(const std::string& token, const std::string& query_id, int criterion_index,
                                   const std::vector<int>& ranks) {
  std::lock_guard lock(mu_);
  const auto [study, rater] = db_->session(token);
  const auto& plan = db_->plan(study);
  if (std::none_of(plan.queries.begin(), plan.queries.end(), [&](const auto& q) { return q.query_id == query_id; })) {
    throw SurveyError(Kind::NotFound, "unknown query '" + query_id + "'");
  }
  if (criterion_index < 0 || static_cast<std::size_t>(criterion_index) >= plan.criteria.size()) {
    throw SurveyError(Kind::BadRequest, "criterion index out of range");
  }
  const auto k = plan.k();
  std::vector<int> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  bool perm = sorted.size() == k;
  for (std::size_t i = 0; perm && i < k; ++i) perm = sorted[i] == static_cast<int>(i + 1);
  if (!perm) throw SurveyError(Kind::BadRequest, "ranks must be a permutation of 1.." + std::to_string(k));

  const auto payload = json(ranks).dump();
  {
    Stmt s(db_->handle, "SELECT ranks FROM records WHERE study_id = ? AND rater_id = ? AND query_id = ? AND criterion = ?");
    s.bind(1, study).bind(2, rater).bind(3, query_id).bind(4, std::int64_t{criterion_index});
    const bool exists = s.step();
    if (exists && s.text(0) != payload) {
      throw SurveyError(Kind::Conflict, "a different ranking was already submitted for this query and criterion");
    }
    if (!exists) {
      Stmt ins(db_->handle,
               "INSERT INTO records (study_id, rater_id, query_id, criterion, ranks, created_ms) "
               "VALUES (?, ?, ?, ?, ?, ?)");
      ins.bind(1, study).bind(2, rater).bind(3, query_id).bind(4, std::int64_t{criterion_index});
      ins.bind(5, payload).bind(6, now_ms());
      ins.step();
    }
  }
  Acknowledgment ack;
  ack.query_id = query_id;
  ack.criterion_index = criterion_index;
  ack.total = plan.queries.size() * plan.criteria.size();
  ack.answered = db_->answered(study, rater).size();
  return ack;
}

stats::RankTable SurveyStore::export_ranks(const std::string& study_id, bool include_unfinished) const {
  std::lock_guard lock(mu_);
  const auto& plan = db_->plan(study_id);
  std::map<std::string, std::size_t> query_pos;
  for (std::size_t i = 0; i < plan.queries.size(); ++i) query_pos[plan.queries[i].query_id] = i;

  struct Row {
    std::string rater;
    std::size_t query;
    int criterion;
    std::vector<int> ranks;
  };
  std::vector<Row> rows;
  std::map<std::string, std::size_t> per_rater;
  Stmt s(db_->handle, "SELECT rater_id, query_id, criterion, ranks FROM records WHERE study_id = ?");
  s.bind(1, study_id);
  while (s.step()) {
    rows.push_back({s.text(0), query_pos.at(s.text(1)), static_cast<int>(s.integer(2)),
                    json::parse(s.text(3)).get<std::vector<int>>()});
    ++per_rater[rows.back().rater];
  }
  if (rows.empty()) throw SurveyError(Kind::NotFound, "study " + study_id + " has no submissions");
  const auto full = plan.queries.size() * plan.criteria.size();
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.rater, a.query, a.criterion) < std::tie(b.rater, b.query, b.criterion);
  });
  stats::RankTable out;
  for (const auto& r : rows) {
    if (!include_unfinished && per_rater[r.rater] < full) continue;
    const auto& q = plan.queries[r.query];
    std::vector<stats::RankRecord> recs;
    for (std::size_t i = 0; i < q.display_types.size(); ++i) {
      recs.push_back({r.rater, q.query_id, plan.criteria[static_cast<std::size_t>(r.criterion)], q.display_types[i],
                      r.ranks[i]});
    }
    std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.image_type < b.image_type; });
    out.insert(out.end(), recs.begin(), recs.end());
  }
  if (out.empty()) {
    throw SurveyError(Kind::NotFound, "study " + study_id + " has no completed sessions; include unfinished ones to export");
  }
  return out;
}

}  // namespace sr7t::survey
