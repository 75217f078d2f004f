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

#include "sr7t/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <map>
#include <numeric>
#include <random>

#include "sr7t/stats.hpp"

namespace sr7t::stats {

void FeatureTable::validate() const {
  if (n_rows == 0 || n_features == 0) throw StatsError("feature table is empty");
  if (x.size() != n_rows * n_features || y.size() != n_rows) throw StatsError("feature table is inconsistent");
  for (double v : x)
    if (!std::isfinite(v)) throw StatsError("feature table contains non-finite values");
  for (int c : y)
    if (c < 0 || c >= n_classes()) throw StatsError("feature table has an undeclared label");
}

FeatureTable read_feature_table(const std::filesystem::path& path, const std::string& label_column) {
  const auto t = read_csv(path);
  const auto label_col = t.column(label_column);
  FeatureTable ft;
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    if (c == label_col || t.header[c] == "subject_id") continue;
    cols.push_back(c);
    ft.feature_names.push_back(t.header[c]);
  }
  std::map<std::string, int> classes;
  for (const auto& r : t.rows) {
    if (r[label_col].empty()) throw StatsError("missing label in " + path.string());
    classes.emplace(r[label_col], 0);
  }
  int next = 0;
  for (auto& [name, id] : classes) {
    id = next++;
    ft.class_names.push_back(name);
  }
  ft.n_rows = t.rows.size();
  ft.n_features = cols.size();
  for (const auto& r : t.rows) {
    for (auto c : cols) {
      const auto& v = r[c];
      if (t.header[c] == "gender" && (v == "F" || v == "M" || v == "f" || v == "m"))
        ft.x.push_back(v == "M" || v == "m" ? 1.0 : 0.0);
      else
        ft.x.push_back(parse_double(v, t.header[c]));
    }
    ft.y.push_back(classes.at(r[label_col]));
  }
  ft.validate();
  return ft;
}

namespace {

double gini(const std::vector<double>& counts, double total) {
  if (total <= 0) return 0;
  double s = 0;
  for (double c : counts) s += c * c;
  return 1.0 - s / (total * total);
}

}  // namespace

void DecisionTree::fit(const FeatureTable& data, std::span<const std::size_t> rows, int n_classes,
                       const ForestOptions& opt, std::uint64_t seed) {
  n_classes_ = n_classes;
  nodes_.clear();
  probs_.clear();
  importance_.assign(data.n_features, 0.0);
  std::mt19937_64 rng(seed);
  const auto p = data.n_features;
  const std::size_t mtry =
      opt.max_features > 0 ? std::min<std::size_t>(opt.max_features, p)
                           : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(p))));

  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const double n_total = static_cast<double>(idx.size());
  std::vector<std::size_t> features(p);
  std::iota(features.begin(), features.end(), 0);

  struct Task {
    std::size_t begin, end;
    int depth;
    int node;
  };
  nodes_.push_back({});
  std::vector<Task> stack{{0, idx.size(), 0, 0}};
  std::vector<std::pair<double, int>> sorted;

  while (!stack.empty()) {
    const auto task = stack.back();
    stack.pop_back();
    const auto n = task.end - task.begin;
    std::vector<double> counts(n_classes_, 0.0);
    for (auto i = task.begin; i < task.end; ++i) counts[data.y[idx[i]]] += 1;
    const double node_gini = gini(counts, static_cast<double>(n));

    auto make_leaf = [&] {
      nodes_[task.node].proba = probs_.size();
      for (double c : counts) probs_.push_back(c / static_cast<double>(n));
    };
    if (node_gini == 0.0 || n < static_cast<std::size_t>(opt.min_samples_split) ||
        n < 2 * static_cast<std::size_t>(opt.min_samples_leaf) || (opt.max_depth > 0 && task.depth >= opt.max_depth)) {
      make_leaf();
      continue;
    }

    double best_gain = 0;
    int best_feature = -1;
    double best_threshold = 0;
    std::shuffle(features.begin(), features.end(), rng);
    for (std::size_t fi = 0; fi < p; ++fi) {
      if (fi >= mtry && best_feature >= 0) break;
      const auto f = features[fi];
      sorted.clear();
      for (auto i = task.begin; i < task.end; ++i) sorted.emplace_back(data.x[idx[i] * p + f], data.y[idx[i]]);
      std::sort(sorted.begin(), sorted.end());
      if (sorted.front().first == sorted.back().first) continue;
      std::vector<double> left(n_classes_, 0.0), right = counts;
      for (std::size_t s = 0; s + 1 < n; ++s) {
        left[sorted[s].second] += 1;
        right[sorted[s].second] -= 1;
        if (sorted[s].first == sorted[s + 1].first) continue;
        const double nl = static_cast<double>(s + 1);
        const double nr = static_cast<double>(n - s - 1);
        if (nl < opt.min_samples_leaf || nr < opt.min_samples_leaf) continue;
        const double gain = node_gini - (nl * gini(left, nl) + nr * gini(right, nr)) / static_cast<double>(n);
        if (gain > best_gain + 1e-15) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (sorted[s].first + sorted[s + 1].first);
        }
      }
    }
    if (best_feature < 0) {
      make_leaf();
      continue;
    }
    importance_[best_feature] += best_gain * static_cast<double>(n) / n_total;
    auto mid = std::partition(idx.begin() + task.begin, idx.begin() + task.end, [&](std::size_t r) {
      return data.x[r * p + best_feature] <= best_threshold;
    });
    const auto split = static_cast<std::size_t>(mid - idx.begin());
    const int left_id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    const int right_id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    auto& node = nodes_[task.node];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = left_id;
    node.right = right_id;
    stack.push_back({split, task.end, task.depth + 1, right_id});
    stack.push_back({task.begin, split, task.depth + 1, left_id});
  }
}

std::span<const double> DecisionTree::predict_proba(std::span<const double> x) const {
  int i = 0;
  while (nodes_[i].feature >= 0) i = x[nodes_[i].feature] <= nodes_[i].threshold ? nodes_[i].left : nodes_[i].right;
  return {probs_.data() + nodes_[i].proba, static_cast<std::size_t>(n_classes_)};
}

void RandomForest::fit(const FeatureTable& data, std::span<const std::size_t> rows, std::uint64_t seed) {
  if (rows.empty()) throw StatsError("random forest fit on zero rows");
  n_classes_ = data.n_classes();
  n_features_ = data.n_features;
  trees_.assign(static_cast<std::size_t>(opt_.n_trees), {});
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
  std::vector<std::size_t> sample(rows.size());
  for (auto& tree : trees_) {
    if (opt_.bootstrap)
      for (auto& s : sample) s = rows[pick(rng)];
    else
      std::copy(rows.begin(), rows.end(), sample.begin());
    tree.fit(data, sample, n_classes_, opt_, rng());
  }
}

int RandomForest::predict(std::span<const double> x) const {
  std::vector<double> acc(n_classes_, 0.0);
  for (const auto& t : trees_) {
    const auto p = t.predict_proba(x);
    for (int c = 0; c < n_classes_; ++c) acc[c] += p[c];
  }
  return static_cast<int>(std::max_element(acc.begin(), acc.end()) - acc.begin());
}

std::vector<double> RandomForest::feature_importances() const {
  std::vector<double> out(n_features_, 0.0);
  int used = 0;
  for (const auto& t : trees_) {
    const auto& imp = t.impurity_decrease();
    const double s = std::accumulate(imp.begin(), imp.end(), 0.0);
    if (s <= 0) continue;
    for (std::size_t f = 0; f < n_features_; ++f) out[f] += imp[f] / s;
    ++used;
  }
  if (used)
    for (auto& v : out) v /= used;
  return out;
}

double accuracy(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size() || truth.empty()) throw StatsError("accuracy of mismatched or empty predictions");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += truth[i] == pred[i];
  return static_cast<double>(ok) / static_cast<double>(truth.size());
}

double balanced_accuracy(std::span<const int> truth, std::span<const int> pred, int n_classes) {
  if (truth.size() != pred.size() || truth.empty()) throw StatsError("accuracy of mismatched or empty predictions");
  std::vector<double> hit(n_classes, 0.0), total(n_classes, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    total[truth[i]] += 1;
    hit[truth[i]] += truth[i] == pred[i];
  }
  double s = 0;
  int present = 0;
  for (int c = 0; c < n_classes; ++c)
    if (total[c] > 0) {
      s += hit[c] / total[c];
      ++present;
    }
  return s / present;
}

namespace {

struct RepeatResult {
  double acc = 0;
  double bacc = 0;
  std::vector<double> importances;
};

RepeatResult run_repeat(const FeatureTable& data, const ForestOptions& opt, int n_folds, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Stratified folds: shuffle each class, deal its members round-robin.
  std::vector<int> fold(data.n_rows, 0);
  int offset = 0;
  for (int c = 0; c < data.n_classes(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < data.n_rows; ++i)
      if (data.y[i] == c) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t j = 0; j < members.size(); ++j) fold[members[j]] = static_cast<int>((j + offset) % n_folds);
    offset += static_cast<int>(members.size());
  }
  std::vector<int> pred(data.n_rows, 0);
  RepeatResult r;
  r.importances.assign(data.n_features, 0.0);
  for (int f = 0; f < n_folds; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < data.n_rows; ++i)
      if (fold[i] != f) train.push_back(i);
    RandomForest forest(opt);
    forest.fit(data, train, rng());
    for (std::size_t i = 0; i < data.n_rows; ++i)
      if (fold[i] == f) pred[i] = forest.predict(data.row(i));
    const auto imp = forest.feature_importances();
    for (std::size_t j = 0; j < imp.size(); ++j) r.importances[j] += imp[j] / n_folds;
  }
  r.acc = accuracy(data.y, pred);
  r.bacc = balanced_accuracy(data.y, pred, data.n_classes());
  return r;
}

}  // namespace

PredictionResult diagnostic_prediction(const FeatureTable& features, int n_repeats, std::uint64_t seed,
                                       const ForestOptions& opt, int n_folds, int jobs) {
  features.validate();
  if (n_repeats < 1) throw StatsError("n_repeats must be >= 1");
  if (n_folds < 2) throw StatsError("cross-validation needs at least 2 folds");
  if (features.n_classes() < 3) throw StatsError("diagnostic prediction needs at least 3 classes");
  std::vector<int> members(features.n_classes(), 0);
  for (int c : features.y) members[c] += 1;
  for (int c = 0; c < features.n_classes(); ++c)
    if (members[c] < n_folds)
      throw StatsError("class '" + features.class_names[c] + "' has " + std::to_string(members[c]) +
                       " members, fewer than the " + std::to_string(n_folds) +
                       " folds; use at most " + std::to_string(*std::min_element(members.begin(), members.end())) +
                       " folds");

  std::vector<RepeatResult> results(static_cast<std::size_t>(n_repeats));
  jobs = std::max(1, jobs);
  if (jobs == 1) {
    for (int r = 0; r < n_repeats; ++r) results[r] = run_repeat(features, opt, n_folds, seed + static_cast<std::uint64_t>(r));
  } else {
    std::vector<std::future<void>> workers;
    std::atomic<int> next{0};
    for (int w = 0; w < jobs; ++w)
      workers.push_back(std::async(std::launch::async, [&] {
        for (int r = next++; r < n_repeats; r = next++)
          results[r] = run_repeat(features, opt, n_folds, seed + static_cast<std::uint64_t>(r));
      }));
    for (auto& w : workers) w.get();
  }

  PredictionResult out;
  out.feature_names = features.feature_names;
  out.importances.assign(features.n_features, 0.0);
  for (const auto& r : results) {
    out.accuracy.push_back(r.acc);
    out.balanced_accuracy.push_back(r.bacc);
    for (std::size_t j = 0; j < r.importances.size(); ++j) out.importances[j] += r.importances[j] / n_repeats;
  }
  return out;
}

CsvTable prediction_scores_csv(const PredictionResult& r) {
  CsvTable t;
  t.header = {"repeat", "accuracy", "balanced_accuracy"};
  for (std::size_t i = 0; i < r.accuracy.size(); ++i)
    t.add_row({std::to_string(i), format_double(r.accuracy[i]), format_double(r.balanced_accuracy[i])});
  return t;
}

CsvTable importances_csv(const PredictionResult& r) {
  CsvTable t;
  t.header = {"feature", "importance"};
  std::vector<std::size_t> order(r.importances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return r.importances[a] > r.importances[b]; });
  for (auto i : order) t.add_row({r.feature_names[i], format_double(r.importances[i])});
  return t;
}

}  // namespace sr7t::stats
