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

#ifndef SR7T_FOREST_HPP
#define SR7T_FOREST_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sr7t/csv.hpp"

namespace sr7t::stats {

struct ForestOptions {
  int n_trees = 100;
  int max_depth = 0;  // 0 = grow until pure
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  int max_features = 0;  // 0 = floor(sqrt(n_features))
  bool bootstrap = true;
};

/// Row-major design matrix with integer class labels 0..n_classes-1.
struct FeatureTable {
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;
  std::vector<double> x;
  std::vector<int> y;
  std::size_t n_rows = 0;
  std::size_t n_features = 0;

  std::span<const double> row(std::size_t i) const { return {x.data() + i * n_features, n_features}; }
  int n_classes() const { return static_cast<int>(class_names.size()); }
  void validate() const;
};

/// CSV with a label column (default "diagnosis"); "subject_id" is ignored,
/// "gender" may be F/M, every other column must be numeric.
FeatureTable read_feature_table(const std::filesystem::path& path, const std::string& label_column = "diagnosis");

/// CART classification tree, Gini impurity, random feature subsets per split.
class DecisionTree {
 public:
  void fit(const FeatureTable& data, std::span<const std::size_t> rows, int n_classes, const ForestOptions& opt,
           std::uint64_t seed);
  std::span<const double> predict_proba(std::span<const double> x) const;
  /// Unnormalized impurity decrease per feature.
  const std::vector<double>& impurity_decrease() const { return importance_; }

 private:
  struct Node {
    int feature = -1;
    double threshold = 0;
    int left = -1;
    int right = -1;
    std::size_t proba = 0;  // offset into probs_
  };
  std::vector<Node> nodes_;
  std::vector<double> probs_;
  std::vector<double> importance_;
  int n_classes_ = 0;
};

class RandomForest {
 public:
  explicit RandomForest(ForestOptions opt = {}) : opt_(opt) {}
  void fit(const FeatureTable& data, std::span<const std::size_t> rows, std::uint64_t seed);
  int predict(std::span<const double> x) const;
  /// Mean over trees of per-tree normalized impurity decrease (sums to 1).
  std::vector<double> feature_importances() const;

 private:
  ForestOptions opt_;
  std::vector<DecisionTree> trees_;
  int n_classes_ = 0;
  std::size_t n_features_ = 0;
};

/// Mean per-class recall over classes present in `truth`.
double balanced_accuracy(std::span<const int> truth, std::span<const int> pred, int n_classes);
double accuracy(std::span<const int> truth, std::span<const int> pred);

struct PredictionResult {
  std::vector<double> accuracy;           // one per repeat
  std::vector<double> balanced_accuracy;  // one per repeat
  std::vector<std::string> feature_names;
  std::vector<double> importances;        // mean over folds and repeats
};

/// Repeated stratified k-fold cross-validation of a random forest. Repeat r
/// uses seed + r for its folds and forests, so results do not depend on the
/// number of worker threads.
PredictionResult diagnostic_prediction(const FeatureTable& features, int n_repeats, std::uint64_t seed,
                                       const ForestOptions& opt = {}, int n_folds = 10, int jobs = 1);

CsvTable prediction_scores_csv(const PredictionResult& r);
CsvTable importances_csv(const PredictionResult& r);

}  // namespace sr7t::stats

#endif  // SR7T_FOREST_HPP
