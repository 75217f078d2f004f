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

#ifndef SR7T_STATS_HPP
#define SR7T_STATS_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sr7t/csv.hpp"

namespace sr7t::stats {

class StatsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One rater's rank for one image type of one query under one criterion.
struct RankRecord {
  std::string rater_id;
  std::string query_id;
  std::string criterion;
  std::string image_type;
  int rank = 0;
  bool operator==(const RankRecord&) const = default;
};

using RankTable = std::vector<RankRecord>;

RankTable read_rank_table(const std::filesystem::path& path);
CsvTable rank_table_csv(const RankTable& table);

/// Repeated-measures blocks: every (rater, query) pair is one subject, or
/// every rater when ranks are first averaged over queries.
enum class AnovaGrain { RaterQuery, Rater };

struct AnovaResult {
  double F = 0;
  double p = 1;
  double df_effect = 0;
  double df_error = 0;
  double ss_effect = 0;
  double ss_subjects = 0;
  double ss_error = 0;
  double ms_error = 0;
  std::size_t n_subjects = 0;
  std::vector<std::string> levels;  // sorted image types
  std::vector<double> level_means;
};

/// One-factor within-subject ANOVA of rank on image type. Restricted to one
/// criterion when given. Unbalanced designs throw with the offending cells.
AnovaResult rm_anova(const RankTable& ranks, const std::optional<std::string>& criterion = std::nullopt,
                     AnovaGrain grain = AnovaGrain::RaterQuery);

struct TukeyRow {
  std::string a;
  std::string b;
  double mean_diff = 0;  // mean(a) - mean(b)
  double q = 0;
  double p_adj = 1;
};

/// Tukey HSD on the repeated-measures error term:
/// q = |m_a - m_b| / sqrt(MS_error / n), p from the studentized range
/// distribution with k groups and df_error degrees of freedom.
std::vector<TukeyRow> tukey_posthoc(const RankTable& ranks, const std::optional<std::string>& criterion = std::nullopt,
                                    AnovaGrain grain = AnovaGrain::RaterQuery);
std::vector<TukeyRow> tukey_from_anova(const AnovaResult& anova);

/// CDF of the studentized range Q(k, df); df = infinity is allowed.
double ptukey(double q, int k, double df);

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
std::vector<double> benjamini_hochberg(const std::vector<double>& p);

struct PairedT {
  std::string a;
  std::string b;
  std::size_t n = 0;
  double mean_diff = 0;
  double t = 0;
  double p = 1;
  double p_adj = 1;
};

PairedT paired_t(const std::vector<double>& a, const std::vector<double>& b);

/// Two-sided paired t-tests for the given pairs (all pairs when empty) with
/// BH adjustment across that family.
std::vector<PairedT> paired_t_bh(const std::map<std::string, std::vector<double>>& samples,
                                 std::vector<std::pair<std::string, std::string>> pairs = {});

struct KsResult {
  double D = 0;
  double p = 1;
};

/// One-sample Kolmogorov-Smirnov test against U(0, 1).
KsResult ks_uniform(std::vector<double> x);

CsvTable anova_csv(const AnovaResult& r, const std::string& criterion);
CsvTable tukey_csv(const std::vector<TukeyRow>& rows, const std::string& criterion);
CsvTable paired_t_csv(const std::vector<PairedT>& rows);

}  // namespace sr7t::stats

#endif  // SR7T_STATS_HPP
