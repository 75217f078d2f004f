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

#include "sr7t/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace sr7t::stats {

RankTable read_rank_table(const std::filesystem::path& path) {
  const auto t = read_csv(path);
  RankTable out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    RankRecord rec;
    rec.rater_id = t.at(r, "rater_id");
    rec.query_id = t.at(r, "query_id");
    rec.criterion = t.get_or(r, "criterion");
    rec.image_type = t.at(r, "image_type");
    const double rank = parse_double(t.at(r, "rank"), "rank");
    if (rank != std::floor(rank) || rank < 1) throw StatsError("rank must be a positive integer");
    rec.rank = static_cast<int>(rank);
    out.push_back(std::move(rec));
  }
  return out;
}

CsvTable rank_table_csv(const RankTable& table) {
  CsvTable t;
  t.header = {"rater_id", "query_id", "criterion", "image_type", "rank"};
  for (const auto& r : table) t.add_row({r.rater_id, r.query_id, r.criterion, r.image_type, std::to_string(r.rank)});
  return t;
}

namespace {

struct Design {
  std::vector<std::string> levels;
  // subjects x levels matrix of the dependent variable.
  std::vector<std::vector<double>> y;
};

Design build_design(const RankTable& ranks, const std::optional<std::string>& criterion, AnovaGrain grain) {
  std::set<std::string> levels;
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::vector<int>>> blocks;
  for (const auto& r : ranks) {
    if (criterion && r.criterion != *criterion) continue;
    levels.insert(r.image_type);
    blocks[{r.rater_id, r.query_id}][r.image_type].push_back(r.rank);
  }
  if (blocks.empty()) throw StatsError("no rank records" + (criterion ? " for criterion '" + *criterion + "'" : std::string{}));
  if (levels.size() < 2) throw StatsError("at least two image types are required");

  std::vector<std::string> problems;
  for (const auto& [key, cells] : blocks) {
    for (const auto& lv : levels) {
      auto it = cells.find(lv);
      if (it == cells.end())
        problems.push_back("rater " + key.first + " / query " + key.second + ": missing " + lv);
      else if (it->second.size() > 1)
        problems.push_back("rater " + key.first + " / query " + key.second + ": " + std::to_string(it->second.size()) +
                           " ranks for " + lv);
    }
  }
  if (grain == AnovaGrain::Rater) {
    std::map<std::string, std::size_t> per_rater;
    for (const auto& [key, cells] : blocks) per_rater[key.first] += 1;
    const auto n0 = per_rater.begin()->second;
    for (const auto& [rater, n] : per_rater)
      if (n != n0) problems.push_back("rater " + rater + " answered " + std::to_string(n) + " queries, expected " + std::to_string(n0));
  }
  if (!problems.empty()) {
    std::string msg = "unbalanced design (" + std::to_string(problems.size()) + " offending cells):";
    for (std::size_t i = 0; i < problems.size() && i < 20; ++i) msg += "\n  " + problems[i];
    if (problems.size() > 20) msg += "\n  ...";
    throw StatsError(msg);
  }

  Design d;
  d.levels.assign(levels.begin(), levels.end());
  if (grain == AnovaGrain::RaterQuery) {
    for (const auto& [key, cells] : blocks) {
      std::vector<double> row;
      for (const auto& lv : d.levels) row.push_back(cells.at(lv).front());
      d.y.push_back(std::move(row));
    }
  } else {
    std::map<std::string, std::pair<std::vector<double>, int>> acc;
    for (const auto& [key, cells] : blocks) {
      auto& [sum, n] = acc[key.first];
      sum.resize(d.levels.size(), 0.0);
      for (std::size_t j = 0; j < d.levels.size(); ++j) sum[j] += cells.at(d.levels[j]).front();
      ++n;
    }
    for (auto& [rater, sn] : acc) {
      for (auto& v : sn.first) v /= sn.second;
      d.y.push_back(sn.first);
    }
  }
  return d;
}

}  // namespace

AnovaResult rm_anova(const RankTable& ranks, const std::optional<std::string>& criterion, AnovaGrain grain) {
  const auto d = build_design(ranks, criterion, grain);
  const auto n = d.y.size();
  const auto k = d.levels.size();
  if (n < 2) throw StatsError("repeated-measures ANOVA needs at least two subjects");

  double grand = 0;
  std::vector<double> level_mean(k, 0.0), subj_mean(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      grand += d.y[i][j];
      level_mean[j] += d.y[i][j];
      subj_mean[i] += d.y[i][j];
    }
  grand /= static_cast<double>(n * k);
  for (auto& m : level_mean) m /= static_cast<double>(n);
  for (auto& m : subj_mean) m /= static_cast<double>(k);

  AnovaResult r;
  r.levels = d.levels;
  r.level_means = level_mean;
  r.n_subjects = n;
  for (std::size_t j = 0; j < k; ++j) r.ss_effect += n * (level_mean[j] - grand) * (level_mean[j] - grand);
  for (std::size_t i = 0; i < n; ++i) r.ss_subjects += k * (subj_mean[i] - grand) * (subj_mean[i] - grand);
  // Interaction residual computed directly rather than by subtraction.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double e = d.y[i][j] - level_mean[j] - subj_mean[i] + grand;
      r.ss_error += e * e;
    }
  r.df_effect = static_cast<double>(k - 1);
  r.df_error = static_cast<double>((k - 1) * (n - 1));
  r.ms_error = r.ss_error / r.df_error;
  const double ms_effect = r.ss_effect / r.df_effect;
  if (r.ss_error <= 0.0) {
    r.F = ms_effect > 0 ? std::numeric_limits<double>::infinity() : 0.0;
    r.p = ms_effect > 0 ? 0.0 : 1.0;
    return r;
  }
  r.F = ms_effect / r.ms_error;
  boost::math::fisher_f dist(r.df_effect, r.df_error);
  r.p = boost::math::cdf(boost::math::complement(dist, r.F));
  return r;
}

double ptukey(double q, int k, double df) {
  if (k < 2) throw StatsError("studentized range needs k >= 2");
  if (!(df > 0)) throw StatsError("studentized range needs df > 0");
  if (!(q > 0)) return 0.0;
  using boost::math::quadrature::gauss_kronrod;
  const boost::math::normal norm;
  const double kk = static_cast<double>(k);

  // P(range of k standard normals < w).
  auto range_cdf = [&](double w) {
    if (w <= 0) return 0.0;
    auto f = [&](double z) {
      const double inner = boost::math::cdf(norm, z) - boost::math::cdf(norm, z - w);
      if (inner <= 0) return 0.0;
      return kk * boost::math::pdf(norm, z) * std::pow(inner, kk - 1.0);
    };
    const double v = gauss_kronrod<double, 31>::integrate(f, -8.5, 8.5 + w, 12, 1e-13);
    return std::min(1.0, std::max(0.0, v));
  };
  if (std::isinf(df)) return range_cdf(q);

  // Density of s = chi_df / sqrt(df), evaluated in log space.
  const double log_c = 0.5 * df * std::log(df) - std::lgamma(0.5 * df) - (0.5 * df - 1.0) * std::log(2.0);
  auto s_pdf = [&](double s) {
    if (s <= 0) return 0.0;
    return std::exp(log_c + (df - 1.0) * std::log(s) - 0.5 * df * s * s);
  };
  const double spread = 15.0 / std::sqrt(2.0 * df);
  const double mode = df > 1 ? std::sqrt((df - 1.0) / df) : 0.0;
  const double lo = std::max(0.0, mode - spread);
  const double hi = mode + spread + 1.0;
  auto g = [&](double s) { return s_pdf(s) * range_cdf(q * s); };
  double v = 0;
  if (mode > lo) v += gauss_kronrod<double, 31>::integrate(g, lo, mode, 12, 1e-12);
  v += gauss_kronrod<double, 31>::integrate(g, std::max(lo, mode), hi, 12, 1e-12);
  return std::min(1.0, std::max(0.0, v));
}

std::vector<TukeyRow> tukey_from_anova(const AnovaResult& a) {
  std::vector<TukeyRow> rows;
  const auto k = a.levels.size();
  const double se = std::sqrt(a.ms_error / static_cast<double>(a.n_subjects));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      TukeyRow r;
      r.a = a.levels[i];
      r.b = a.levels[j];
      r.mean_diff = a.level_means[i] - a.level_means[j];
      const double diff = std::abs(r.mean_diff);
      if (se == 0.0) {
        r.q = diff > 0 ? std::numeric_limits<double>::infinity() : 0.0;
        r.p_adj = diff > 0 ? 0.0 : 1.0;
      } else {
        r.q = diff / se;
        r.p_adj = std::clamp(1.0 - ptukey(r.q, static_cast<int>(k), a.df_error), 0.0, 1.0);
      }
      rows.push_back(r);
    }
  return rows;
}

std::vector<TukeyRow> tukey_posthoc(const RankTable& ranks, const std::optional<std::string>& criterion,
                                    AnovaGrain grain) {
  return tukey_from_anova(rm_anova(ranks, criterion, grain));
}

std::vector<double> benjamini_hochberg(const std::vector<double>& p) {
  const auto m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::vector<double> adj(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const auto i = order[r];
    running = std::min(running, p[i] * static_cast<double>(m) / static_cast<double>(r + 1));
    adj[i] = std::clamp(running, p[i], 1.0);
  }
  return adj;
}

PairedT paired_t(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw StatsError("paired samples differ in length");
  const auto n = a.size();
  if (n < 2) throw StatsError("paired t-test needs at least two pairs");
  PairedT r;
  r.n = n;
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  r.mean_diff = mean;
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(static_cast<double>(n - 1));
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

std::vector<PairedT> paired_t_bh(const std::map<std::string, std::vector<double>>& samples,
                                 std::vector<std::pair<std::string, std::string>> pairs) {
  if (pairs.empty())
    for (auto i = samples.begin(); i != samples.end(); ++i)
      for (auto j = std::next(i); j != samples.end(); ++j) pairs.emplace_back(i->first, j->first);
  if (pairs.empty()) throw StatsError("no comparisons requested");
  std::vector<PairedT> out;
  for (const auto& [a, b] : pairs) {
    auto ia = samples.find(a);
    auto ib = samples.find(b);
    if (ia == samples.end() || ib == samples.end()) throw StatsError("unknown sample in comparison " + a + " vs " + b);
    auto r = paired_t(ia->second, ib->second);
    r.a = a;
    r.b = b;
    out.push_back(r);
  }
  std::vector<double> p;
  for (const auto& r : out) p.push_back(r.p);
  const auto adj = benjamini_hochberg(p);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].p_adj = adj[i];
  return out;
}

KsResult ks_uniform(std::vector<double> x) {
  if (x.empty()) throw StatsError("KS test of an empty sample");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  KsResult r;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = std::clamp(x[i], 0.0, 1.0);
    r.D = std::max({r.D, (i + 1) / n - f, f - i / n});
  }
  // Kolmogorov limiting distribution with the Stephens small-sample correction.
  const double sn = std::sqrt(n);
  const double lambda = (sn + 0.12 + 0.11 / sn) * r.D;
  if (lambda < 1e-3) {
    r.p = 1.0;
    return r;
  }
  double sum = 0;
  for (int j = 1; j <= 200; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += (j % 2 ? 1.0 : -1.0) * term;
    if (term < 1e-16) break;
  }
  r.p = std::clamp(2.0 * sum, 0.0, 1.0);
  return r;
}

CsvTable anova_csv(const AnovaResult& r, const std::string& criterion) {
  CsvTable t;
  t.header = {"criterion", "F", "p", "df_effect", "df_error", "ss_effect", "ss_error", "n_subjects"};
  t.add_row({criterion, format_double(r.F), format_double(r.p), format_double(r.df_effect), format_double(r.df_error),
             format_double(r.ss_effect), format_double(r.ss_error), std::to_string(r.n_subjects)});
  return t;
}

CsvTable tukey_csv(const std::vector<TukeyRow>& rows, const std::string& criterion) {
  CsvTable t;
  t.header = {"criterion", "a", "b", "mean_diff", "q", "p_adj"};
  for (const auto& r : rows)
    t.add_row({criterion, r.a, r.b, format_double(r.mean_diff), format_double(r.q), format_double(r.p_adj)});
  return t;
}

CsvTable paired_t_csv(const std::vector<PairedT>& rows) {
  CsvTable t;
  t.header = {"a", "b", "n", "mean_diff", "t", "p", "p_adj"};
  for (const auto& r : rows)
    t.add_row({r.a, r.b, std::to_string(r.n), format_double(r.mean_diff), format_double(r.t), format_double(r.p),
               format_double(r.p_adj)});
  return t;
}

}  // namespace sr7t::stats
