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

// sr7t command line: prep, train, infer, metrics, stats, survey.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>

#include "sr7t/csv.hpp"
#include "sr7t/forest.hpp"
#include "sr7t/inference.hpp"
#include "sr7t/manifest.hpp"
#include "sr7t/metrics.hpp"
#include "sr7t/nifti.hpp"
#include "sr7t/stats.hpp"
#include "sr7t/survey.hpp"
#include "sr7t/training.hpp"
#include "sr7t/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sr7t;

namespace {

const std::vector<std::string> kDefaultCriteria = {"Rank based on how good the image looks.",
                                                   "Rank based on how detailed the image is."};

struct Run {
  std::uint64_t seed = 0;
  int jobs = 1;
  json summary = json::object();
  json outputs = json::array();
  json failures = json::array();

  void output(const fs::path& p) { outputs.push_back(p.string()); }
  void fail(const std::string& item, const std::string& error) {
    std::cerr << "error: " << item << ": " << error << '\n';
    failures.push_back({{"item", item}, {"error", error}});
  }
};

void log(const std::string& msg) { std::cerr << msg << '\n'; }

std::pair<std::int64_t, std::int64_t> parse_hw(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw std::runtime_error("expected HxW, got '" + s + "'");
  return {std::stoll(s.substr(0, x)), std::stoll(s.substr(x + 1))};
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

json window_json(const CropWindow& w) {
  return {{"x0", w.x0}, {"y0", w.y0}, {"height", w.height}, {"width", w.width},
          {"source", {w.source.nx, w.source.ny, w.source.nz}}};
}

// ----------------------------------------------------------------------------- prep

struct PrepArgs {
  std::string pairs;
  std::string inputs;
  std::string out;
  std::string crop = "288x224";
  double percentile = 99.0;
};

void write_prepped(const Volume& v, const fs::path& image, const std::optional<fs::path>& mask) {
  nifti::write(image, v);
  if (mask && v.mask) nifti::write_mask(*mask, v, *v.mask);
}

void cmd_prep(Run& run, const PrepArgs& a) {
  if (a.pairs.empty() == a.inputs.empty()) throw std::runtime_error("prep needs exactly one of --pairs or --inputs");
  const fs::path out = a.out;
  fs::create_directories(out);
  const auto hw = parse_hw(a.crop);
  json windows = json::object();

  if (!a.pairs.empty()) {
    const auto entries = read_pair_manifest(a.pairs);
    CsvTable manifest;
    manifest.header = {"subject_id", "t3", "t7", "mask_3t", "mask_7t", "exclusions"};
    for (const auto& e : entries) {
      try {
        auto [t3, t7] = load_pair(e);
        auto n3 = clipped_minmax_normalize(t3, a.percentile);
        auto n7 = clipped_minmax_normalize(t7, a.percentile);
        auto cropped = crop_center(n3, hw, kSpatialDivisor);
        auto c7 = apply_crop(n7, cropped.window);
        const auto base = fs::absolute(out) / e.subject_id;
        const fs::path p3 = base.string() + "_3t.nii.gz", p7 = base.string() + "_7t.nii.gz";
        const fs::path m3 = base.string() + "_3t_mask.nii.gz", m7 = base.string() + "_7t_mask.nii.gz";
        const fs::path ex = base.string() + "_7t_exclusions.json";
        write_prepped(cropped.volume, p3, m3);
        write_prepped(c7, p7, m7);
        nifti::write_exclusions(ex, c7.excluded_axial_slices);
        manifest.add_row({e.subject_id, p3.string(), p7.string(), m3.string(), m7.string(), ex.string()});
        windows[e.subject_id] = window_json(cropped.window);
        log("prep: " + e.subject_id);
      } catch (const std::exception& ex) {
        run.fail(e.subject_id, ex.what());
      }
    }
    write_csv(out / "pairs.csv", manifest);
    run.output(out / "pairs.csv");
  } else {
    const auto entries = read_inference_manifest(a.inputs);
    CsvTable manifest;
    manifest.header = {"subject_id", "age", "gender", "diagnosis", "input_path", "output_path", "mask_path"};
    for (const auto& e : entries) {
      const auto& sid = e.meta.subject_id;
      try {
        auto v = load_volume(e.input, e.mask);
        auto cropped = crop_center(clipped_minmax_normalize(v, a.percentile), hw, kSpatialDivisor);
        const auto base = fs::absolute(out) / sid;
        const fs::path p = base.string() + "_3t.nii.gz", m = base.string() + "_3t_mask.nii.gz";
        write_prepped(cropped.volume, p, m);
        std::string diag;
        if (e.meta.diagnosis) diag = *e.meta.diagnosis == Diagnosis::Impaired ? "impaired" : "unimpaired";
        manifest.add_row({sid, format_double(e.meta.age), e.meta.gender == Gender::Male ? "M" : "F", diag, p.string(),
                          fs::absolute(e.output).string(), m.string()});
        windows[sid] = window_json(cropped.window);
        log("prep: " + sid);
      } catch (const std::exception& ex) {
        run.fail(sid, ex.what());
      }
    }
    write_csv(out / "inference.csv", manifest);
    run.output(out / "inference.csv");
  }
  write_json(out / "crops.json", windows);
  run.output(out / "crops.json");
}

// ----------------------------------------------------------------------------- train

struct TrainArgs {
  std::string arch = "unet";
  std::string config;
  std::string pairs;
  std::string metadata;
  std::string out;
  std::string resume;
  std::int64_t max_steps = -1;
};

void cmd_train(Run& run, const TrainArgs& a) {
  using namespace training;
  const auto arch = parse_arch(a.arch);
  // --seed applies unless the config file pins its own.
  json cfg_json = json::object();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw std::runtime_error("cannot read config " + a.config);
    try {
      cfg_json = json::parse(in);
    } catch (const json::exception& e) {
      throw std::runtime_error(a.config + ": " + e.what());
    }
  }
  if (cfg_json.is_object() && !cfg_json.contains("seed")) cfg_json["seed"] = run.seed;
  TrainConfig cfg = TrainConfig::from_json(cfg_json, arch);
  if (cfg.arch != arch) throw std::runtime_error("config arch does not match --arch");

  const auto meta = read_metadata(a.metadata);
  const auto pairs = read_pair_manifest(a.pairs);
  std::vector<SubjectMetadata> pool;
  std::set<std::string> val_ids;
  for (const auto& p : pairs) {
    auto it = meta.find(p.subject_id);
    if (it == meta.end()) throw std::runtime_error("no metadata for subject " + p.subject_id);
    if (it->second.split == "val") val_ids.insert(p.subject_id);
    if (it->second.split != "test" && it->second.split != "val") pool.push_back(it->second);
  }
  if (val_ids.empty() && cfg.validation_fraction > 0) {
    for (const auto& id : stratified_split(pool, cfg.validation_fraction, cfg.seed).second) val_ids.insert(id);
  }

  SliceDataset train_set, val_set;
  for (const auto& p : pairs) {
    const auto& m = meta.at(p.subject_id);
    if (m.split == "test") continue;
    auto [t3, t7] = load_pair(p);
    auto samples = extract_slice_samples(t3, t7, m, cfg.model.use_diagnosis, cfg.model.n_input_slices);
    (val_ids.count(p.subject_id) ? val_set : train_set).add(std::move(samples));
  }
  log("train: " + std::to_string(train_set.size()) + " training slices, " + std::to_string(val_set.size()) +
      " validation slices");

  const fs::path out = a.out;
  fs::create_directories(out);
  write_json(out / "config.json", cfg.to_json());
  auto state = a.resume.empty() ? Checkpoint(cfg) : Checkpoint::load(a.resume);
  if (!a.resume.empty() && state.config().hash() != cfg.hash()) {
    throw std::runtime_error("resume checkpoint was trained with a different config");
  }
  const auto ckpt = out / "checkpoint.pt";
  RunOptions opt;
  opt.max_steps = a.max_steps;
  opt.validation = &val_set;
  opt.log = &std::cerr;
  opt.on_epoch = [&](const EpochLog&) { state.save(ckpt); };
  run_training(state, train_set, opt);
  state.save(ckpt);
  write_csv(out / "history_steps.csv", state.history.steps_csv());
  write_csv(out / "history_epochs.csv", state.history.epochs_csv());
  for (const char* f : {"config.json", "checkpoint.pt", "history_steps.csv", "history_epochs.csv"}) run.output(out / f);
  run.summary["epoch"] = state.epoch;
  run.summary["global_step"] = state.global_step;
  run.summary["config_hash"] = state.config().hash();
}

// ----------------------------------------------------------------------------- infer

struct InferArgs {
  std::string checkpoint;
  std::string manifest;
  std::string report;
  int batch_slices = 1;
};

void cmd_infer(Run& run, const InferArgs& a) {
  auto net = training::load_generator(a.checkpoint);
  const auto entries = read_inference_manifest(a.manifest);
  const auto report = inference::batch_synthesize(net, entries, run.jobs, a.batch_slices);
  for (const auto& e : report.entries) {
    if (e.ok) {
      run.output(e.output);
      log("infer: " + e.subject_id + " " + std::to_string(e.seconds) + " s");
    } else {
      run.fail(e.subject_id, e.error);
    }
  }
  if (!a.report.empty()) {
    write_json(a.report, report.to_json());
    run.output(a.report);
  }
  run.summary["wall_seconds"] = report.wall_seconds;
}

// ----------------------------------------------------------------------------- metrics

struct MetricsArgs {
  std::string manifest;
  std::string out;
  bool no_cerebellum = false;
};

std::optional<fs::path> opt_path(const CsvTable& t, std::size_t r, const char* col, const fs::path& dir) {
  const auto v = t.get_or(r, col);
  if (v.empty()) return std::nullopt;
  return resolve_path(v, dir);
}

void cmd_metrics(Run& run, const MetricsArgs& a) {
  const auto table = read_csv(a.manifest);
  const fs::path dir = fs::path(a.manifest).parent_path();
  std::vector<metrics::MetricRow> rows;
  const auto excluded = a.no_cerebellum ? metrics::kCerebellumLabels : std::set<std::int32_t>{};
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto sid = table.at(r, "subject_id");
    try {
      if (auto ref = opt_path(table, r, "reference", dir)) {
        const auto pred = opt_path(table, r, "prediction", dir);
        if (!pred) throw std::runtime_error("reference given without prediction");
        auto vr = load_volume(*ref, opt_path(table, r, "reference_mask", dir),
                              opt_path(table, r, "reference_exclusions", dir));
        auto vp = load_volume(*pred, opt_path(table, r, "prediction_mask", dir),
                              opt_path(table, r, "prediction_exclusions", dir));
        const auto s = metrics::compare_volumes(vr, vp);
        rows.push_back({sid, "psnr", s.psnr});
        rows.push_back({sid, "ssim", s.ssim});
        rows.push_back({sid, "mse", s.mse});
      }
      if (auto lr = opt_path(table, r, "reference_labels", dir)) {
        const auto lp = opt_path(table, r, "prediction_labels", dir);
        if (!lp) throw std::runtime_error("reference_labels given without prediction_labels");
        Dims d1, d2;
        const auto a1 = nifti::read_labels(*lr, &d1);
        const auto a2 = nifti::read_labels(*lp, &d2);
        if (!(d1 == d2)) throw std::runtime_error("label maps are on different grids");
        rows.push_back({sid, "dice", metrics::per_subject_mean_dice(a1, a2, excluded)});
      }
    } catch (const std::exception& e) {
      run.fail(sid, e.what());
    }
  }
  if (rows.empty()) throw std::runtime_error("no metrics computed");
  write_csv(a.out, metrics::metrics_report(rows));
  run.output(a.out);
}

// ----------------------------------------------------------------------------- stats

struct StatsArgs {
  std::string ranks;
  std::string criterion;
  std::string grain = "rater_query";
  std::string samples;
  std::vector<std::string> pairs;
  std::string features;
  std::string label = "diagnosis";
  int repeats = 1000;
  int trees = 100;
  int folds = 10;
  std::string out;
};

stats::AnovaGrain parse_grain(const std::string& g) {
  if (g == "rater_query") return stats::AnovaGrain::RaterQuery;
  if (g == "rater") return stats::AnovaGrain::Rater;
  throw std::runtime_error("unknown grain '" + g + "' (rater_query, rater)");
}

std::vector<std::string> criteria_of(const stats::RankTable& t, const std::string& only) {
  if (!only.empty()) return {only};
  std::set<std::string> c;
  for (const auto& r : t) c.insert(r.criterion);
  return {c.begin(), c.end()};
}

void append(CsvTable& into, const CsvTable& from) {
  if (into.header.empty()) into.header = from.header;
  for (const auto& r : from.rows) into.rows.push_back(r);
}

void cmd_stats_anova(Run& run, const StatsArgs& a, bool tukey) {
  const auto table = stats::read_rank_table(a.ranks);
  const auto grain = parse_grain(a.grain);
  CsvTable out;
  for (const auto& c : criteria_of(table, a.criterion)) {
    const auto res = stats::rm_anova(table, c, grain);
    append(out, tukey ? stats::tukey_csv(stats::tukey_from_anova(res), c) : stats::anova_csv(res, c));
    log((tukey ? "tukey: " : "anova: ") + c + " F=" + std::to_string(res.F) + " p=" + std::to_string(res.p));
  }
  write_csv(a.out, out);
  run.output(a.out);
}

void cmd_stats_ttest(Run& run, const StatsArgs& a) {
  const auto t = read_csv(a.samples);
  std::map<std::string, std::vector<double>> samples;
  for (const auto& col : t.header) {
    if (col == "subject_id") continue;
    auto& v = samples[col];
    for (std::size_t r = 0; r < t.rows.size(); ++r) v.push_back(parse_double(t.at(r, col), col));
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& p : a.pairs) {
    const auto colon = p.find(':');
    if (colon == std::string::npos) throw std::runtime_error("--pair expects A:B, got '" + p + "'");
    pairs.emplace_back(p.substr(0, colon), p.substr(colon + 1));
  }
  write_csv(a.out, stats::paired_t_csv(stats::paired_t_bh(samples, pairs)));
  run.output(a.out);
}

void cmd_stats_predict(Run& run, const StatsArgs& a) {
  const auto features = stats::read_feature_table(a.features, a.label);
  stats::ForestOptions opt;
  opt.n_trees = a.trees;
  const auto res = stats::diagnostic_prediction(features, a.repeats, run.seed, opt, a.folds, run.jobs);
  const fs::path out = a.out;
  fs::create_directories(out);
  write_csv(out / "scores.csv", stats::prediction_scores_csv(res));
  write_csv(out / "importances.csv", stats::importances_csv(res));
  run.output(out / "scores.csv");
  run.output(out / "importances.csv");
  double mean = 0;
  for (double b : res.balanced_accuracy) mean += b;
  run.summary["mean_balanced_accuracy"] = mean / static_cast<double>(res.balanced_accuracy.size());
}

// ----------------------------------------------------------------------------- survey

struct SurveyArgs {
  std::string db = "survey.db";
  std::string manifest;
  std::size_t n_queries = 28;
  std::vector<std::string> criteria;
  std::string name = "study";
  std::string study;
  std::string out;
  bool include_unfinished = false;
  std::string host = "127.0.0.1";
  int port = 8080;
};

survey::SurveyServer* g_server = nullptr;

void cmd_survey_create(Run& run, const SurveyArgs& a) {
  survey::SurveyStore store(a.db);
  const auto subjects = survey::load_study_manifest(a.manifest);
  const auto criteria = a.criteria.empty() ? kDefaultCriteria : a.criteria;
  const auto plan = survey::plan_study(subjects, a.n_queries, criteria, run.seed, a.name);
  const auto id = store.create_study(plan, survey::render_study(plan, subjects));
  std::cerr << "survey: created study " << id << " with " << plan.queries.size() << " queries\n";
  run.summary["study_id"] = id;
  run.output(a.db);
}

void cmd_survey_export(Run& run, const SurveyArgs& a) {
  survey::SurveyStore store(a.db);
  write_csv(a.out, stats::rank_table_csv(store.export_ranks(a.study, a.include_unfinished)));
  run.output(a.out);
}

void cmd_survey_serve(Run&, const SurveyArgs& a) {
  survey::SurveyStore store(a.db);
  survey::SurveyServer server(store);
  const int port = server.bind(a.host, a.port);
  std::cerr << "survey: serving on http://" << a.host << ":" << port << '\n';
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  server.serve();
  g_server = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  const auto t0 = std::chrono::steady_clock::now();
  Run run;
  std::string summary_path;
  CLI::App app{"sr7t: synthesize 7T-like T1w brain MRI from 3T scans and evaluate the results"};
  app.require_subcommand(1);
  app.add_option("--seed", run.seed, "Random seed");
  app.add_option("--jobs", run.jobs, "Parallel workers")->check(CLI::PositiveNumber);
  app.add_option("--summary", summary_path, "Also write the JSON run summary to this file");

  PrepArgs prep;
  auto* c_prep = app.add_subcommand("prep", "Normalize and crop volumes, write a new manifest");
  c_prep->add_option("--pairs", prep.pairs, "Pair manifest (subject_id, t3, t7, ...)");
  c_prep->add_option("--inputs", prep.inputs, "Inference manifest (input_path, output_path, ...)");
  c_prep->add_option("--out", prep.out, "Output directory")->required();
  c_prep->add_option("--crop", prep.crop, "In-plane crop HxW")->capture_default_str();
  c_prep->add_option("--percentile", prep.percentile, "Upper clipping percentile")->capture_default_str();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a U-Net or GAN U-Net");
  c_train->add_option("--arch", train.arch, "unet or gan")->check(CLI::IsMember({"unet", "gan"}))->required();
  c_train->add_option("--config", train.config, "JSON config; omitted fields take the published defaults");
  c_train->add_option("--pairs", train.pairs, "Prepped pair manifest")->required();
  c_train->add_option("--metadata", train.metadata, "Subject metadata CSV")->required();
  c_train->add_option("--out", train.out, "Output directory")->required();
  c_train->add_option("--resume", train.resume, "Checkpoint to continue from");
  c_train->add_option("--max-steps", train.max_steps, "Stop after this many generator steps");

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "Synthesize volumes listed in a manifest");
  c_infer->add_option("--checkpoint", infer.checkpoint, "Training checkpoint")->required();
  c_infer->add_option("--manifest", infer.manifest, "Prepped inference manifest")->required();
  c_infer->add_option("--report", infer.report, "Per-file JSON report");
  c_infer->add_option("--batch-slices", infer.batch_slices, "Slices per forward pass")->check(CLI::PositiveNumber);

  MetricsArgs met;
  auto* c_met = app.add_subcommand("metrics", "PSNR, SSIM and Dice reports");
  c_met->add_option("--manifest", met.manifest, "CSV: subject_id, reference, prediction, *_mask, *_labels")->required();
  c_met->add_option("--out", met.out, "Report CSV")->required();
  c_met->add_flag("--no-cerebellum", met.no_cerebellum, "Drop cerebellar labels from mean Dice");

  StatsArgs st;
  auto* c_stats = app.add_subcommand("stats", "Rank statistics and diagnostic prediction");
  c_stats->require_subcommand(1);
  auto* c_anova = c_stats->add_subcommand("anova", "Repeated-measures ANOVA of ranks on image type");
  auto* c_tukey = c_stats->add_subcommand("tukey", "Tukey HSD on the repeated-measures error term");
  for (auto* c : {c_anova, c_tukey}) {
    c->add_option("--ranks", st.ranks, "Rank table CSV")->required();
    c->add_option("--criterion", st.criterion, "Only this criterion (default: each one)");
    c->add_option("--grain", st.grain, "rater_query or rater")->capture_default_str();
    c->add_option("--out", st.out, "Output CSV")->required();
  }
  auto* c_ttest = c_stats->add_subcommand("ttest", "Paired t-tests with Benjamini-Hochberg adjustment");
  c_ttest->add_option("--samples", st.samples, "Wide CSV, one column per condition")->required();
  c_ttest->add_option("--pair", st.pairs, "A:B pair to test (default: all pairs)");
  c_ttest->add_option("--out", st.out, "Output CSV")->required();
  auto* c_pred = c_stats->add_subcommand("predict", "Random-forest diagnostic prediction with repeated CV");
  c_pred->add_option("--features", st.features, "Feature CSV")->required();
  c_pred->add_option("--label", st.label, "Label column")->capture_default_str();
  c_pred->add_option("--repeats", st.repeats, "Cross-validation repeats")->capture_default_str();
  c_pred->add_option("--trees", st.trees, "Trees per forest")->capture_default_str();
  c_pred->add_option("--folds", st.folds, "Folds")->capture_default_str();
  c_pred->add_option("--out", st.out, "Output directory")->required();

  SurveyArgs sv;
  auto* c_survey = app.add_subcommand("survey", "Blinded ranking studies");
  c_survey->require_subcommand(1);
  auto* c_create = c_survey->add_subcommand("create", "Create a study from a variant manifest");
  auto* c_export = c_survey->add_subcommand("export", "Export unblinded ranks");
  auto* c_serve = c_survey->add_subcommand("serve", "Serve the rating API");
  for (auto* c : {c_create, c_export, c_serve}) c->add_option("--db", sv.db, "Survey database")->capture_default_str();
  c_create->add_option("--manifest", sv.manifest, "CSV: subject_id, image_type, path")->required();
  c_create->add_option("--n-queries", sv.n_queries, "Queries")->capture_default_str();
  c_create->add_option("--criterion", sv.criteria, "Criterion prompt (repeatable)");
  c_create->add_option("--name", sv.name, "Study name");
  c_export->add_option("--study", sv.study, "Study id")->required();
  c_export->add_option("--out", sv.out, "Rank table CSV")->required();
  c_export->add_flag("--include-unfinished", sv.include_unfinished, "Include incomplete sessions");
  c_serve->add_option("--host", sv.host, "Bind address")->capture_default_str();
  c_serve->add_option("--port", sv.port, "Port (0 picks a free one)")->capture_default_str();

  int rc = 0;
  std::string command;
  try {
    app.parse(argc, argv);
    for (auto* sub : app.get_subcommands()) {
      command = sub->get_name();
      for (auto* leaf : sub->get_subcommands()) command += " " + leaf->get_name();
    }
    if (c_prep->parsed()) cmd_prep(run, prep);
    if (c_train->parsed()) cmd_train(run, train);
    if (c_infer->parsed()) cmd_infer(run, infer);
    if (c_met->parsed()) cmd_metrics(run, met);
    if (c_anova->parsed()) cmd_stats_anova(run, st, false);
    if (c_tukey->parsed()) cmd_stats_anova(run, st, true);
    if (c_ttest->parsed()) cmd_stats_ttest(run, st);
    if (c_pred->parsed()) cmd_stats_predict(run, st);
    if (c_create->parsed()) cmd_survey_create(run, sv);
    if (c_export->parsed()) cmd_survey_export(run, sv);
    if (c_serve->parsed()) cmd_survey_serve(run, sv);
    if (!run.failures.empty()) rc = 1;
  } catch (const CLI::ParseError& e) {
    rc = app.exit(e);
    if (rc == 0) return 0;
    run.failures.push_back({{"item", "arguments"}, {"error", e.what()}});
  } catch (const std::exception& e) {
    run.fail(command.empty() ? "sr7t" : command, e.what());
    rc = 1;
  }

  json summary = run.summary;
  summary["command"] = command;
  summary["ok"] = rc == 0;
  summary["exit_code"] = rc;
  summary["seed"] = run.seed;
  summary["jobs"] = run.jobs;
  summary["outputs"] = run.outputs;
  summary["failures"] = run.failures;
  summary["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << summary.dump() << std::endl;
  if (!summary_path.empty()) {
    try {
      write_json(summary_path, summary);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      rc = rc == 0 ? 1 : rc;
    }
  }
  return rc;
}
