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

#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <sys/wait.h>

#include "sr7t/csv.hpp"
#include "sr7t/nifti.hpp"
#include "sr7t/survey.hpp"
#include "support.hpp"
#include "survey_support.hpp"

using namespace sr7t;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int rc = -1;
  std::string out;
  json summary;
};

CliResult cli(const std::string& args) {
  const std::string cmd = std::string(SR7T_CLI) + " " + args + " 2>/dev/null";
  CliResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  // The summary is the last line of stdout.
  auto end = r.out.find_last_not_of('\n');
  if (end != std::string::npos) {
    const auto nl = r.out.rfind('\n', end);
    const auto line = r.out.substr(nl == std::string::npos ? 0 : nl + 1, end + 1);
    if (!line.empty() && line[0] == '{') r.summary = json::parse(line, nullptr, false);
  }
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Two subjects: 3T/7T phantom pairs on a 40x40x8 grid plus metadata.
void write_pairs(const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream pairs(dir / "pairs.csv"), meta(dir / "meta.csv"), inputs(dir / "inputs.csv");
  pairs << "subject_id,t3,t7\n";
  meta << "subject_id,age,gender,diagnosis,split\n";
  inputs << "subject_id,age,gender,diagnosis,input_path,output_path,mask_path\n";
  for (int s = 1; s <= 2; ++s) {
    const auto id = "sub-0" + std::to_string(s);
    auto t3 = testing::phantom({40, 40, 8}, s, 700.0);
    auto t7 = testing::phantom({40, 40, 8}, s + 10, 1500.0);
    t7.mask = t3.mask;
    nifti::write(dir / (id + "_3t.nii.gz"), t3);
    nifti::write(dir / (id + "_7t.nii.gz"), t7);
    pairs << id << "," << id << "_3t.nii.gz," << id << "_7t.nii.gz\n";
    meta << id << "," << 60 + s << "," << (s == 1 ? "F" : "M") << "," << (s == 1 ? "unimpaired" : "impaired")
         << ",train\n";
    inputs << id << "," << 60 + s << "," << (s == 1 ? "F" : "M") << ",impaired," << id << "_3t.nii.gz,"
           << "synth/" << id << ".nii.gz,\n";
  }
  std::ofstream(dir / "toy.json") << R"({"c": 8, "channel_multiplication": [1, 2], "n_groups": 4, "n_res": 1,
    "ca_stages": [2], "context_dim": 8, "n_layers": 2, "c_discriminator": 8, "batch_size": 4, "n_epochs": 2,
    "validation_fraction": 0, "log_every": 1})";
}

}  // namespace

TEST_CASE("help, argument errors and the run summary") {
  const auto help = cli("--help");
  CHECK(help.rc == 0);
  CHECK(help.out.find("prep") != std::string::npos);
  CHECK(help.summary.is_null());

  const auto none = cli("");
  CHECK(none.rc != 0);
  REQUIRE(none.summary.is_object());
  CHECK(none.summary["ok"] == false);
  CHECK(none.summary["exit_code"] == none.rc);

  const auto badjobs = cli("--jobs 0 stats anova --ranks x --out y");
  CHECK(badjobs.rc != 0);
  CHECK(badjobs.summary["ok"] == false);

  testing::ScratchDir dir("cli-summary");
  const auto missing = cli("--seed 5 --summary " + q(dir / "s.json") + " stats anova --ranks " + q(dir / "nope.csv") +
                           " --out " + q(dir / "a.csv"));
  CHECK(missing.rc == 1);
  CHECK(missing.summary["command"] == "stats anova");
  CHECK(missing.summary["seed"] == 5);
  CHECK(missing.summary["failures"].size() == 1);
  CHECK(json::parse(slurp(dir / "s.json")) == missing.summary);
}

TEST_CASE("prep, train, infer and metrics end to end") {
  testing::ScratchDir dir("cli-e2e");
  const auto d = dir.path();
  write_pairs(d);

  const auto prep = cli("prep --pairs " + q(d / "pairs.csv") + " --out " + q(d / "prep") + " --crop 32x32");
  REQUIRE(prep.rc == 0);
  CHECK(prep.summary["ok"] == true);
  CHECK(fs::exists(d / "prep" / "sub-01_3t.nii.gz"));
  CHECK(fs::exists(d / "prep" / "sub-02_7t_mask.nii.gz"));
  const auto crops = json::parse(slurp(d / "prep" / "crops.json"));
  CHECK(crops["sub-01"]["height"] == 32);
  const auto v = nifti::read(d / "prep" / "sub-01_3t.nii.gz");
  CHECK(v.dims == Dims{32, 32, 8});
  CHECK(*std::max_element(v.data.begin(), v.data.end()) == 1.0f);
  CHECK(*std::min_element(v.data.begin(), v.data.end()) == 0.0f);

  const auto prep_in = cli("prep --inputs " + q(d / "inputs.csv") + " --out " + q(d / "prep_in") + " --crop 32x32");
  REQUIRE(prep_in.rc == 0);
  CHECK(fs::exists(d / "prep_in" / "inference.csv"));

  const fs::path pairs = d / "prep" / "pairs.csv", meta = d / "meta.csv", cfg = d / "toy.json";
  auto train = [&](const std::string& out, const std::string& extra) {
    return cli("--seed 4 train --arch unet --config " + q(cfg) + " --pairs " + q(pairs) + " --metadata " + q(meta) +
               " --out " + q(d / out) + " " + extra);
  };
  const auto t1 = train("run1", "--max-steps 3");
  REQUIRE(t1.rc == 0);
  CHECK(t1.summary["global_step"] == 3);
  const auto t2 = train("run2", "--max-steps 3");
  REQUIRE(t2.rc == 0);
  CHECK(slurp(d / "run1" / "history_steps.csv") == slurp(d / "run2" / "history_steps.csv"));
  CHECK(json::parse(slurp(d / "run1" / "config.json"))["seed"] == 4);
  const auto t3 = cli("--seed 5 train --arch unet --config " + q(cfg) + " --pairs " + q(pairs) + " --metadata " +
                      q(meta) + " --out " + q(d / "run3") + " --max-steps 3");
  REQUIRE(t3.rc == 0);
  CHECK(slurp(d / "run1" / "history_steps.csv") != slurp(d / "run3" / "history_steps.csv"));

  // Resuming continues the step count.
  const auto t4 = train("run1", "--resume " + q(d / "run1" / "checkpoint.pt") + " --max-steps 5");
  REQUIRE(t4.rc == 0);
  CHECK(t4.summary["global_step"] == 5);
  const auto steps = read_csv(d / "run1" / "history_steps.csv");
  CHECK(steps.rows.size() == 5);
  const auto wrong = cli("train --arch gan --config " + q(cfg) + " --pairs " + q(pairs) + " --metadata " + q(meta) +
                         " --out " + q(d / "run5") + " --resume " + q(d / "run1" / "checkpoint.pt"));
  CHECK(wrong.rc == 1);
  CHECK(cli("train --arch vnet --pairs x --metadata y --out z").rc != 0);

  const auto infer = cli("infer --checkpoint " + q(d / "run1" / "checkpoint.pt") + " --manifest " +
                         q(d / "prep_in" / "inference.csv") + " --report " + q(d / "report.json"));
  REQUIRE(infer.rc == 0);
  CHECK(infer.summary["outputs"].size() == 3);
  const auto synth = nifti::read(d / "synth" / "sub-01.nii.gz");
  CHECK(synth.dims == Dims{32, 32, 8});
  for (float x : synth.data) REQUIRE((x >= 0.0f && x <= 1.0f));
  CHECK(json::parse(slurp(d / "report.json"))["n_failed"] == 0);

  // One unreadable input fails alone.
  auto manifest = read_csv(d / "prep_in" / "inference.csv");
  manifest.rows[1][manifest.column("input_path")] = (d / "absent.nii.gz").string();
  write_csv(d / "broken.csv", manifest);
  const auto partial = cli("infer --checkpoint " + q(d / "run1" / "checkpoint.pt") + " --manifest " + q(d / "broken.csv"));
  CHECK(partial.rc == 1);
  CHECK(partial.summary["failures"].size() == 1);
  CHECK(partial.summary["failures"][0]["item"] == "sub-02");
  CHECK(partial.summary["outputs"].size() == 1);

  // Metrics: the synthesized volume against the prepped 7T, plus label maps.
  std::vector<std::int32_t> la(32 * 32 * 8, 0), lb(32 * 32 * 8, 0);
  for (std::size_t i = 0; i < la.size(); ++i) {
    la[i] = i % 3 == 0 ? 2 : (i % 5 == 0 ? 8 : 0);
    lb[i] = i % 3 == 0 ? 2 : (i % 7 == 0 ? 8 : 0);
  }
  nifti::write_labels(d / "la.nii.gz", synth, la);
  nifti::write_labels(d / "lb.nii.gz", synth, lb);
  std::ofstream(d / "metrics.csv") << "subject_id,reference,reference_mask,prediction,prediction_mask,reference_labels,"
                                      "prediction_labels\n"
                                   << "sub-01," << (d / "prep" / "sub-01_7t.nii.gz").string() << ","
                                   << (d / "prep" / "sub-01_7t_mask.nii.gz").string() << ","
                                   << (d / "synth" / "sub-01.nii.gz").string() << ","
                                   << (d / "prep" / "sub-01_3t_mask.nii.gz").string() << ",la.nii.gz,lb.nii.gz\n";
  const auto m1 = cli("metrics --manifest " + q(d / "metrics.csv") + " --out " + q(d / "m1.csv"));
  REQUIRE(m1.rc == 0);
  const auto m2 = cli("metrics --manifest " + q(d / "metrics.csv") + " --out " + q(d / "m2.csv") + " --no-cerebellum");
  REQUIRE(m2.rc == 0);
  const auto r1 = read_csv(d / "m1.csv"), r2 = read_csv(d / "m2.csv");
  CHECK(r1.header == std::vector<std::string>{"subject_id", "metric", "value", "sd"});
  auto value = [](const CsvTable& t, const std::string& metric) {
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      if (t.at(r, "subject_id") == "sub-01" && t.at(r, "metric") == metric) return parse_double(t.at(r, "value"), "value");
    FAIL("metric missing: " << metric);
    return 0.0;
  };
  CHECK(value(r1, "dice") < 1.0);
  CHECK(value(r2, "dice") == 1.0);
  CHECK(value(r1, "psnr") == value(r2, "psnr"));
  CHECK(value(r1, "ssim") <= 1.0);
}

TEST_CASE("stats subcommands") {
  testing::ScratchDir dir("cli-stats");
  const auto fx = testing::fixture_dir();
  const auto a = cli("stats anova --ranks " + q(fx / "rank_table.csv") + " --out " + q(dir / "anova.csv"));
  REQUIRE(a.rc == 0);
  const auto anova = read_csv(dir / "anova.csv");
  CHECK(anova.rows.size() == 2);
  std::ifstream in(fx / "rank_expected.json");
  const auto expected = json::parse(in);
  for (std::size_t r = 0; r < anova.rows.size(); ++r) {
    const auto c = anova.at(r, "criterion");
    CHECK(parse_double(anova.at(r, "F"), "F") ==
          doctest::Approx(expected[c]["rater_query"]["F"].get<double>()).epsilon(1e-9));
  }
  const auto t = cli("stats tukey --grain rater --criterion 'Rank based on how detailed the image is.' --ranks " +
                     q(fx / "rank_table.csv") + " --out " + q(dir / "tukey.csv"));
  REQUIRE(t.rc == 0);
  CHECK(read_csv(dir / "tukey.csv").rows.size() == 15);
  CHECK(cli("stats anova --grain subject --ranks " + q(fx / "rank_table.csv") + " --out " + q(dir / "x.csv")).rc == 1);

  const auto tt = cli("stats ttest --samples " + q(fx / "paired_t.csv") + " --out " + q(dir / "t.csv"));
  REQUIRE(tt.rc == 0);
  CHECK(read_csv(dir / "t.csv").rows.size() >= 1);

  std::ofstream f(dir / "features.csv");
  f << "subject_id,diagnosis,x1,x2\n";
  for (int i = 0; i < 60; ++i) f << "s" << i << "," << i % 3 << "," << (i % 3) * 10 + (i % 7) << "," << i % 5 << "\n";
  f.close();
  auto predict = [&](const std::string& seed, const std::string& jobs) {
    return cli("--seed " + seed + " --jobs " + jobs + " stats predict --features " + q(dir / "features.csv") +
               " --repeats 3 --trees 20 --out " + q(dir / ("p" + seed + jobs)));
  };
  const auto p1 = predict("1", "1"), p2 = predict("1", "2");
  REQUIRE(p1.rc == 0);
  REQUIRE(p2.rc == 0);
  CHECK(p1.summary["mean_balanced_accuracy"].get<double>() > 0.95);
  CHECK(slurp(dir / "p11" / "scores.csv") == slurp(dir / "p12" / "scores.csv"));
  CHECK(fs::exists(dir / "p11" / "importances.csv"));
}

TEST_CASE("survey create and export") {
  testing::ScratchDir dir("cli-survey");
  const auto manifest = testing::write_study_manifest(dir.path(), 3);
  const auto db = dir / "s.db";
  const auto c = cli("--seed 2 survey create --db " + q(db) + " --manifest " + q(manifest) + " --n-queries 3");
  REQUIRE(c.rc == 0);
  const auto id = c.summary["study_id"].get<std::string>();
  survey::SurveyStore store(db);
  CHECK(store.plan(id).criteria == testing::fixture_criteria());
  CHECK(store.plan(id).queries.size() == 3);
  const auto e = cli("survey export --db " + q(db) + " --study " + id + " --out " + q(dir / "r.csv"));
  CHECK(e.rc == 1);
  const auto tok = store.open_session(id, "r1");
  for (auto it = store.next(tok); !it.complete; it = store.next(tok))
    store.submit(tok, it.query_id, it.criterion_index, {1, 2, 3, 4, 5, 6});
  const auto e2 = cli("survey export --db " + q(db) + " --study " + id + " --out " + q(dir / "r.csv"));
  REQUIRE(e2.rc == 0);
  CHECK(stats::read_rank_table(dir / "r.csv").size() == 3 * 2 * 6);
  CHECK(cli("survey create --db " + q(db) + " --manifest " + q(manifest) + " --n-queries 4").rc == 1);
}
