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

#include "sr7t/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

namespace sr7t::training {

using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "sr7t-checkpoint/1";

const std::set<std::string> kModelKeys = {"c",         "channel_multiplication", "n_groups",      "n_res",
                                          "ca_stages", "n_input_slices",         "context_dim",   "use_diagnosis",
                                          "use_final_norm"};
const std::set<std::string> kDiscriminatorKeys = {"n_layers", "c_discriminator"};
const std::set<std::string> kTrainKeys = {"arch",
                                          "n_epochs",
                                          "batch_size",
                                          "lr",
                                          "lr_schedule",
                                          "betas",
                                          "dropout",
                                          "lambda_perc",
                                          "n_critic",
                                          "lr_discriminator",
                                          "betas_discriminator",
                                          "lambda_gan",
                                          "lambda_gp",
                                          "warmup_epochs",
                                          "warmup_n_critic",
                                          "warmup_lambda_gan_divisor",
                                          "extractor",
                                          "seed",
                                          "validation_fraction",
                                          "log_every",
                                          "deterministic"};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double scalar(const torch::Tensor& t) { return t.defined() ? t.detach().to(torch::kFloat64).item<double>() : 0.0; }

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.requires_grad_(on);
}

std::unique_ptr<torch::optim::Adam> make_adam(const std::vector<torch::Tensor>& params, double lr,
                                              const std::array<double, 2>& betas) {
  return std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(lr).betas(std::make_tuple(betas[0], betas[1])));
}

void check_finite(const StepLog& s, const char* phase) {
  for (double v : {s.l1, s.perceptual, s.g_adversarial, s.g_total, s.d_adversarial, s.d_penalty, s.d_objective}) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite " << phase << " loss at step " << s.step << " (epoch " << s.epoch << "): l1=" << s.l1
         << " perceptual=" << s.perceptual << " g_adv=" << s.g_adversarial << " g_total=" << s.g_total
         << " d_adv=" << s.d_adversarial << " d_gp=" << s.d_penalty << " d_objective=" << s.d_objective;
      throw TrainingError(os.str());
    }
  }
}

std::array<double, 2> read_pair(const json& j, const char* key) {
  auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 2) throw TrainingError(std::string("config: ") + key + " must have two entries");
  return {v[0], v[1]};
}

}  // namespace

Arch parse_arch(const std::string& s) {
  if (s == "unet") return Arch::UNet;
  if (s == "gan") return Arch::Gan;
  throw TrainingError("unknown architecture '" + s + "' (unet, gan)");
}

std::string to_string(Arch a) { return a == Arch::UNet ? "unet" : "gan"; }

TrainConfig TrainConfig::defaults(Arch arch) {
  TrainConfig c;
  c.arch = arch;
  if (arch == Arch::Gan) {
    c.n_epochs = 22;
    c.model.ca_stages = {4};
    c.lambda_perc = 1e-2;
    c.lr_schedule = 0.9;
  }
  return c;
}

TrainConfig TrainConfig::from_json(const json& j, Arch arch) {
  if (!j.is_object()) throw TrainingError("config: expected a JSON object");
  if (j.contains("arch")) arch = parse_arch(j.at("arch").get<std::string>());
  TrainConfig c = defaults(arch);
  json model_j = json::object();
  json disc_j = json::object();
  try {
    for (const auto& [key, value] : j.items()) {
      if (kModelKeys.count(key)) {
        model_j[key] = value;
      } else if (kDiscriminatorKeys.count(key)) {
        disc_j[key] = value;
      } else if (!kTrainKeys.count(key)) {
        throw TrainingError("config: unknown key '" + key + "'");
      }
    }
    c.model = model::ModelConfig::from_json(model_j, c.model);
    c.discriminator = model::DiscriminatorConfig::from_json(disc_j, c.discriminator);
    if (j.contains("n_epochs")) c.n_epochs = j.at("n_epochs").get<int>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("lr_schedule")) c.lr_schedule = j.at("lr_schedule").get<double>();
    if (j.contains("betas")) c.betas = read_pair(j, "betas");
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    if (j.contains("lambda_perc")) c.lambda_perc = j.at("lambda_perc").get<double>();
    if (j.contains("n_critic")) c.n_critic = j.at("n_critic").get<int>();
    if (j.contains("lr_discriminator")) c.lr_discriminator = j.at("lr_discriminator").get<double>();
    if (j.contains("betas_discriminator")) c.betas_discriminator = read_pair(j, "betas_discriminator");
    if (j.contains("lambda_gan")) c.lambda_gan = j.at("lambda_gan").get<double>();
    if (j.contains("lambda_gp")) c.lambda_gp = j.at("lambda_gp").get<double>();
    if (j.contains("warmup_epochs")) c.warmup_epochs = j.at("warmup_epochs").get<int>();
    if (j.contains("warmup_n_critic")) c.warmup_n_critic = j.at("warmup_n_critic").get<int>();
    if (j.contains("warmup_lambda_gan_divisor")) {
      c.warmup_lambda_gan_divisor = j.at("warmup_lambda_gan_divisor").get<double>();
    }
    if (j.contains("extractor")) {
      const auto& e = j.at("extractor");
      for (const auto& [key, value] : e.items()) {
        if (key != "name" && key != "checkpoint") throw TrainingError("config: unknown extractor key '" + key + "'");
      }
      if (e.contains("name")) c.extractor.name = e.at("name").get<std::string>();
      if (e.contains("checkpoint")) c.extractor.checkpoint = e.at("checkpoint").get<std::string>();
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("validation_fraction")) c.validation_fraction = j.at("validation_fraction").get<double>();
    if (j.contains("log_every")) c.log_every = j.at("log_every").get<int>();
    if (j.contains("deterministic")) c.deterministic = j.at("deterministic").get<bool>();
  } catch (const json::exception& e) {
    throw TrainingError(std::string("config: ") + e.what());
  } catch (const model::ModelError& e) {
    throw TrainingError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

json TrainConfig::to_json() const {
  json j = model.to_json();
  j["arch"] = to_string(arch);
  j["n_layers"] = discriminator.n_layers;
  j["c_discriminator"] = discriminator.c1;
  j["n_epochs"] = n_epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["lr_schedule"] = lr_schedule;
  j["betas"] = betas;
  j["dropout"] = dropout;
  j["lambda_perc"] = lambda_perc;
  j["n_critic"] = n_critic;
  j["lr_discriminator"] = lr_discriminator;
  j["betas_discriminator"] = betas_discriminator;
  j["lambda_gan"] = lambda_gan;
  j["lambda_gp"] = lambda_gp;
  j["warmup_epochs"] = warmup_epochs;
  j["warmup_n_critic"] = warmup_n_critic;
  j["warmup_lambda_gan_divisor"] = warmup_lambda_gan_divisor;
  j["extractor"] = {{"name", extractor.name}, {"checkpoint", extractor.checkpoint}};
  j["seed"] = seed;
  j["validation_fraction"] = validation_fraction;
  j["log_every"] = log_every;
  j["deterministic"] = deterministic;
  return j;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw TrainingError("config: " + m); };
  if (n_epochs < 1) fail("n_epochs must be at least 1");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(lr > 0)) fail("lr must be positive");
  if (!(lr_schedule > 0 && lr_schedule <= 1)) fail("lr_schedule must be in (0, 1]");
  if (dropout != 0) fail("dropout is not supported; the generator has no dropout layers");
  for (double b : betas) {
    if (b < 0 || b >= 1) fail("betas must be in [0, 1)");
  }
  for (double b : betas_discriminator) {
    if (b < 0 || b >= 1) fail("betas_discriminator must be in [0, 1)");
  }
  if (lambda_perc < 0 || lambda_gan < 0 || lambda_gp < 0) fail("loss weights must be non-negative");
  if (n_critic < 1) fail("n_critic must be at least 1");
  if (warmup_n_critic < 1) fail("warmup_n_critic must be at least 1");
  if (warmup_epochs < 0) fail("warmup_epochs must be non-negative");
  if (!(warmup_lambda_gan_divisor > 0)) fail("warmup_lambda_gan_divisor must be positive");
  if (!(lr_discriminator > 0)) fail("lr_discriminator must be positive");
  if (validation_fraction < 0 || validation_fraction >= 1) fail("validation_fraction must be in [0, 1)");
  if (log_every < 0) fail("log_every must be non-negative");
  if (extractor.name != "identity" && extractor.name != "random_conv" && extractor.name != "torchscript") {
    fail("unknown extractor '" + extractor.name + "'");
  }
  if (extractor.name == "torchscript" && extractor.checkpoint.empty()) fail("torchscript extractor needs a checkpoint");
  model.validate();
  discriminator.validate();
}

std::string TrainConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json().dump())));
  return buf;
}

double TrainConfig::generator_lr(int epoch) const { return lr_at(epoch, lr, lr_schedule); }

double TrainConfig::discriminator_lr(int /*epoch*/) const { return lr_discriminator; }

int TrainConfig::critic_steps(int epoch) const { return epoch < warmup_epochs ? warmup_n_critic : n_critic; }

double TrainConfig::effective_lambda_gan(int epoch) const {
  return epoch < warmup_epochs ? lambda_gan / warmup_lambda_gan_divisor : lambda_gan;
}

TrainConfig load_config(const std::filesystem::path& path, Arch arch) {
  std::ifstream in(path);
  if (!in) throw TrainingError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw TrainingError("config " + path.string() + ": " + e.what());
  }
  if (!j.contains("arch")) j["arch"] = to_string(arch);
  return TrainConfig::from_json(j, arch);
}

double lr_at(int epoch, double lr_init, double decay) {
  if (epoch < 0) throw TrainingError("lr_at: negative epoch");
  return lr_init * std::pow(decay, epoch);
}

SliceDataset::SliceDataset(std::vector<SliceSample> samples) { add(std::move(samples)); }

void SliceDataset::add(std::vector<SliceSample> samples) {
  for (auto& s : samples) {
    if (!samples_.empty()) {
      const auto& f = samples_.front();
      if (s.height != f.height || s.width != f.width || s.input.size() != f.input.size() ||
          s.context.size() != f.context.size()) {
        throw TrainingError("dataset: samples differ in shape or context size");
      }
    }
    if (s.target.size() != static_cast<std::size_t>(s.height * s.width)) {
      throw TrainingError("dataset: sample without a target slice");
    }
    samples_.push_back(std::move(s));
  }
}

std::int64_t SliceDataset::n_context() const {
  return samples_.empty() ? 0 : static_cast<std::int64_t>(samples_.front().context.size());
}

Batch make_batch(const SliceDataset& data, std::span<const std::size_t> indices, torch::Dtype dtype) {
  if (indices.empty()) throw TrainingError("make_batch: empty batch");
  const auto& first = data[indices[0]];
  const std::int64_t H = first.height, W = first.width;
  const std::int64_t S = static_cast<std::int64_t>(first.input.size()) / (H * W);
  const std::int64_t B = static_cast<std::int64_t>(indices.size());
  const std::int64_t C = static_cast<std::int64_t>(first.context.size());
  auto input = torch::empty({B, S, H, W}, torch::kFloat32);
  auto target = torch::empty({B, 1, H, W}, torch::kFloat32);
  auto context = torch::empty({B, C}, torch::kFloat32);
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& s = data[indices[b]];
    std::copy(s.input.begin(), s.input.end(), input[b].data_ptr<float>());
    std::copy(s.target.begin(), s.target.end(), target[b].data_ptr<float>());
    const auto ctx = s.context.values();
    std::copy(ctx.begin(), ctx.end(), context[b].data_ptr<float>());
  }
  return {input.to(dtype), target.to(dtype), context.to(dtype)};
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix(seed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::pair<std::vector<std::string>, std::vector<std::string>> stratified_split(
    const std::vector<SubjectMetadata>& subjects, double fraction, std::uint64_t seed) {
  if (fraction < 0 || fraction >= 1) throw TrainingError("stratified_split: fraction must be in [0, 1)");
  std::map<std::pair<int, int>, std::vector<const SubjectMetadata*>> strata;
  for (const auto& s : subjects) {
    const int diag = s.diagnosis ? static_cast<int>(*s.diagnosis) : -1;
    strata[{static_cast<int>(s.gender), diag}].push_back(&s);
  }
  std::mt19937_64 rng(seed);
  std::set<std::string> val;
  for (auto& [key, members] : strata) {
    std::sort(members.begin(), members.end(), [](const auto* a, const auto* b) {
      return std::tie(a->age, a->subject_id) < std::tie(b->age, b->subject_id);
    });
    const auto n = members.size();
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (k == 0) continue;
    const double stride = static_cast<double>(n) / static_cast<double>(k);
    std::uniform_real_distribution<double> offset(0.0, stride);
    const double start = offset(rng);
    for (std::size_t i = 0; i < k; ++i) {
      const auto idx = std::min(n - 1, static_cast<std::size_t>(start + stride * static_cast<double>(i)));
      val.insert(members[idx]->subject_id);
    }
  }
  std::vector<std::string> train_ids, val_ids;
  for (const auto& s : subjects) (val.count(s.subject_id) ? val_ids : train_ids).push_back(s.subject_id);
  return {train_ids, val_ids};
}

CsvTable History::steps_csv() const {
  CsvTable t;
  t.header = {"step",    "epoch",      "step_in_epoch", "lr",      "n_critic",      "lambda_gan", "l1",
              "perceptual", "g_adversarial", "g_total", "d_adversarial", "d_penalty", "d_objective"};
  for (const auto& s : steps) {
    t.add_row({std::to_string(s.step), std::to_string(s.epoch), std::to_string(s.step_in_epoch),
               format_double(s.lr), std::to_string(s.n_critic), format_double(s.lambda_gan), format_double(s.l1),
               format_double(s.perceptual), format_double(s.g_adversarial), format_double(s.g_total),
               format_double(s.d_adversarial), format_double(s.d_penalty), format_double(s.d_objective)});
  }
  return t;
}

CsvTable History::epochs_csv() const {
  CsvTable t;
  t.header = {"epoch", "lr", "steps", "train_l1", "train_total", "val_l1", "val_total"};
  for (const auto& e : epochs) {
    t.add_row({std::to_string(e.epoch), format_double(e.lr), std::to_string(e.steps), format_double(e.train_l1),
               format_double(e.train_total), e.has_validation ? format_double(e.val_l1) : "",
               e.has_validation ? format_double(e.val_total) : ""});
  }
  return t;
}

json History::to_json() const {
  json js = json::array();
  for (const auto& s : steps) {
    js.push_back({s.step, s.epoch, s.step_in_epoch, s.lr, s.n_critic, s.lambda_gan, s.l1, s.perceptual,
                  s.g_adversarial, s.g_total, s.d_adversarial, s.d_penalty, s.d_objective});
  }
  json je = json::array();
  for (const auto& e : epochs) {
    je.push_back({e.epoch, e.lr, e.steps, e.train_l1, e.train_total, e.val_l1, e.val_total, e.has_validation});
  }
  return {{"steps", js}, {"epochs", je}};
}

History History::from_json(const json& j) {
  History h;
  for (const auto& r : j.at("steps")) {
    StepLog s;
    s.step = r.at(0);
    s.epoch = r.at(1);
    s.step_in_epoch = r.at(2);
    s.lr = r.at(3);
    s.n_critic = r.at(4);
    s.lambda_gan = r.at(5);
    s.l1 = r.at(6);
    s.perceptual = r.at(7);
    s.g_adversarial = r.at(8);
    s.g_total = r.at(9);
    s.d_adversarial = r.at(10);
    s.d_penalty = r.at(11);
    s.d_objective = r.at(12);
    h.steps.push_back(s);
  }
  for (const auto& r : j.at("epochs")) {
    EpochLog e;
    e.epoch = r.at(0);
    e.lr = r.at(1);
    e.steps = r.at(2);
    e.train_l1 = r.at(3);
    e.train_total = r.at(4);
    e.val_l1 = r.at(5);
    e.val_total = r.at(6);
    e.has_validation = r.at(7);
    h.epochs.push_back(e);
  }
  return h;
}

Checkpoint::Checkpoint(TrainConfig config) : config_(std::move(config)) {
  config_.validate();
  torch::manual_seed(config_.seed);
  generator_ = model::AttentionUNet(config_.model);
  model::init_weights(*generator_);
  opt_g_ = make_adam(generator_->parameters(), config_.generator_lr(0), config_.betas);
  if (config_.arch == Arch::Gan) {
    discriminator_ = model::PatchDiscriminator(config_.discriminator);
    model::init_weights(*discriminator_);
    opt_d_ = make_adam(discriminator_->parameters(), config_.discriminator_lr(0), config_.betas_discriminator);
  }
}

void Checkpoint::save(const std::filesystem::path& path) const {
  torch::serialize::OutputArchive ar;
  ar.write("format", c10::IValue(std::string(kCheckpointFormat)));
  ar.write("config", c10::IValue(config_.to_json().dump()));
  ar.write("config_hash", c10::IValue(config_.hash()));
  ar.write("epoch", c10::IValue(static_cast<std::int64_t>(epoch)));
  ar.write("step_in_epoch", c10::IValue(step_in_epoch));
  ar.write("global_step", c10::IValue(global_step));
  ar.write("history", c10::IValue(history.to_json().dump()));
  torch::serialize::OutputArchive g, og;
  generator_->save(g);
  opt_g_->save(og);
  ar.write("generator", g);
  ar.write("generator_optimizer", og);
  if (has_discriminator()) {
    torch::serialize::OutputArchive d, od;
    discriminator_->save(d);
    opt_d_->save(od);
    ar.write("discriminator", d);
    ar.write("discriminator_optimizer", od);
  }
  const auto tmp = path.string() + ".tmp";
  ar.save_to(tmp);
  std::filesystem::rename(tmp, path);
}

namespace {

TrainConfig read_checkpoint_header(torch::serialize::InputArchive& ar, const std::filesystem::path& path) {
  c10::IValue v;
  if (!ar.try_read("format", v) || !v.isString() || v.toStringRef() != kCheckpointFormat) {
    throw TrainingError(path.string() + " is not an sr7t checkpoint");
  }
  ar.read("config", v);
  auto config = TrainConfig::from_json(json::parse(v.toStringRef()));
  ar.read("config_hash", v);
  if (v.toStringRef() != config.hash()) throw TrainingError(path.string() + ": config hash mismatch");
  return config;
}

void open_archive(torch::serialize::InputArchive& ar, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw TrainingError("checkpoint not found: " + path.string());
  try {
    ar.load_from(path.string());
  } catch (const c10::Error& e) {
    throw TrainingError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

}  // namespace

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  torch::serialize::InputArchive ar;
  open_archive(ar, path);
  Checkpoint ck(read_checkpoint_header(ar, path));
  c10::IValue v;
  ar.read("epoch", v);
  ck.epoch = static_cast<int>(v.toInt());
  ar.read("step_in_epoch", v);
  ck.step_in_epoch = v.toInt();
  ar.read("global_step", v);
  ck.global_step = v.toInt();
  ar.read("history", v);
  ck.history = History::from_json(json::parse(v.toStringRef()));
  torch::serialize::InputArchive g, og;
  ar.read("generator", g);
  ck.generator_->load(g);
  ar.read("generator_optimizer", og);
  ck.opt_g_->load(og);
  if (ck.has_discriminator()) {
    torch::serialize::InputArchive d, od;
    ar.read("discriminator", d);
    ck.discriminator_->load(d);
    ar.read("discriminator_optimizer", od);
    ck.opt_d_->load(od);
  }
  return ck;
}

model::AttentionUNet load_generator(const std::filesystem::path& path) {
  torch::serialize::InputArchive ar;
  open_archive(ar, path);
  const auto config = read_checkpoint_header(ar, path);
  model::AttentionUNet net(config.model);
  torch::serialize::InputArchive g;
  ar.read("generator", g);
  net->load(g);
  net->eval();
  return net;
}

std::pair<double, double> evaluate(Checkpoint& state, const SliceDataset& data, losses::FeatureExtractor* extractor) {
  if (data.size() == 0) return {0.0, 0.0};
  torch::NoGradGuard no_grad;
  auto& G = state.generator();
  const auto& cfg = state.config();
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  double l1 = 0, total = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += B) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + B); ++i) idx.push_back(i);
    auto batch = make_batch(data, idx);
    auto fake = G->forward(batch.input, batch.context);
    auto gl = losses::generator_loss(batch.target, fake, nullptr, {cfg.lambda_perc, 0.0},
                                     cfg.lambda_perc != 0 ? extractor : nullptr);
    l1 += scalar(gl.l1) * static_cast<double>(idx.size());
    total += scalar(gl.total) * static_cast<double>(idx.size());
  }
  const auto n = static_cast<double>(data.size());
  return {l1 / n, total / n};
}

void run_training(Checkpoint& st, const SliceDataset& train, const RunOptions& o) {
  const auto& cfg = st.config();
  if (train.size() == 0) throw TrainingError("training set is empty");
  if (train.n_context() != cfg.model.n_context()) {
    throw TrainingError("dataset context has " + std::to_string(train.n_context()) + " entries, model expects " +
                        std::to_string(cfg.model.n_context()));
  }
  if (cfg.deterministic) torch::set_num_threads(1);
  std::shared_ptr<losses::FeatureExtractor> extractor;
  if (cfg.lambda_perc != 0) {
    extractor = losses::make_extractor(cfg.extractor.name, cfg.extractor.checkpoint, cfg.seed);
  }

  auto& G = st.generator();
  G->train();
  const bool gan = cfg.arch == Arch::Gan;
  losses::Critic critic;
  if (gan) {
    auto D = st.discriminator();
    D->train();
    critic = [D](const torch::Tensor& x) mutable { return D->forward(x); };
  }

  const std::size_t n = train.size();
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>((n + B - 1) / B);
  auto limit_reached = [&] { return o.max_steps >= 0 && st.global_step >= o.max_steps; };

  while (!st.finished() && !limit_reached()) {
    const int e = st.epoch;
    const auto order = epoch_order(n, cfg.seed, e);
    const double lr_g = cfg.generator_lr(e);
    set_lr(st.generator_optimizer(), lr_g);
    if (gan) set_lr(st.discriminator_optimizer(), cfg.discriminator_lr(e));

    for (std::int64_t k = st.step_in_epoch; k < steps_per_epoch; ++k) {
      if (limit_reached()) return;
      const auto first = static_cast<std::size_t>(k) * B;
      std::span<const std::size_t> idx(order.data() + first, std::min(B, n - first));
      auto batch = make_batch(train, idx);

      StepLog log;
      log.step = st.global_step;
      log.epoch = e;
      log.step_in_epoch = k;
      log.lr = lr_g;

      if (gan) {
        auto& D = st.discriminator();
        log.n_critic = cfg.critic_steps(e);
        log.lambda_gan = cfg.effective_lambda_gan(e);
        torch::Tensor fake_d;
        {
          torch::NoGradGuard no_grad;
          fake_d = G->forward(batch.input, batch.context);
        }
        set_requires_grad(*D, true);
        for (int c = 0; c < log.n_critic; ++c) {
          const auto gp_seed = mix(mix(cfg.seed, static_cast<std::uint64_t>(st.global_step)), c);
          auto dl = losses::discriminator_loss(critic, batch.target, fake_d, cfg.lambda_gp, gp_seed);
          log.d_adversarial = scalar(dl.adversarial);
          log.d_penalty = scalar(dl.penalty);
          log.d_objective = scalar(dl.objective);
          check_finite(log, "discriminator");
          st.discriminator_optimizer().zero_grad();
          dl.objective.backward();
          if (o.gradient_hook) o.gradient_hook(*D);
          st.discriminator_optimizer().step();
        }
        set_requires_grad(*D, false);
      } else {
        log.n_critic = 0;
        log.lambda_gan = 0;
      }

      auto fake = G->forward(batch.input, batch.context);
      auto gl = losses::generator_loss(batch.target, fake, gan ? &critic : nullptr,
                                       {cfg.lambda_perc, gan ? log.lambda_gan : 0.0}, extractor.get());
      log.l1 = scalar(gl.l1);
      log.perceptual = scalar(gl.perceptual);
      log.g_adversarial = scalar(gl.adversarial);
      log.g_total = scalar(gl.total);
      check_finite(log, "generator");
      st.generator_optimizer().zero_grad();
      gl.total.backward();
      if (o.gradient_hook) o.gradient_hook(*G);
      st.generator_optimizer().step();
      if (gan) set_requires_grad(*st.discriminator(), true);

      st.step_in_epoch = k + 1;
      st.global_step += 1;
      st.history.steps.push_back(log);
      if (o.on_step) o.on_step(log);
      if (o.log && cfg.log_every > 0 && st.global_step % cfg.log_every == 0) {
        *o.log << "epoch " << e << " step " << st.global_step << " lr " << lr_g << " l1 " << log.l1 << " total "
               << log.g_total;
        if (gan) *o.log << " d " << log.d_objective << " n_critic " << log.n_critic;
        *o.log << '\n';
      }
    }

    EpochLog el;
    el.epoch = e;
    el.lr = lr_g;
    for (const auto& s : st.history.steps) {
      if (s.epoch != e) continue;
      el.steps += 1;
      el.train_l1 += s.l1;
      el.train_total += s.g_total;
    }
    if (el.steps > 0) {
      el.train_l1 /= static_cast<double>(el.steps);
      el.train_total /= static_cast<double>(el.steps);
    }
    if (o.validation && o.validation->size() > 0) {
      std::tie(el.val_l1, el.val_total) = evaluate(st, *o.validation, extractor.get());
      el.has_validation = true;
      G->train();
    }
    st.history.epochs.push_back(el);
    if (o.log) {
      *o.log << "epoch " << e << " done: train_l1 " << el.train_l1;
      if (el.has_validation) *o.log << " val_l1 " << el.val_l1;
      *o.log << '\n';
    }
    st.epoch += 1;
    st.step_in_epoch = 0;
    if (o.on_epoch) o.on_epoch(el);
  }
}

Checkpoint train_unet(const TrainConfig& config, const SliceDataset& train, const RunOptions& options) {
  if (config.arch != Arch::UNet) throw TrainingError("train_unet: config is for another architecture");
  Checkpoint st(config);
  run_training(st, train, options);
  return st;
}

Checkpoint train_gan(const TrainConfig& config, const SliceDataset& train, const RunOptions& options) {
  if (config.arch != Arch::Gan) throw TrainingError("train_gan: config is for another architecture");
  Checkpoint st(config);
  run_training(st, train, options);
  return st;
}

}  // namespace sr7t::training
