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

#ifndef SR7T_TRAINING_HPP
#define SR7T_TRAINING_HPP

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <json.hpp>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sr7t/csv.hpp"
#include "sr7t/losses.hpp"
#include "sr7t/model.hpp"
#include "sr7t/volume.hpp"

namespace sr7t::training {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Arch { UNet, Gan };

Arch parse_arch(const std::string& s);
std::string to_string(Arch a);

struct ExtractorConfig {
  std::string name = "random_conv";
  std::string checkpoint;
};

struct TrainConfig {
  Arch arch = Arch::UNet;
  model::ModelConfig model;
  model::DiscriminatorConfig discriminator;

  int n_epochs = 4;
  int batch_size = 56;
  double lr = 1e-4;
  double lr_schedule = 0.5;  // multiplicative decay per epoch
  std::array<double, 2> betas = {0.9, 0.999};
  double dropout = 0;
  double lambda_perc = 5e-2;

  int n_critic = 5;
  double lr_discriminator = 2e-5;
  std::array<double, 2> betas_discriminator = {0.0, 0.9};
  double lambda_gan = 0.1;
  double lambda_gp = 10;
  int warmup_epochs = 1;
  int warmup_n_critic = 1;
  double warmup_lambda_gan_divisor = 10;

  ExtractorConfig extractor;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  int log_every = 50;
  bool deterministic = true;

  /// Published hyperparameters for each architecture.
  static TrainConfig defaults(Arch arch);
  /// Defaults for j["arch"] (or `arch` when absent) overridden by j. Unknown
  /// keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j, Arch arch = Arch::UNet);
  nlohmann::json to_json() const;
  void validate() const;
  /// FNV-1a over the canonical JSON dump, hex encoded.
  std::string hash() const;

  double generator_lr(int epoch) const;
  double discriminator_lr(int epoch) const;
  int critic_steps(int epoch) const;
  double effective_lambda_gan(int epoch) const;
};

TrainConfig load_config(const std::filesystem::path& path, Arch arch);

/// lr_init * decay^epoch (epoch counted from 0).
double lr_at(int epoch, double lr_init, double decay);

/// In-memory training samples.
class SliceDataset {
 public:
  SliceDataset() = default;
  explicit SliceDataset(std::vector<SliceSample> samples);
  void add(std::vector<SliceSample> samples);
  std::size_t size() const { return samples_.size(); }
  const SliceSample& operator[](std::size_t i) const { return samples_.at(i); }
  std::int64_t n_context() const;

 private:
  std::vector<SliceSample> samples_;
};

struct Batch {
  torch::Tensor input;    // (B, S, H, W)
  torch::Tensor target;   // (B, 1, H, W)
  torch::Tensor context;  // (B, n_context)
};

Batch make_batch(const SliceDataset& data, std::span<const std::size_t> indices, torch::Dtype dtype = torch::kFloat32);

/// Deterministic sample order for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// Splits subjects into (train, validation) ids, stratified by gender and
/// diagnosis and spread over age within each stratum.
std::pair<std::vector<std::string>, std::vector<std::string>> stratified_split(
    const std::vector<SubjectMetadata>& subjects, double validation_fraction, std::uint64_t seed);

struct StepLog {
  std::int64_t step = 0;
  int epoch = 0;
  std::int64_t step_in_epoch = 0;
  double lr = 0;
  int n_critic = 0;
  double lambda_gan = 0;
  double l1 = 0;
  double perceptual = 0;
  double g_adversarial = 0;
  double g_total = 0;
  double d_adversarial = 0;
  double d_penalty = 0;
  double d_objective = 0;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  std::int64_t steps = 0;
  double train_l1 = 0;
  double train_total = 0;
  double val_l1 = 0;
  double val_total = 0;
  bool has_validation = false;
};

struct History {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;

  CsvTable steps_csv() const;
  CsvTable epochs_csv() const;
  nlohmann::json to_json() const;
  static History from_json(const nlohmann::json& j);
};

struct RunOptions {
  std::int64_t max_steps = -1;  // total generator steps, across resumes
  const SliceDataset* validation = nullptr;
  std::ostream* log = nullptr;
  /// Called after backward and before each optimizer step; the place to
  /// all-reduce gradients when training on several devices.
  std::function<void(torch::nn::Module&)> gradient_hook;
  std::function<void(const StepLog&)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Everything needed to continue a run: weights, optimizer state, position
/// and history.
class Checkpoint {
 public:
  explicit Checkpoint(TrainConfig config);

  const TrainConfig& config() const { return config_; }
  model::AttentionUNet& generator() { return generator_; }
  model::PatchDiscriminator& discriminator() { return discriminator_; }
  bool has_discriminator() const { return !discriminator_.is_empty(); }
  torch::optim::Adam& generator_optimizer() { return *opt_g_; }
  torch::optim::Adam& discriminator_optimizer() { return *opt_d_; }

  int epoch = 0;
  std::int64_t step_in_epoch = 0;
  std::int64_t global_step = 0;
  History history;

  bool finished() const { return epoch >= config_.n_epochs; }
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  TrainConfig config_;
  model::AttentionUNet generator_{nullptr};
  model::PatchDiscriminator discriminator_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
};

/// Generator weights and config only, for inference.
model::AttentionUNet load_generator(const std::filesystem::path& checkpoint);

/// Runs (or resumes) the training loop until the configured epochs or
/// options.max_steps are reached.
void run_training(Checkpoint& state, const SliceDataset& train, const RunOptions& options = {});

Checkpoint train_unet(const TrainConfig& config, const SliceDataset& train, const RunOptions& options = {});
Checkpoint train_gan(const TrainConfig& config, const SliceDataset& train, const RunOptions& options = {});

/// Mean L1 and training objective (generator side) over a dataset, no grad.
std::pair<double, double> evaluate(Checkpoint& state, const SliceDataset& data, losses::FeatureExtractor* extractor);

}  // namespace sr7t::training

#endif  // SR7T_TRAINING_HPP
