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

#ifndef SR7T_LOSSES_HPP
#define SR7T_LOSSES_HPP

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace sr7t::losses {

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Frozen image encoder whose intermediate activations define the
/// perceptual loss.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<torch::Tensor> features(const torch::Tensor& image) = 0;
  virtual std::string name() const = 0;
};

/// Returns the image itself as the only feature map.
class IdentityExtractor final : public FeatureExtractor {
 public:
  std::vector<torch::Tensor> features(const torch::Tensor& image) override { return {image}; }
  std::string name() const override { return "identity"; }
};

/// Strided 3x3 conv encoder with fixed seeded weights and LeakyReLU, one
/// feature map per layer. Works in whatever dtype the input has.
class RandomConvExtractor final : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(std::uint64_t seed = 0, std::vector<int> widths = {8, 16, 32, 32});
  std::vector<torch::Tensor> features(const torch::Tensor& image) override;
  std::string name() const override { return "random_conv"; }

 private:
  std::vector<torch::Tensor> weights_;
};

/// TorchScript module mapping (B, 1, H, W) to a tensor or a list/tuple of
/// tensors. Parameters are frozen.
class TorchScriptExtractor final : public FeatureExtractor {
 public:
  explicit TorchScriptExtractor(const std::filesystem::path& path);
  std::vector<torch::Tensor> features(const torch::Tensor& image) override;
  std::string name() const override { return "torchscript"; }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// name is one of identity, random_conv, torchscript (which needs checkpoint).
std::shared_ptr<FeatureExtractor> make_extractor(const std::string& name, const std::filesystem::path& checkpoint,
                                                 std::uint64_t seed);

/// Scores every patch; maps (B, 1, H, W) to (B, 1, h, w) raw logits.
using Critic = std::function<torch::Tensor(const torch::Tensor&)>;

/// Mean absolute difference.
torch::Tensor l1_loss(const torch::Tensor& a, const torch::Tensor& b);

/// Mean over extractor layers of the per-layer mean squared feature difference.
torch::Tensor perceptual_loss(const torch::Tensor& real, const torch::Tensor& fake, FeatureExtractor& extractor);

/// Mean over the batch of (||grad_x sum D(x)||_2 - 1)^2 at x = a*real + (1-a)*fake,
/// a ~ U(0, 1) per sample drawn from a generator seeded with `seed`.
torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               std::uint64_t seed);
/// Same, with explicit per-sample mixing weights alpha of shape (B).
torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               const torch::Tensor& alpha);

/// mean log D(real) + mean log(1 - D(fake)) for probabilities in (0, 1).
torch::Tensor adversarial_term(const torch::Tensor& p_real, const torch::Tensor& p_fake);
/// Same quantity from raw logits, computed with log-sigmoid.
torch::Tensor adversarial_term_logits(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);

struct DiscriminatorLoss {
  torch::Tensor adversarial;  // <= 0, maximized by the critic
  torch::Tensor penalty;
  torch::Tensor objective;  // -adversarial + lambda_gp * penalty, minimized
};

DiscriminatorLoss discriminator_loss(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                                     double lambda_gp, std::uint64_t seed);

struct GeneratorWeights {
  double lambda_perc = 0;
  double lambda_gan = 0;
};

struct GeneratorLoss {
  torch::Tensor l1;
  torch::Tensor perceptual;
  torch::Tensor adversarial;  // -mean log D(fake)
  torch::Tensor total;
};

/// l1 + lambda_perc * perceptual + lambda_gan * adversarial. The critic and
/// extractor may be null when their weight is zero.
GeneratorLoss generator_loss(const torch::Tensor& real, const torch::Tensor& fake, const Critic* critic,
                             const GeneratorWeights& weights, FeatureExtractor* extractor);

}  // namespace sr7t::losses

#endif  // SR7T_LOSSES_HPP
