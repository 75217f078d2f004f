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

#include "sr7t/losses.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/script.h>

#include <cmath>

namespace sr7t::losses {

namespace F = torch::nn::functional;

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.defined() || !b.defined()) throw LossError(std::string(what) + ": undefined tensor");
  if (a.sizes() != b.sizes()) {
    throw LossError(std::string(what) + ": shape mismatch " + c10::str(a.sizes()) + " vs " + c10::str(b.sizes()));
  }
}

bool all_finite(const torch::Tensor& t) { return torch::isfinite(t.detach()).all().item<bool>(); }

}  // namespace

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, std::vector<int> widths) {
  if (widths.empty()) throw LossError("random_conv: no layers");
  auto gen = at::detail::createCPUGenerator(seed);
  int in = 1;
  for (int w : widths) {
    const double std = std::sqrt(2.0 / (9.0 * in));
    weights_.push_back(torch::randn({w, in, 3, 3}, gen, torch::kFloat64) * std);
    in = w;
  }
}

std::vector<torch::Tensor> RandomConvExtractor::features(const torch::Tensor& image) {
  std::vector<torch::Tensor> out;
  auto h = image;
  for (const auto& w : weights_) {
    h = F::leaky_relu(F::conv2d(h, w.to(image.dtype()), F::Conv2dFuncOptions().stride(2).padding(1)),
                      F::LeakyReLUFuncOptions().negative_slope(0.2));
    out.push_back(h);
  }
  return out;
}

struct TorchScriptExtractor::Impl {
  torch::jit::script::Module module;
};

TorchScriptExtractor::TorchScriptExtractor(const std::filesystem::path& path) : impl_(std::make_shared<Impl>()) {
  try {
    impl_->module = torch::jit::load(path.string());
  } catch (const c10::Error& e) {
    throw LossError("torchscript extractor: cannot load " + path.string() + ": " + e.what_without_backtrace());
  }
  impl_->module.eval();
  for (auto p : impl_->module.parameters()) p.requires_grad_(false);
}

std::vector<torch::Tensor> TorchScriptExtractor::features(const torch::Tensor& image) {
  auto result = impl_->module.forward({image});
  std::vector<torch::Tensor> out;
  if (result.isTensor()) {
    out.push_back(result.toTensor());
  } else if (result.isTuple()) {
    for (const auto& e : result.toTupleRef().elements()) out.push_back(e.toTensor());
  } else if (result.isList()) {
    for (const auto& e : result.toListRef()) out.push_back(e.toTensor());
  } else {
    throw LossError("torchscript extractor: forward must return a tensor, tuple or list");
  }
  if (out.empty()) throw LossError("torchscript extractor: no feature maps");
  return out;
}

std::shared_ptr<FeatureExtractor> make_extractor(const std::string& name, const std::filesystem::path& checkpoint,
                                                 std::uint64_t seed) {
  if (name == "identity") return std::make_shared<IdentityExtractor>();
  if (name == "random_conv") return std::make_shared<RandomConvExtractor>(seed);
  if (name == "torchscript") {
    if (checkpoint.empty()) throw LossError("torchscript extractor needs a checkpoint path");
    return std::make_shared<TorchScriptExtractor>(checkpoint);
  }
  throw LossError("unknown feature extractor '" + name + "' (identity, random_conv, torchscript)");
}

torch::Tensor l1_loss(const torch::Tensor& a, const torch::Tensor& b) {
  check_same_shape(a, b, "l1_loss");
  return (a - b).abs().mean();
}

torch::Tensor perceptual_loss(const torch::Tensor& real, const torch::Tensor& fake, FeatureExtractor& extractor) {
  check_same_shape(real, fake, "perceptual_loss");
  auto fr = extractor.features(real);
  auto ff = extractor.features(fake);
  if (fr.size() != ff.size() || fr.empty()) throw LossError("perceptual_loss: extractor layer count mismatch");
  auto total = torch::zeros({}, real.options());
  for (std::size_t i = 0; i < fr.size(); ++i) total = total + (fr[i] - ff[i]).pow(2).mean();
  return total / static_cast<double>(fr.size());
}

torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               std::uint64_t seed) {
  check_same_shape(real, fake, "gradient_penalty");
  auto gen = at::detail::createCPUGenerator(seed);
  auto alpha = torch::rand({real.size(0)}, gen, torch::kFloat64).to(real.dtype());
  return gradient_penalty(critic, real, fake, alpha);
}

torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                               const torch::Tensor& alpha) {
  check_same_shape(real, fake, "gradient_penalty");
  if (real.dim() < 2) throw LossError("gradient_penalty: expected a batch");
  if (alpha.dim() != 1 || alpha.size(0) != real.size(0)) throw LossError("gradient_penalty: alpha must have shape (B)");
  std::vector<int64_t> shape(real.dim(), 1);
  shape[0] = real.size(0);
  auto a = alpha.to(real.dtype()).view(shape);
  auto x = (a * real.detach() + (1 - a) * fake.detach()).requires_grad_(true);
  auto scores = critic(x);
  torch::Tensor grad;
  if (scores.requires_grad()) {
    grad = torch::autograd::grad({scores.sum()}, {x}, {}, /*retain_graph=*/true, /*create_graph=*/true,
                                 /*allow_unused=*/true)[0];
  }
  if (!grad.defined()) grad = torch::zeros_like(x);
  if (!all_finite(grad)) throw LossError("gradient_penalty: critic gradient is not finite at the interpolates");
  auto norm = torch::linalg_vector_norm(grad.flatten(1), 2, {1}, false, c10::nullopt);
  return (norm - 1).pow(2).mean();
}

torch::Tensor adversarial_term(const torch::Tensor& p_real, const torch::Tensor& p_fake) {
  for (const auto* p : {&p_real, &p_fake}) {
    auto d = p->detach();
    if (!(d.gt(0).all().item<bool>() && d.lt(1).all().item<bool>())) {
      throw LossError("adversarial_term: probabilities must lie in (0, 1)");
    }
  }
  return torch::log(p_real).mean() + torch::log(1 - p_fake).mean();
}

torch::Tensor adversarial_term_logits(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return F::logsigmoid(real_logits).mean() + F::logsigmoid(-fake_logits).mean();
}

DiscriminatorLoss discriminator_loss(const Critic& critic, const torch::Tensor& real, const torch::Tensor& fake,
                                     double lambda_gp, std::uint64_t seed) {
  check_same_shape(real, fake, "discriminator_loss");
  DiscriminatorLoss out;
  out.adversarial = adversarial_term_logits(critic(real.detach()), critic(fake.detach()));
  out.penalty = lambda_gp != 0 ? gradient_penalty(critic, real, fake, seed) : torch::zeros({}, real.options());
  out.objective = -out.adversarial + lambda_gp * out.penalty;
  return out;
}

GeneratorLoss generator_loss(const torch::Tensor& real, const torch::Tensor& fake, const Critic* critic,
                             const GeneratorWeights& w, FeatureExtractor* extractor) {
  check_same_shape(real, fake, "generator_loss");
  GeneratorLoss out;
  const auto zero = torch::zeros({}, fake.options());
  out.l1 = losses::l1_loss(real, fake);
  if (w.lambda_perc != 0) {
    if (!extractor) throw LossError("generator_loss: lambda_perc > 0 needs a feature extractor");
    out.perceptual = perceptual_loss(real, fake, *extractor);
  } else {
    out.perceptual = zero;
  }
  if (w.lambda_gan != 0) {
    if (!critic) throw LossError("generator_loss: lambda_gan > 0 needs a critic");
    out.adversarial = -F::logsigmoid((*critic)(fake)).mean();
  } else {
    out.adversarial = zero;
  }
  out.total = out.l1 + w.lambda_perc * out.perceptual + w.lambda_gan * out.adversarial;
  return out;
}

}  // namespace sr7t::losses
