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
#include <torch/torch.h>

#include <cmath>
#include <random>

#include "nn_support.hpp"
#include "oracles.hpp"
#include "sr7t/losses.hpp"
#include "sr7t/model.hpp"

using namespace sr7t;
using namespace sr7t::losses;

namespace {

std::vector<double> to_vec(const torch::Tensor& t) {
  auto c = t.contiguous().to(torch::kFloat64);
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

// Features 2x and x^2.
class TwoLayerExtractor final : public FeatureExtractor {
 public:
  std::vector<torch::Tensor> features(const torch::Tensor& image) override { return {2 * image, image * image}; }
  std::string name() const override { return "two_layer"; }
};

}  // namespace

TEST_CASE("l1 matches brute force") {
  std::mt19937_64 rng(1);
  torch::manual_seed(1);
  for (int t = 0; t < 100; ++t) {
    const int h = 1 + rng() % 9, w = 1 + rng() % 9;
    auto a = torch::rand({2, 1, h, w}), b = torch::rand({2, 1, h, w});
    CHECK(oracle::rel_err(losses::l1_loss(a, b).item<double>(), oracle::l1(to_vec(a), to_vec(b))) < 1e-6);
    auto ad = a.to(torch::kFloat64), bd = b.to(torch::kFloat64);
    CHECK(oracle::rel_err(losses::l1_loss(ad, bd).item<double>(), oracle::l1(to_vec(ad), to_vec(bd))) < 1e-10);
    CHECK(losses::l1_loss(ad, bd).item<double>() == losses::l1_loss(bd, ad).item<double>());
    CHECK(losses::l1_loss(ad + 0.25, bd + 0.25).item<double>() == doctest::Approx(losses::l1_loss(ad, bd).item<double>()).epsilon(1e-12));
  }
  CHECK(losses::l1_loss(torch::zeros({1, 1, 2, 2}), torch::ones({1, 1, 2, 2})).item<double>() == 1.0);
  CHECK(losses::l1_loss(torch::ones({3}), torch::ones({3})).item<double>() == 0.0);
  CHECK_THROWS_AS(losses::l1_loss(torch::ones({3}), torch::ones({4})), LossError);
}

TEST_CASE("perceptual loss") {
  torch::manual_seed(2);
  auto r = torch::rand({2, 1, 8, 8}, torch::kFloat64), f = torch::rand({2, 1, 8, 8}, torch::kFloat64);
  IdentityExtractor id;
  CHECK(perceptual_loss(r, f, id).item<double>() == doctest::Approx((r - f).pow(2).mean().item<double>()).epsilon(1e-14));
  CHECK(perceptual_loss(r, r, id).item<double>() == 0.0);

  TwoLayerExtractor two;
  const auto rv = to_vec(r), fv = to_vec(f);
  long double s1 = 0, s2 = 0;
  for (std::size_t i = 0; i < rv.size(); ++i) {
    const long double a = rv[i], b = fv[i];
    s1 += (2 * a - 2 * b) * (2 * a - 2 * b);
    s2 += (a * a - b * b) * (a * a - b * b);
  }
  const double want = static_cast<double>((s1 + s2) / rv.size() / 2);
  CHECK(oracle::rel_err(perceptual_loss(r, f, two).item<double>(), want) < 1e-6);

  RandomConvExtractor e1(7), e2(7), e3(8);
  const auto p1 = perceptual_loss(r, f, e1).item<double>();
  CHECK(p1 > 0);
  CHECK(perceptual_loss(r, f, e2).item<double>() == p1);
  CHECK(perceptual_loss(r, f, e3).item<double>() != p1);
  CHECK(e1.features(r).size() == 4);
  CHECK(e1.features(r).back().sizes() == torch::IntArrayRef{2, 32, 1, 1});
  CHECK_THROWS_AS(make_extractor("vgg", {}, 0), LossError);
  CHECK_THROWS_AS(make_extractor("torchscript", {}, 0), LossError);
  CHECK_THROWS_AS(make_extractor("torchscript", "/nonexistent.pt", 0), LossError);
  CHECK(make_extractor("identity", {}, 0)->name() == "identity");
}

TEST_CASE("gradient penalty exact cases") {
  // Linear critic with weights +-1/32 on 32x32 has unit gradient norm everywhere.
  auto w = torch::full({1, 1, 32, 32}, 1.0 / 32, torch::kFloat64);
  for (int i = 0; i < 32 * 32; i += 3) w.view(-1)[i] = -1.0 / 32;
  const Critic linear = [&](const torch::Tensor& x) { return (x * w).sum({1, 2, 3}); };
  const Critic constant = [](const torch::Tensor& x) { return torch::zeros({x.size(0)}, x.options()); };
  const Critic flat = [](const torch::Tensor& x) { return 0 * x.sum({1, 2, 3}); };
  torch::manual_seed(3);
  auto real = torch::rand({3, 1, 32, 32}, torch::kFloat64), fake = torch::rand({3, 1, 32, 32}, torch::kFloat64);
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    CHECK(gradient_penalty(linear, real, fake, seed).item<double>() == 0.0);
    CHECK(gradient_penalty(constant, real, fake, seed).item<double>() == 1.0);
    CHECK(gradient_penalty(flat, real, fake, seed).item<double>() == 1.0);
  }

  SUBCASE("quadratic critic against the closed form") {
    const double c = 0.3;
    const Critic quad = [&](const torch::Tensor& x) { return c * x.pow(2).sum({1, 2, 3}); };
    auto alpha = torch::tensor({0.25, 0.5, 0.9}, torch::kFloat64);
    long double want = 0;
    for (int b = 0; b < 3; ++b) {
      const double a = alpha[b].item<double>();
      long double sq = 0;
      const auto rv = real[b].flatten(), fv = fake[b].flatten();
      for (int i = 0; i < 1024; ++i) {
        const long double x = a * rv[i].item<double>() + (1 - a) * fv[i].item<double>();
        sq += 4 * c * c * x * x;
      }
      want += (std::sqrt(sq) - 1) * (std::sqrt(sq) - 1);
    }
    CHECK(oracle::rel_err(gradient_penalty(quad, real, fake, alpha).item<double>(), static_cast<double>(want / 3)) <
          1e-10);
  }

  SUBCASE("the penalty backpropagates into the critic") {
    // D(x) = v * sum(x): ||grad|| = |v| * 32, penalty (32|v| - 1)^2.
    auto v = torch::tensor({0.05}, torch::kFloat64).requires_grad_(true);
    const Critic scaled = [&](const torch::Tensor& x) { return v * x.sum({1, 2, 3}); };
    auto gp = gradient_penalty(scaled, real, fake, 5);
    CHECK(gp.item<double>() == doctest::Approx(std::pow(32 * 0.05 - 1, 2)).epsilon(1e-12));
    gp.backward();
    CHECK(v.grad().item<double>() == doctest::Approx(2 * (32 * 0.05 - 1) * 32).epsilon(1e-12));
  }

  SUBCASE("seeded mixing is reproducible") {
    const Critic quad = [](const torch::Tensor& x) { return x.pow(3).sum({1, 2, 3}); };
    CHECK(gradient_penalty(quad, real, fake, 4).item<double>() == gradient_penalty(quad, real, fake, 4).item<double>());
    CHECK(gradient_penalty(quad, real, fake, 4).item<double>() != gradient_penalty(quad, real, fake, 5).item<double>());
  }

  CHECK_THROWS_AS(gradient_penalty(linear, real, fake, torch::ones({2}, torch::kFloat64)), LossError);
  CHECK_THROWS_AS(gradient_penalty(linear, real, fake.slice(0, 0, 2), 0), LossError);
  const Critic blowup = [](const torch::Tensor& x) { return (x.sum({1, 2, 3}) * 0).sqrt(); };
  CHECK_THROWS_AS(gradient_penalty(blowup, real, fake, 0), LossError);
}

TEST_CASE("adversarial terms") {
  const auto half = torch::full({4}, 0.5, torch::kFloat64);
  CHECK(adversarial_term(half, half).item<double>() == doctest::Approx(2 * std::log(0.5)).epsilon(1e-15));
  const auto zero = torch::zeros({2, 1, 3, 3}, torch::kFloat64);
  CHECK(adversarial_term_logits(zero, zero).item<double>() == doctest::Approx(2 * std::log(0.5)).epsilon(1e-15));
  CHECK(adversarial_term(torch::tensor({0.9}), torch::tensor({0.2})).item<double>() ==
        doctest::Approx(std::log(0.9) + std::log(0.8)).epsilon(1e-6));
  CHECK_THROWS_AS(adversarial_term(torch::tensor({1.0}), half), LossError);
  CHECK_THROWS_AS(adversarial_term(half, torch::tensor({0.0})), LossError);
  CHECK_THROWS_AS(adversarial_term(torch::tensor({-0.1}), half), LossError);

  torch::manual_seed(4);
  const auto rl = torch::randn({5}, torch::kFloat64), fl = torch::randn({5}, torch::kFloat64);
  CHECK(adversarial_term_logits(rl, fl).item<double>() ==
        doctest::Approx(adversarial_term(torch::sigmoid(rl), torch::sigmoid(fl)).item<double>()).epsilon(1e-12));
  // Confident logits stay finite where probabilities would saturate.
  CHECK(std::isfinite(adversarial_term_logits(torch::tensor({80.0}), torch::tensor({-80.0})).item<double>()));
  CHECK(adversarial_term_logits(rl, fl).item<double>() <= 0);
}

TEST_CASE("discriminator and generator objectives") {
  torch::manual_seed(5);
  const auto real = torch::rand({2, 1, 32, 32}, torch::kFloat64), fake = torch::rand({2, 1, 32, 32}, torch::kFloat64);
  const Critic zero = [](const torch::Tensor& x) { return 0 * x.mean({1, 2, 3}, true); };
  const auto d = discriminator_loss(zero, real, fake, 10, 0);
  CHECK(d.adversarial.item<double>() == doctest::Approx(2 * std::log(0.5)).epsilon(1e-15));
  CHECK(d.penalty.item<double>() == 1.0);
  CHECK(d.objective.item<double>() == doctest::Approx(-2 * std::log(0.5) + 10).epsilon(1e-15));
  CHECK(discriminator_loss(zero, real, fake, 0, 0).penalty.item<double>() == 0.0);

  const auto l1 = losses::l1_loss(real, fake).item<double>();
  const auto plain = generator_loss(real, fake, nullptr, {}, nullptr);
  CHECK(plain.total.item<double>() == l1);
  CHECK(plain.perceptual.item<double>() == 0.0);
  CHECK(plain.adversarial.item<double>() == 0.0);

  IdentityExtractor id;
  const auto full = generator_loss(real, fake, &zero, {0.05, 0.1}, &id);
  CHECK(full.adversarial.item<double>() == doctest::Approx(-std::log(0.5)).epsilon(1e-15));
  CHECK(full.total.item<double>() ==
        doctest::Approx(l1 + 0.05 * (real - fake).pow(2).mean().item<double>() - 0.1 * std::log(0.5)).epsilon(1e-14));
  CHECK_THROWS_AS(generator_loss(real, fake, nullptr, {0, 0.1}, nullptr), LossError);
  CHECK_THROWS_AS(generator_loss(real, fake, nullptr, {0.05, 0}, nullptr), LossError);
}

TEST_CASE("generator gradients match central differences") {
  for (std::uint64_t seed : {6u, 7u}) {
    const int good = testing::generator_gradient_check(200, seed);
    MESSAGE("gradient check seed " << seed << ": " << good << "/200");
    CHECK(good >= 190);
  }
}
