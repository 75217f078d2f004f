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

#include <random>

#include "nn_support.hpp"
#include "oracles.hpp"
#include "sr7t/model.hpp"

using namespace sr7t;
using namespace sr7t::model;

namespace {

std::vector<double> to_vec(const torch::Tensor& t) {
  auto c = t.contiguous().to(torch::kFloat64);
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

double max_rel(const std::vector<double>& got, const std::vector<double>& want) {
  double worst = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double scale = std::max(std::abs(want[i]), 1.0);
    worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("positional encoding matches the closed form") {
  const auto pe = positional_encoding(4, 5, torch::kFloat64);
  CHECK(pe.sizes() == torch::IntArrayRef{4, 5});
  CHECK(pe[0][0].item<double>() == 0.0);
  CHECK(pe[1][0].item<double>() == 1.0);
  for (int pos : {1, 2, 3}) CHECK(pe[0][pos].item<double>() == doctest::Approx(std::sin(pos)).epsilon(1e-15));
  CHECK_THROWS(positional_encoding(3, 4));

  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    const int c = 2 * (1 + static_cast<int>(rng() % 16));
    const int d = 1 + static_cast<int>(rng() % 40);
    const auto got = to_vec(positional_encoding(c, d, torch::kFloat64));
    CHECK(max_rel(got, oracle::positional_encoding(c, d)) < 1e-10);
  }
}

TEST_CASE("attention matches brute force softmax") {
  torch::manual_seed(2);
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + rng() % 7, m = 1 + rng() % 7, dk = 1 + rng() % 6, dv = 1 + rng() % 5;
    auto q = torch::randn({n, dk}, torch::kFloat64), k = torch::randn({m, dk}, torch::kFloat64),
         v = torch::randn({m, dv}, torch::kFloat64);
    const auto got = to_vec(attention(q, k, v));
    CHECK(max_rel(got, oracle::attention(to_vec(q), to_vec(k), to_vec(v), n, m, dk, dv)) < 1e-10);
  }
  SUBCASE("single key returns V") {
    auto q = torch::randn({3, 4}, torch::kFloat64), k = torch::randn({1, 4}, torch::kFloat64),
         v = torch::randn({1, 2}, torch::kFloat64);
    CHECK(torch::equal(attention(q, k, v), v.expand({3, 2})));
  }
  SUBCASE("zero logits average V") {
    auto q = torch::zeros({2, 3}, torch::kFloat64), k = torch::randn({2, 3}, torch::kFloat64),
         v = torch::tensor({{1.0, 4.0}, {3.0, 8.0}}, torch::kFloat64);
    CHECK(torch::allclose(attention(q, k, v), torch::tensor({{2.0, 6.0}, {2.0, 6.0}}, torch::kFloat64)));
  }
  SUBCASE("softmax rows sum to one and ignore per-row shifts") {
    auto q = torch::randn({5, 4}), k = torch::randn({6, 4});
    auto w = attention(q, k, torch::eye(6));
    CHECK(torch::allclose(w.sum(-1), torch::ones({5}), 0, 1e-6));
    // Adding the same vector to every key shifts each row's logits by a constant.
    auto shifted = attention(q, k + torch::randn({1, 4}), torch::eye(6));
    CHECK(torch::allclose(shifted, w, 1e-5, 1e-6));
  }
  CHECK_THROWS(attention(torch::randn({2, 3}), torch::randn({2, 4}), torch::randn({2, 4})));
  CHECK_THROWS(attention(torch::randn({2, 3}), torch::randn({2, 3}), torch::randn({3, 4})));
}

TEST_CASE("AdaDM factor") {
  AdaDM m;
  torch::manual_seed(3);
  auto x = torch::randn({2, 4, 5, 6}, torch::kFloat64);
  m->to(torch::kFloat64);
  const auto f = m->factor(x);
  CHECK(f.sizes() == torch::IntArrayRef{2, 1, 1, 1});
  const auto sigma = x.flatten(1).var(1, false).sqrt();
  CHECK(torch::allclose(f.flatten(), sigma, 1e-9, 0));
  // With slope s, scaling the input by c scales the factor by c^s.
  torch::NoGradGuard ng;
  m->slope.fill_(0.5);
  m->bias.fill_(0.25);
  const auto f1 = m->factor(x), f2 = m->factor(3.0 * x);
  CHECK(torch::allclose(f2 / f1, torch::full_like(f1, std::sqrt(3.0)), 1e-9, 0));
  CHECK(torch::allclose(f1.flatten(), (0.5 * sigma.log() + 0.25).exp(), 1e-9, 0));
}

TEST_CASE("residual block") {
  torch::manual_seed(4);
  SUBCASE("zero final conv makes the block its skip path") {
    ResidualBlock same(8, 8, 4), wider(8, 16, 4);
    init_weights(*same);
    init_weights(*wider);
    auto x = torch::randn({2, 8, 6, 6});
    torch::NoGradGuard ng;
    CHECK(torch::allclose(same->forward(x), x));
    CHECK_FALSE(same->has_skip_projection());
    REQUIRE(wider->has_skip_projection());
    const auto y = wider->forward(x);
    CHECK(y.sizes() == torch::IntArrayRef{2, 16, 6, 6});
    CHECK(torch::allclose(y, wider->skip->forward(x), 1e-6, 1e-6));
  }
  CHECK_THROWS(ResidualBlock(8, 16, 4)->forward(torch::randn({1, 4, 6, 6})));
}

TEST_CASE("U-Net shapes and checks") {
  torch::manual_seed(5);
  auto cfg = testing::toy_model(8);
  cfg.channel_mult = {1, 1, 2, 2, 2};
  cfg.ca_stages = {4, 5};
  AttentionUNet net(cfg);
  init_weights(*net);
  net->eval();
  torch::NoGradGuard ng;
  const auto ctx = torch::tensor({{0.7f, 1.0f, 0.0f, 0.1f}});
  const auto y = net->forward(torch::rand({1, 3, 288, 224}), ctx);
  CHECK(y.sizes() == torch::IntArrayRef{1, 1, 288, 224});
  CHECK(cfg.spatial_divisor() == 32);
  CHECK_THROWS(net->forward(torch::rand({1, 3, 289, 224}), ctx));
  CHECK_THROWS(net->forward(torch::rand({1, 2, 288, 224}), ctx));
  CHECK_THROWS(net->forward(torch::rand({1, 3, 288, 224}), torch::zeros({1, 3})));

  const auto x = torch::rand({2, 3, 64, 32});
  const auto c2 = torch::rand({2, 4});
  CHECK(torch::equal(net->forward(x, c2), net->forward(x, c2)));
}

TEST_CASE("no-diagnosis contexts are rejected by a diagnosis model") {
  auto cfg = testing::toy_model();
  AttentionUNet with(cfg);
  cfg.use_diagnosis = false;
  AttentionUNet without(cfg);
  torch::NoGradGuard ng;
  const auto x = torch::rand({1, 3, 32, 32});
  CHECK_THROWS(with->forward(x, torch::rand({1, 3})));
  CHECK(without->forward(x, torch::rand({1, 3})).sizes() == torch::IntArrayRef{1, 1, 32, 32});
  CHECK_THROWS(without->forward(x, torch::rand({1, 4})));
}

TEST_CASE("generator has no dropout and a single-channel head") {
  AttentionUNet net(testing::toy_model());
  for (const auto& m : net->modules()) CHECK(m->name().find("Dropout") == std::string::npos);
  // The published model removes the final normalization layer.
  auto cfg = ModelConfig{};
  CHECK_FALSE(cfg.use_final_norm);
}

TEST_CASE("patch discriminator") {
  torch::manual_seed(6);
  PatchDiscriminator d(DiscriminatorConfig{});
  init_weights(*d);
  torch::NoGradGuard ng;
  const auto s = d->forward(torch::rand({1, 1, 288, 224}));
  CHECK(s.sizes() == torch::IntArrayRef{1, 1, 9, 7});
  CHECK(DiscriminatorConfig{}.leaky_slope == 0.2);
  CHECK_THROWS(d->forward(torch::rand({1, 1, 280, 224})));
  CHECK_THROWS(d->forward(torch::rand({1, 2, 288, 224})));

  PatchDiscriminator z(testing::toy_discriminator(8, 3));
  for (auto& p : z->parameters()) p.zero_();
  const auto zs = z->forward(torch::rand({2, 1, 32, 48}));
  CHECK(zs.sizes() == torch::IntArrayRef{2, 1, 4, 6});
  CHECK(torch::equal(zs, torch::zeros_like(zs)));
}

TEST_CASE("config validation and JSON") {
  ModelConfig m;
  CHECK_NOTHROW(m.validate());
  CHECK(m.stage_channels(0) == 256);
  CHECK(m.has_cross_attention(3));
  CHECK_FALSE(m.has_cross_attention(0));
  const auto back = ModelConfig::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  auto j = m.to_json();
  j["n_resnet_block"] = 2;
  CHECK_THROWS(ModelConfig::from_json(j));

  auto bad = m;
  bad.n_groups = 48;
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = m;
  bad.n_input_slices = 2;
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = m;
  bad.channel_mult = {1, 2, 1};
  CHECK_THROWS_AS(bad.validate(), ModelError);
  bad = m;
  bad.ca_stages = {5};
  CHECK_THROWS_AS(bad.validate(), ModelError);

  DiscriminatorConfig d;
  CHECK(DiscriminatorConfig::from_json(d.to_json()).to_json() == d.to_json());
  d.n_layers = 0;
  CHECK_THROWS(d.validate());
}
