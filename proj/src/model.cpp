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

#include "sr7t/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace sr7t::model {

namespace F = torch::nn::functional;
using nlohmann::json;

namespace {

constexpr double kSigmaEps = 1e-10;

torch::nn::Conv2d conv3x3(int in, int out, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Linear linear(int in, int out, bool bias) {
  return torch::nn::Linear(torch::nn::LinearOptions(in, out).bias(bias));
}

torch::nn::GroupNorm group_norm(int groups, int channels) {
  return torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, channels));
}

void check_keys(const json& j, const std::set<std::string>& allowed, const char* what) {
  if (!j.is_object()) throw ModelError(std::string(what) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ModelError(std::string(what) + ": unknown key '" + key + "'");
  }
}

// (B, C, H, W) -> (B, H*W, C) with the positional encoding added.
torch::Tensor to_tokens(const torch::Tensor& h) {
  auto flat = h.flatten(2);
  flat = flat + positional_encoding(flat.size(1), flat.size(2), flat.scalar_type());
  return flat.transpose(1, 2);
}

}  // namespace

bool ModelConfig::has_cross_attention(int stage) const {
  return std::find(ca_stages.begin(), ca_stages.end(), stage + 1) != ca_stages.end();
}

void ModelConfig::validate() const {
  if (c <= 0) throw ModelError("model: c must be positive");
  if (channel_mult.empty()) throw ModelError("model: channel_multiplication must not be empty");
  if (n_groups <= 0) throw ModelError("model: n_groups must be positive");
  if (c % n_groups != 0) throw ModelError("model: n_groups must divide c");
  for (int m : channel_mult) {
    if (m <= 0) throw ModelError("model: channel multipliers must be positive");
    if ((c * m) % n_groups != 0) throw ModelError("model: n_groups must divide every stage width");
  }
  if (!std::is_sorted(channel_mult.begin(), channel_mult.end()))
    throw ModelError("model: channel multipliers must be nondecreasing");
  if (n_res < 1) throw ModelError("model: n_res must be at least 1");
  for (int s : ca_stages) {
    if (s < 1 || s > stages()) {
      throw ModelError("model: ca_stages entry " + std::to_string(s) + " outside 1.." + std::to_string(stages()));
    }
  }
  if (n_input_slices < 1 || n_input_slices % 2 == 0) throw ModelError("model: n_input_slices must be odd");
  if (context_dim <= 0) throw ModelError("model: context_dim must be positive");
}

json ModelConfig::to_json() const {
  return {{"c", c},
          {"channel_multiplication", channel_mult},
          {"n_groups", n_groups},
          {"n_res", n_res},
          {"ca_stages", ca_stages},
          {"n_input_slices", n_input_slices},
          {"context_dim", context_dim},
          {"use_diagnosis", use_diagnosis},
          {"use_final_norm", use_final_norm}};
}

ModelConfig ModelConfig::from_json(const json& j) { return from_json(j, ModelConfig{}); }

ModelConfig ModelConfig::from_json(const json& j, ModelConfig base) {
  check_keys(j,
             {"c", "channel_multiplication", "n_groups", "n_res", "ca_stages", "n_input_slices", "context_dim",
              "use_diagnosis", "use_final_norm"},
             "model config");
  if (j.contains("c")) base.c = j.at("c").get<int>();
  if (j.contains("channel_multiplication")) base.channel_mult = j.at("channel_multiplication").get<std::vector<int>>();
  if (j.contains("n_groups")) base.n_groups = j.at("n_groups").get<int>();
  if (j.contains("n_res")) base.n_res = j.at("n_res").get<int>();
  if (j.contains("ca_stages")) base.ca_stages = j.at("ca_stages").get<std::vector<int>>();
  if (j.contains("n_input_slices")) base.n_input_slices = j.at("n_input_slices").get<int>();
  if (j.contains("context_dim")) base.context_dim = j.at("context_dim").get<int>();
  if (j.contains("use_diagnosis")) base.use_diagnosis = j.at("use_diagnosis").get<bool>();
  if (j.contains("use_final_norm")) base.use_final_norm = j.at("use_final_norm").get<bool>();
  base.validate();
  return base;
}

void DiscriminatorConfig::validate() const {
  if (n_layers < 1) throw ModelError("discriminator: n_layers must be at least 1");
  if (c1 <= 0) throw ModelError("discriminator: c_discriminator must be positive");
  if (leaky_slope < 0) throw ModelError("discriminator: negative LeakyReLU slope");
  if (max_mult < 1) throw ModelError("discriminator: max_mult must be at least 1");
}

json DiscriminatorConfig::to_json() const {
  return {{"n_layers", n_layers}, {"c_discriminator", c1}, {"leaky_slope", leaky_slope}, {"max_mult", max_mult}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const json& j) {
  return from_json(j, DiscriminatorConfig{});
}

DiscriminatorConfig DiscriminatorConfig::from_json(const json& j, DiscriminatorConfig base) {
  check_keys(j, {"n_layers", "c_discriminator", "leaky_slope", "max_mult"}, "discriminator config");
  if (j.contains("n_layers")) base.n_layers = j.at("n_layers").get<int>();
  if (j.contains("c_discriminator")) base.c1 = j.at("c_discriminator").get<int>();
  if (j.contains("leaky_slope")) base.leaky_slope = j.at("leaky_slope").get<double>();
  if (j.contains("max_mult")) base.max_mult = j.at("max_mult").get<int>();
  base.validate();
  return base;
}

torch::Tensor positional_encoding(std::int64_t channels, std::int64_t positions, torch::Dtype dtype) {
  if (channels <= 0 || positions <= 0) throw ModelError("positional_encoding: sizes must be positive");
  if (channels % 2 != 0) throw ModelError("positional_encoding: channel count must be even");
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const std::int64_t half = channels / 2;
  auto pos = torch::arange(positions, opts).unsqueeze(0);
  auto expo = torch::arange(0, 2 * half, 2, opts) / static_cast<double>(channels);
  auto div = torch::pow(10000.0, expo).unsqueeze(1);
  auto arg = pos / div;  // (half, positions)
  auto pe = torch::stack({torch::sin(arg), torch::cos(arg)}, 1).reshape({2 * half, positions});
  return pe.to(dtype);
}

torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v) {
  if (q.dim() < 2 || k.dim() != q.dim() || v.dim() != q.dim()) throw ModelError("attention: rank mismatch");
  if (q.size(-1) != k.size(-1)) throw ModelError("attention: query and key widths differ");
  if (k.size(-2) != v.size(-2)) throw ModelError("attention: key and value counts differ");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
  auto scores = torch::matmul(q, k.transpose(-2, -1)) * scale;
  return torch::matmul(torch::softmax(scores, -1), v);
}

AdaDMImpl::AdaDMImpl() {
  slope = register_parameter("slope", torch::ones({1}));
  bias = register_parameter("bias", torch::zeros({1}));
}

torch::Tensor AdaDMImpl::factor(const torch::Tensor& x) const {
  auto mean = x.mean({1, 2, 3}, true);
  auto var = (x - mean).pow(2).mean({1, 2, 3}, true);
  auto log_sigma = 0.5 * torch::log(var + kSigmaEps);
  return torch::exp(slope.to(x.dtype()) * log_sigma + bias.to(x.dtype()));
}

ResidualBlockImpl::ResidualBlockImpl(int in, int out, int groups) : in_channels(in), out_channels(out) {
  norm1 = register_module("norm1", group_norm(groups, in));
  adadm1 = register_module("adadm1", AdaDM());
  conv1 = register_module("conv1", conv3x3(in, out));
  norm2 = register_module("norm2", group_norm(groups, out));
  adadm2 = register_module("adadm2", AdaDM());
  conv2 = register_module("conv2", conv3x3(out, out));
  if (in != out) skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto h = conv1(F::silu(norm1(x) * adadm1->factor(x)));
  h = conv2(F::silu(norm2(h) * adadm2->factor(x)));
  return (skip.is_empty() ? x : skip(x)) + h;
}

FeedForwardImpl::FeedForwardImpl(int channels, int mult) {
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
  fc1 = register_module("fc1", linear(channels, mult * channels, true));
  fc2 = register_module("fc2", linear(mult * channels, channels, true));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) { return x + fc2(torch::gelu(fc1(norm(x)))); }

SelfAttentionBlockImpl::SelfAttentionBlockImpl(int channels, int groups) {
  norm = register_module("norm", group_norm(groups, channels));
  to_q = register_module("to_q", linear(channels, channels, false));
  to_k = register_module("to_k", linear(channels, channels, false));
  to_v = register_module("to_v", linear(channels, channels, false));
  proj = register_module("proj", linear(channels, channels, true));
  ff = register_module("ff", FeedForward(channels));
}

torch::Tensor SelfAttentionBlockImpl::forward(const torch::Tensor& x) {
  const auto sizes = x.sizes().vec();
  auto tokens = to_tokens(norm(x));
  auto h = x.flatten(2).transpose(1, 2) + proj(attention(to_q(tokens), to_k(tokens), to_v(tokens)));
  h = ff(h);
  return h.transpose(1, 2).reshape(sizes);
}

CrossAttentionBlockImpl::CrossAttentionBlockImpl(int channels, int groups, int context_dim) {
  norm = register_module("norm", group_norm(groups, channels));
  to_q = register_module("to_q", linear(channels, channels, false));
  to_k = register_module("to_k", linear(context_dim, channels, false));
  to_v = register_module("to_v", linear(context_dim, channels, false));
  proj = register_module("proj", linear(channels, channels, true));
  ff = register_module("ff", FeedForward(channels));
}

torch::Tensor CrossAttentionBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& ctx) {
  const auto sizes = x.sizes().vec();
  auto tokens = to_tokens(norm(x));
  auto h = x.flatten(2).transpose(1, 2) + proj(attention(to_q(tokens), to_k(ctx), to_v(ctx)));
  h = ff(h);
  return h.transpose(1, 2).reshape(sizes);
}

ContextEmbeddingImpl::ContextEmbeddingImpl(int n_entries, int dim) {
  weight = register_parameter("weight", torch::empty({n_entries, dim}).uniform_(-1.0, 1.0));
  bias = register_parameter("bias", torch::empty({n_entries, dim}).uniform_(-1.0, 1.0));
}

torch::Tensor ContextEmbeddingImpl::forward(const torch::Tensor& context) {
  if (context.dim() != 2 || context.size(1) != weight.size(0)) {
    throw ModelError("context: expected shape (B, " + std::to_string(weight.size(0)) + "), got " +
                     c10::str(context.sizes()));
  }
  return context.unsqueeze(-1) * weight.unsqueeze(0) + bias.unsqueeze(0);
}

AttentionUNetImpl::AttentionUNetImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int g = config_.n_groups;
  const int S = config_.stages();
  context_embed = register_module("context_embed", ContextEmbedding(config_.n_context(), config_.context_dim));
  conv_in = register_module("conv_in", conv3x3(config_.n_input_slices, config_.c));

  int ch = config_.c;
  for (int i = 0; i < S; ++i) {
    const int out = config_.stage_channels(i);
    Level level;
    for (int j = 0; j < config_.n_res; ++j) {
      const std::string tag = "enc" + std::to_string(i) + "_";
      level.res.push_back(register_module(tag + "res" + std::to_string(j), ResidualBlock(j == 0 ? ch : out, out, g)));
      if (config_.has_cross_attention(i)) {
        level.ca.push_back(
            register_module(tag + "ca" + std::to_string(j), CrossAttentionBlock(out, g, config_.context_dim)));
      }
    }
    encoder.push_back(std::move(level));
    down.push_back(register_module("down" + std::to_string(i), conv3x3(out, out, 2)));
    ch = out;
  }

  mid1 = register_module("mid_res0", ResidualBlock(ch, ch, g));
  mid_attn = register_module("mid_attn", SelfAttentionBlock(ch, g));
  mid2 = register_module("mid_res1", ResidualBlock(ch, ch, g));

  up.resize(S, nullptr);
  decoder.resize(S);
  for (int i = S - 1; i >= 0; --i) {
    const int out = config_.stage_channels(i);
    const std::string tag = "dec" + std::to_string(i) + "_";
    up[i] = register_module("up" + std::to_string(i), conv3x3(ch, out));
    for (int j = 0; j < config_.n_res; ++j) {
      decoder[i].res.push_back(
          register_module(tag + "res" + std::to_string(j), ResidualBlock(j == 0 ? 2 * out : out, out, g)));
      if (config_.has_cross_attention(i)) {
        decoder[i].ca.push_back(
            register_module(tag + "ca" + std::to_string(j), CrossAttentionBlock(out, g, config_.context_dim)));
      }
    }
    ch = out;
  }
  if (config_.use_final_norm) norm_out = register_module("norm_out", group_norm(g, ch));
  conv_out = register_module("conv_out", conv3x3(ch, 1));
}

torch::Tensor AttentionUNetImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
  if (x.dim() != 4 || x.size(1) != config_.n_input_slices) {
    throw ModelError("unet: expected input (B, " + std::to_string(config_.n_input_slices) + ", H, W), got " +
                     c10::str(x.sizes()));
  }
  const auto d = config_.spatial_divisor();
  if (x.size(2) % d != 0 || x.size(3) % d != 0) {
    throw ModelError("unet: spatial size " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                     " is not divisible by " + std::to_string(d));
  }
  if (context.dim() != 2 || context.size(0) != x.size(0)) {
    throw ModelError("unet: context batch does not match input batch");
  }
  auto tokens = context_embed(context);

  auto run_level = [&](Level& level, torch::Tensor h) {
    for (std::size_t j = 0; j < level.res.size(); ++j) {
      h = level.res[j](h);
      if (!level.ca.empty()) h = level.ca[j](h, tokens);
    }
    return h;
  };

  const int S = config_.stages();
  std::vector<torch::Tensor> skips(S);
  auto h = conv_in(x);
  for (int i = 0; i < S; ++i) {
    h = run_level(encoder[i], h);
    skips[i] = h;
    h = down[i](h);
  }
  h = mid2(mid_attn(mid1(h)));
  for (int i = S - 1; i >= 0; --i) {
    h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    h = torch::cat({up[i](h), skips[i]}, 1);
    h = run_level(decoder[i], h);
  }
  if (!norm_out.is_empty()) h = norm_out(h);
  return conv_out(F::silu(h));
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(DiscriminatorConfig config) : config_(config) {
  config_.validate();
  body = torch::nn::Sequential();
  int in = 1;
  for (int i = 0; i < config_.n_layers; ++i) {
    const int out = config_.c1 * std::min(1 << std::min(i, 30), config_.max_mult);
    body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1)));
    body->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(config_.leaky_slope)));
    body->push_back(group_norm(1, out));
    in = out;
  }
  body = register_module("body", body);
  head = register_module("head", conv3x3(in, 1));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 1) {
    throw ModelError("discriminator: expected input (B, 1, H, W), got " + c10::str(x.sizes()));
  }
  const std::int64_t d = std::int64_t{1} << config_.n_layers;
  if (x.size(2) % d != 0 || x.size(3) % d != 0) {
    throw ModelError("discriminator: spatial size " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                     " is not divisible by " + std::to_string(d));
  }
  return head(body->forward(x));
}

void init_weights(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& m : module.modules()) {
    if (auto* conv = m->as<torch::nn::Conv2d>()) {
      conv->weight.normal_(0.0, 0.02);
      if (conv->bias.defined()) conv->bias.zero_();
    }
  }
  for (auto& m : module.modules()) {
    if (auto* block = m->as<ResidualBlock>()) {
      block->conv2->weight.zero_();
      if (block->conv2->bias.defined()) block->conv2->bias.zero_();
    }
  }
}

}  // namespace sr7t::model
