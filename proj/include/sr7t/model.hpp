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

#ifndef SR7T_MODEL_HPP
#define SR7T_MODEL_HPP

#include <torch/torch.h>

#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

namespace sr7t::model {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Generator hyperparameters. Stage i has c * channel_mult[i] channels;
/// ca_stages holds 1-based stage numbers with cross-attention.
struct ModelConfig {
  int c = 256;
  std::vector<int> channel_mult = {1, 2, 2, 2};
  int n_groups = 64;
  int n_res = 3;
  std::vector<int> ca_stages = {3, 4};
  int n_input_slices = 3;
  int context_dim = 64;
  bool use_diagnosis = true;
  bool use_final_norm = false;

  int stages() const { return static_cast<int>(channel_mult.size()); }
  int stage_channels(int stage) const { return c * channel_mult.at(stage); }
  bool has_cross_attention(int stage) const;  // 0-based stage
  int n_context() const { return use_diagnosis ? 4 : 3; }
  /// Input height and width must be multiples of this.
  std::int64_t spatial_divisor() const { return std::int64_t{1} << stages(); }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  static ModelConfig from_json(const nlohmann::json& j, ModelConfig base);
};

struct DiscriminatorConfig {
  int n_layers = 5;
  int c1 = 256;
  double leaky_slope = 0.2;
  int max_mult = 8;  // channel growth c1 * 2^i is capped at c1 * max_mult

  void validate() const;
  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& j);
  static DiscriminatorConfig from_json(const nlohmann::json& j, DiscriminatorConfig base);
};

/// PE(2i, pos) = sin(pos / 10000^(2i/c)), PE(2i+1, pos) = cos(...), shape (c, d).
torch::Tensor positional_encoding(std::int64_t channels, std::int64_t positions,
                                  torch::Dtype dtype = torch::kFloat32);

/// softmax(Q K^T / sqrt(d_k)) V over the last two dimensions.
/// Q: (..., n, d_k), K: (..., m, d_k), V: (..., m, d_v).
torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v);

/// Multiplies normalized features by g(sigma(x)) = exp(slope * log sigma(x) + bias),
/// with sigma(x) the per-sample standard deviation of the block input over (C, H, W).
struct AdaDMImpl : torch::nn::Module {
  AdaDMImpl();
  torch::Tensor factor(const torch::Tensor& block_input) const;  // (B, 1, 1, 1)
  torch::Tensor slope;
  torch::Tensor bias;
};
TORCH_MODULE(AdaDM);

/// GN -> AdaDM -> Swish -> 3x3 conv, twice, plus a skip (1x1 conv when the
/// channel count changes).
struct ResidualBlockImpl : torch::nn::Module {
  ResidualBlockImpl(int in_channels, int out_channels, int groups);
  torch::Tensor forward(const torch::Tensor& x);
  bool has_skip_projection() const { return !skip.is_empty(); }

  int in_channels;
  int out_channels;
  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  AdaDM adadm1{nullptr}, adadm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResidualBlock);

struct FeedForwardImpl : torch::nn::Module {
  explicit FeedForwardImpl(int channels, int mult = 4);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(FeedForward);

/// Pixel self-attention with positional encoding and a feed-forward block.
struct SelfAttentionBlockImpl : torch::nn::Module {
  SelfAttentionBlockImpl(int channels, int groups);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, proj{nullptr};
  FeedForward ff{nullptr};
};
TORCH_MODULE(SelfAttentionBlock);

/// Pixel queries attend over context tokens (keys and values).
struct CrossAttentionBlockImpl : torch::nn::Module {
  CrossAttentionBlockImpl(int channels, int groups, int context_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context_tokens);
  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, proj{nullptr};
  FeedForward ff{nullptr};
};
TORCH_MODULE(CrossAttentionBlock);

/// Each scalar context entry i becomes a token value_i * weight[i] + bias[i].
struct ContextEmbeddingImpl : torch::nn::Module {
  ContextEmbeddingImpl(int n_entries, int dim);
  torch::Tensor forward(const torch::Tensor& context);  // (B, n) -> (B, n, dim)
  torch::Tensor weight, bias;
};
TORCH_MODULE(ContextEmbedding);

/// Conditional attention U-Net: (B, n_input_slices, H, W) + (B, n_context) -> (B, 1, H, W).
struct AttentionUNetImpl : torch::nn::Module {
  explicit AttentionUNetImpl(ModelConfig config);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);
  const ModelConfig& config() const { return config_; }

 private:
  struct Level {
    std::vector<ResidualBlock> res;
    std::vector<CrossAttentionBlock> ca;  // empty when the stage has none
  };
  ModelConfig config_;
  ContextEmbedding context_embed{nullptr};
  torch::nn::Conv2d conv_in{nullptr};
  std::vector<Level> encoder;
  std::vector<torch::nn::Conv2d> down;
  ResidualBlock mid1{nullptr}, mid2{nullptr};
  SelfAttentionBlock mid_attn{nullptr};
  std::vector<torch::nn::Conv2d> up;
  std::vector<Level> decoder;
  torch::nn::GroupNorm norm_out{nullptr};
  torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(AttentionUNet);

/// Patch critic: n_layers x (4x4 stride-2 conv -> LeakyReLU -> LayerNorm),
/// then a stride-1 conv giving one raw score per patch.
struct PatchDiscriminatorImpl : torch::nn::Module {
  explicit PatchDiscriminatorImpl(DiscriminatorConfig config);
  torch::Tensor forward(const torch::Tensor& x);
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  torch::nn::Sequential body{nullptr};
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// normal(0, 0.02) conv weights and zero biases; the second conv of every
/// residual block starts at zero.
void init_weights(torch::nn::Module& module);

}  // namespace sr7t::model

#endif  // SR7T_MODEL_HPP
