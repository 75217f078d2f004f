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

#include "sr7t/inference.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <thread>

#include "sr7t/nifti.hpp"

namespace sr7t::inference {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_input(const model::AttentionUNet& net, const Volume& v) {
  v.validate();
  const auto& cfg = net->config();
  const auto d = cfg.spatial_divisor();
  if (v.dims.nx % d != 0 || v.dims.ny % d != 0) {
    throw InferenceError("in-plane shape " + std::to_string(v.dims.nx) + "x" + std::to_string(v.dims.ny) +
                         " is not divisible by " + std::to_string(d) + "; crop the volume first");
  }
  const auto [lo, hi] = std::minmax_element(v.data.begin(), v.data.end());
  if (lo != v.data.end() && (*lo < -1e-6f || *hi > 1.0f + 1e-6f)) {
    throw InferenceError("input intensities span [" + std::to_string(*lo) + ", " + std::to_string(*hi) +
                         "]; normalize to [0, 1] first");
  }
}

}  // namespace

Volume synthesize_volume(model::AttentionUNet& net, const Volume& input, const SubjectMetadata& meta,
                         int batch_slices) {
  if (batch_slices < 1) throw InferenceError("batch_slices must be at least 1");
  check_input(net, input);
  torch::NoGradGuard no_grad;
  net->eval();
  const auto& cfg = net->config();
  const auto H = input.dims.nx, W = input.dims.ny, plane = H * W;

  Volume out(input.dims, input.spacing);
  out.affine = input.affine;
  out.mask = input.mask;
  out.excluded_axial_slices = input.excluded_axial_slices;
  std::fill(out.data.begin(), out.data.end(), 0.0f);

  std::vector<std::int64_t> slices;
  for (std::int64_t z = 0; z < input.dims.nz; ++z) {
    if (slice_has_mask(input, z)) slices.push_back(z);
  }
  if (slices.empty()) return out;
  const auto [top, bot] = brain_extent(input);

  for (std::size_t start = 0; start < slices.size(); start += static_cast<std::size_t>(batch_slices)) {
    const auto end = std::min(slices.size(), start + static_cast<std::size_t>(batch_slices));
    const auto B = static_cast<std::int64_t>(end - start);
    auto x = torch::empty({B, cfg.n_input_slices, H, W}, torch::kFloat32);
    auto ctx = torch::empty({B, cfg.n_context()}, torch::kFloat32);
    for (std::int64_t b = 0; b < B; ++b) {
      const auto z = slices[start + b];
      const auto stack = slice_stack(input, z, top, bot, cfg.n_input_slices);
      std::copy(stack.begin(), stack.end(), x[b].data_ptr<float>());
      const auto c = make_context(meta, z, top, bot, cfg.use_diagnosis).values();
      std::copy(c.begin(), c.end(), ctx[b].data_ptr<float>());
    }
    auto y = net->forward(x, ctx).clamp(0.0, 1.0).contiguous();
    const float* p = y.data_ptr<float>();
    for (std::int64_t b = 0; b < B; ++b) {
      const auto z = slices[start + b];
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) out.at(i, j, z) = p[b * plane + i * W + j];
    }
  }
  return out;
}

std::size_t BatchReport::failures() const {
  return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return !e.ok; }));
}

nlohmann::json BatchReport::to_json() const {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json j = {{"subject_id", e.subject_id}, {"input", e.input},     {"output", e.output},
                        {"ok", e.ok},                 {"seconds", e.seconds}};
    if (!e.ok) j["error"] = e.error;
    items.push_back(j);
  }
  return {{"entries", items},
          {"n_entries", entries.size()},
          {"n_failed", failures()},
          {"wall_seconds", wall_seconds}};
}

BatchReport batch_synthesize(model::AttentionUNet& net, const std::vector<InferenceEntry>& entries, int jobs,
                             int batch_slices) {
  const auto t0 = std::chrono::steady_clock::now();
  BatchReport report;
  report.entries.resize(entries.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < entries.size(); i = next++) {
      const auto& e = entries[i];
      auto& r = report.entries[i];
      r.subject_id = e.meta.subject_id;
      r.input = e.input.string();
      r.output = e.output.string();
      const auto t = std::chrono::steady_clock::now();
      try {
        auto volume = load_volume(e.input, e.mask);
        auto result = synthesize_volume(net, volume, e.meta, batch_slices);
        if (e.output.has_parent_path()) std::filesystem::create_directories(e.output.parent_path());
        nifti::write(e.output, result);
        r.ok = true;
      } catch (const std::exception& ex) {
        r.ok = false;
        r.error = ex.what();
      }
      r.seconds = seconds_since(t);
    }
  };

  const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(entries.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  report.wall_seconds = seconds_since(t0);
  return report;
}

}  // namespace sr7t::inference
