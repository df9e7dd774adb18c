// Copyright 2026 The ZNet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "znet/autograd.hpp"
#include "znet/error.hpp"

namespace znet::models {

enum class Family { unet, vnet };

/// full3d: isotropic k x k x k convolutions.
/// z_v1:   every k x k x k conv becomes k x k x 1 followed by 1 x 1 x D.
/// z_v2:   every k x k x k conv becomes k x k x 1, plus one 1 x 1 x D conv
///         right before each down-sampling and up-sampling layer.
enum class Mode { full3d, z_v1, z_v2 };

struct ArchConfig {
  Family family = Family::unet;
  Mode mode = Mode::full3d;
  std::size_t levels = 3;
  std::size_t base_channels = 8;
  std::size_t in_channels = 1;
  std::size_t out_classes = 2;

  void validate() const {
    if (levels < 1) throw UsageError("levels must be at least 1");
    if (base_channels < 1) throw UsageError("base_channels must be at least 1");
    if (in_channels < 1) throw UsageError("in_channels must be at least 1");
    if (out_classes != 2) throw UsageError("only 2-class segmentation is supported");
  }
  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
};

inline const std::vector<std::string>& arch_names() {
  static const std::vector<std::string> names{"unet", "vnet", "zunet-v1", "zunet-v2", "zvnet-v1", "zvnet-v2"};
  return names;
}

inline ArchConfig parse_arch(const std::string& name, std::size_t levels = 3, std::size_t base_channels = 8) {
  ArchConfig cfg;
  cfg.levels = levels;
  cfg.base_channels = base_channels;
  if (name == "unet") {
    cfg.family = Family::unet;
    cfg.mode = Mode::full3d;
  } else if (name == "vnet") {
    cfg.family = Family::vnet;
    cfg.mode = Mode::full3d;
  } else if (name == "zunet-v1" || name == "zunet-v2") {
    cfg.family = Family::unet;
    cfg.mode = name.back() == '1' ? Mode::z_v1 : Mode::z_v2;
  } else if (name == "zvnet-v1" || name == "zvnet-v2") {
    cfg.family = Family::vnet;
    cfg.mode = name.back() == '1' ? Mode::z_v1 : Mode::z_v2;
  } else {
    throw UsageError("unknown architecture '" + name + "'");
  }
  return cfg;
}

inline std::string arch_name(const ArchConfig& cfg) {
  const bool u = cfg.family == Family::unet;
  switch (cfg.mode) {
    case Mode::full3d: return u ? "unet" : "vnet";
    case Mode::z_v1: return u ? "zunet-v1" : "zvnet-v1";
    case Mode::z_v2: return u ? "zunet-v2" : "zvnet-v2";
  }
  return "?";
}

namespace detail {

class Builder {
 public:
  Builder(Mode mode, std::size_t kernel) : mode_(mode), k_(kernel) {}

  std::vector<LayerSpec> layers;

  const std::string& last() const { return layers.back().id; }

  /// conv -> instance norm -> ReLU, decomposed according to the mode.
  /// `from` empty means the previous layer.
  std::string block(const std::string& name, std::size_t c_out, const std::string& from = {}) {
    if (mode_ == Mode::full3d) {
      push(LayerSpec::conv(name, {k_, k_, k_}, c_out), from);
      norm_relu(name);
      return last();
    }
    push(LayerSpec::conv(name + ".xy", {k_, k_, 1}, c_out), from);
    norm_relu(name + ".xy");
    if (mode_ == Mode::z_v1) {
      push(LayerSpec::conv_z(name + ".z", c_out));
      norm_relu(name + ".z");
    }
    return last();
  }

  /// The single along-depth conv that mode 2 places before a resampling layer.
  void depth_mix(const std::string& name, std::size_t channels) {
    if (mode_ != Mode::z_v2) return;
    push(LayerSpec::conv_z(name, channels));
    norm_relu(name);
  }

  void norm_relu(const std::string& name) {
    layers.push_back(LayerSpec::simple(name + ".norm", LayerKind::instance_norm));
    layers.push_back(LayerSpec::simple(name + ".relu", LayerKind::relu));
  }

  void push(LayerSpec s, const std::string& from = {}) {
    if (!from.empty()) s.inputs = {from};
    layers.push_back(std::move(s));
  }

 private:
  Mode mode_;
  std::size_t k_;
};

}  // namespace detail

/// Encoder: per level two conv blocks and a 2x2x2 max-pool. Bottleneck: two
/// blocks. Decoder: 2x2x2 stride-2 transposed conv, concat with the encoder
/// features, two blocks. Finally a 1x1x1 classifier to two logits.
inline std::vector<LayerSpec> build_unet(const ArchConfig& cfg) {
  cfg.validate();
  if (cfg.family != Family::unet) throw UsageError("build_unet needs a unet config");
  detail::Builder b(cfg.mode, 3);
  std::vector<std::string> skips;
  for (std::size_t lvl = 0; lvl < cfg.levels; ++lvl) {
    const std::size_t ch = cfg.channels_at(lvl);
    const std::string p = "enc" + std::to_string(lvl);
    b.block(p + ".c0", ch, lvl == 0 ? kGraphInput : std::string{});
    b.block(p + ".c1", ch);
    b.depth_mix(p + ".zmix", ch);
    skips.push_back(b.last());
    b.push(LayerSpec::simple(p + ".pool", LayerKind::max_pool));
  }
  const std::size_t deep = cfg.channels_at(cfg.levels);
  b.block("mid.c0", deep);
  b.block("mid.c1", deep);
  for (std::size_t lvl = cfg.levels; lvl-- > 0;) {
    const std::size_t ch = cfg.channels_at(lvl);
    const std::string p = "dec" + std::to_string(lvl);
    b.depth_mix(p + ".zmix", cfg.channels_at(lvl + 1));
    b.push(LayerSpec::upconv(p + ".up", {2, 2, 2}, 2, ch));
    b.norm_relu(p + ".up");
    b.layers.push_back(LayerSpec::simple(p + ".cat", LayerKind::concat, {skips[lvl], b.last()}));
    b.block(p + ".c0", ch);
    b.block(p + ".c1", ch);
  }
  b.push(LayerSpec::conv("classifier", {1, 1, 1}, cfg.out_classes));
  return std::move(b.layers);
}

/// V-Net style: encoder stage i (1-based) has min(i,3) 5x5x5 blocks plus a
/// residual add from the stage input (through a 1x1x1 projection when the
/// channel count changes), then a 2x2x2 stride-2 down-sampling conv. The
/// bottleneck has three blocks; the decoder mirrors the encoder with
/// transposed convs, concatenated skips and a residual from the up-sampled
/// features.
inline std::vector<LayerSpec> build_vnet(const ArchConfig& cfg) {
  cfg.validate();
  if (cfg.family != Family::vnet) throw UsageError("build_vnet needs a vnet config");
  detail::Builder b(cfg.mode, 5);
  std::vector<std::string> skips;
  std::string stage_in = kGraphInput;
  std::size_t stage_in_channels = cfg.in_channels;

  auto residual = [&](const std::string& p, const std::string& from, std::size_t from_channels, std::size_t ch) {
    std::string src = from;
    const std::string body = b.last();
    if (from_channels != ch) {
      b.push(LayerSpec::conv(p + ".proj", {1, 1, 1}, ch), from);
      src = b.last();
    }
    b.layers.push_back(LayerSpec::simple(p + ".res", LayerKind::add, {body, src}));
  };

  for (std::size_t stage = 1; stage <= cfg.levels; ++stage) {
    const std::size_t ch = cfg.channels_at(stage - 1);
    const std::string p = "enc" + std::to_string(stage - 1);
    const std::size_t convs = std::min<std::size_t>(stage, 3);
    for (std::size_t k = 0; k < convs; ++k) b.block(p + ".c" + std::to_string(k), ch, k == 0 ? stage_in : "");
    residual(p, stage_in, stage_in_channels, ch);
    skips.push_back(b.last());
    b.depth_mix(p + ".zmix", ch);
    const std::size_t next = cfg.channels_at(stage);
    b.push(LayerSpec::conv(p + ".down", {2, 2, 2}, next, 2, ops::Padding::valid));
    b.norm_relu(p + ".down");
    stage_in = b.last();
    stage_in_channels = next;
  }
  const std::size_t deep = cfg.channels_at(cfg.levels);
  for (std::size_t k = 0; k < 3; ++k) b.block("mid.c" + std::to_string(k), deep);
  residual("mid", stage_in, stage_in_channels, deep);

  for (std::size_t stage = cfg.levels; stage >= 1; --stage) {
    const std::size_t ch = cfg.channels_at(stage - 1);
    const std::string p = "dec" + std::to_string(stage - 1);
    b.depth_mix(p + ".zmix", cfg.channels_at(stage));
    b.push(LayerSpec::upconv(p + ".up", {2, 2, 2}, 2, ch));
    b.norm_relu(p + ".up");
    const std::string up = b.last();
    b.layers.push_back(LayerSpec::simple(p + ".cat", LayerKind::concat, {skips[stage - 1], up}));
    const std::size_t convs = std::min<std::size_t>(stage, 3);
    for (std::size_t k = 0; k < convs; ++k) b.block(p + ".c" + std::to_string(k), ch);
    residual(p, up, ch, ch);
  }
  b.push(LayerSpec::conv("classifier", {1, 1, 1}, cfg.out_classes));
  return std::move(b.layers);
}

inline std::vector<LayerSpec> build(const ArchConfig& cfg) {
  return cfg.family == Family::unet ? build_unet(cfg) : build_vnet(cfg);
}

inline std::size_t node_param_count(const GraphNode& n) {
  switch (n.layer.kind) {
    case LayerKind::conv:
    case LayerKind::conv_transpose: return n.conv.param_count();
    case LayerKind::instance_norm: return 2 * n.norm_channels;
    default: return 0;
  }
}

/// Sum over layers of kh*kw*kd*c_in*c_out + c_out, plus 2c per norm layer,
/// with FULL_DEPTH kernels resolved against `input_shape`.
inline std::size_t count_params(const std::vector<LayerSpec>& spec, const Shape5& input_shape) {
  const ModelGraph g = compile(spec, input_shape);
  std::size_t total = 0;
  for (const auto& n : g.nodes) total += node_param_count(n);
  return total;
}

/// Number of convolution layers (excluding transposed convs) in a spec.
inline std::size_t conv_layer_count(const std::vector<LayerSpec>& spec) {
  return static_cast<std::size_t>(
      std::count_if(spec.begin(), spec.end(), [](const LayerSpec& s) { return s.kind == LayerKind::conv; }));
}

inline std::string kernel_str(const GraphNode& n) {
  if (n.layer.kind != LayerKind::conv && n.layer.kind != LayerKind::conv_transpose) return "-";
  std::string s = std::to_string(n.conv.kernel.h) + "x" + std::to_string(n.conv.kernel.w) + "x" +
                  std::to_string(n.conv.kernel.d);
  if (n.conv.stride != 1) s += "/" + std::to_string(n.conv.stride);
  return s;
}

/// Per-layer table (id, kind, kernel, input shape, output shape, params)
/// followed by a totals row.
inline std::string summarize(const std::vector<LayerSpec>& spec, const Shape5& input_shape) {
  const ModelGraph g = compile(spec, input_shape);
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-20s %-8s %-9s %-18s %-18s %10s\n", "layer", "kind", "kernel", "in", "out",
                "params");
  os << line;
  std::size_t total = 0;
  for (const auto& n : g.nodes) {
    const Shape5 in = n.inputs[0] < 0 ? g.input_shape : g.nodes[static_cast<std::size_t>(n.inputs[0])].out_shape;
    const std::size_t params = node_param_count(n);
    total += params;
    std::snprintf(line, sizeof line, "%-20s %-8s %-9s %-18s %-18s %10zu\n", n.layer.id.c_str(),
                  layer_kind_name(n.layer.kind), kernel_str(n).c_str(), in.str().c_str(), n.out_shape.str().c_str(),
                  params);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-20s %-8s %-9s %-18s %-18s %10zu\n", "total", "", "", "", "", total);
  os << line;
  return os.str();
}

}  // namespace znet::models
