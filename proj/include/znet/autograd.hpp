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

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "znet/error.hpp"
#include "znet/ops.hpp"
#include "znet/tensor.hpp"

namespace znet {

enum class LayerKind { conv, conv_transpose, instance_norm, relu, max_pool, concat, add };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::conv_transpose: return "upconv";
    case LayerKind::instance_norm: return "inorm";
    case LayerKind::relu: return "relu";
    case LayerKind::max_pool: return "maxpool";
    case LayerKind::concat: return "concat";
    case LayerKind::add: return "add";
  }
  return "?";
}

/// Name that refers to the graph input in LayerSpec::inputs.
inline const std::string kGraphInput = "input";

/// One declarative layer. An empty `inputs` list means "the previous layer"
/// (or the graph input for the first layer).
struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::conv;
  std::vector<std::string> inputs;
  Extent3 kernel{1, 1, 1};
  /// Depth extent resolves to the incoming feature depth at compile time.
  bool full_depth = false;
  std::size_t stride = 1;
  std::size_t out_channels = 0;
  ops::Padding padding = ops::Padding::same;

  static LayerSpec conv(std::string id, Extent3 k, std::size_t c_out, std::size_t stride = 1,
                        ops::Padding padding = ops::Padding::same) {
    LayerSpec s;
    s.id = std::move(id);
    s.kind = LayerKind::conv;
    s.kernel = k;
    s.out_channels = c_out;
    s.stride = stride;
    s.padding = padding;
    return s;
  }
  static LayerSpec conv_z(std::string id, std::size_t c_out) {
    LayerSpec s = conv(std::move(id), {1, 1, 1}, c_out);
    s.full_depth = true;
    return s;
  }
  static LayerSpec upconv(std::string id, Extent3 k, std::size_t stride, std::size_t c_out) {
    LayerSpec s;
    s.id = std::move(id);
    s.kind = LayerKind::conv_transpose;
    s.kernel = k;
    s.stride = stride;
    s.out_channels = c_out;
    s.padding = ops::Padding::valid;
    return s;
  }
  static LayerSpec simple(std::string id, LayerKind kind, std::vector<std::string> inputs = {}) {
    LayerSpec s;
    s.id = std::move(id);
    s.kind = kind;
    s.inputs = std::move(inputs);
    return s;
  }
};

// ---------------------------------------------------------------------------
// Compiled graph

struct GraphNode {
  LayerSpec layer;
  /// Producer node indices; -1 is the graph input.
  std::vector<int> inputs;
  Shape5 out_shape;
  /// Resolved geometry for conv / conv_transpose nodes.
  ops::ConvSpec conv;
  /// Channel count for instance_norm nodes.
  std::size_t norm_channels = 0;
  /// Index into ParamStore::entries, -1 for parameter-free layers.
  int param_index = -1;
};

struct ModelGraph {
  std::vector<GraphNode> nodes;
  Shape5 input_shape;
  std::uint64_t uid = 0;

  const GraphNode& output() const { return nodes.back(); }
  std::size_t param_slots() const {
    std::size_t k = 0;
    for (const auto& n : nodes) k += n.param_index >= 0 ? 1 : 0;
    return k;
  }
};

namespace detail {
inline std::uint64_t next_graph_uid() {
  static std::atomic<std::uint64_t> counter{1};
  return counter++;
}
}  // namespace detail

/// Resolves wiring and every intermediate shape. Throws ShapeError for
/// shape underflow or mismatched fan-ins, UsageError for malformed specs.
inline ModelGraph compile(const std::vector<LayerSpec>& spec, const Shape5& input_shape) {
  if (spec.empty()) throw UsageError("empty layer list");
  input_shape.count();
  ModelGraph g;
  g.input_shape = input_shape;
  g.uid = detail::next_graph_uid();
  std::unordered_map<std::string, int> by_id;
  int params = 0;
  auto shape_of = [&](int idx) { return idx < 0 ? input_shape : g.nodes[static_cast<std::size_t>(idx)].out_shape; };

  for (std::size_t i = 0; i < spec.size(); ++i) {
    const LayerSpec& ls = spec[i];
    if (ls.id.empty() || ls.id == kGraphInput) throw UsageError("layer " + std::to_string(i) + " has an invalid id");
    if (by_id.count(ls.id)) throw UsageError("duplicate layer id '" + ls.id + "'");
    GraphNode node;
    node.layer = ls;
    if (ls.inputs.empty()) {
      node.inputs.push_back(static_cast<int>(i) - 1);
    } else {
      for (const std::string& ref : ls.inputs) {
        if (ref == kGraphInput) {
          node.inputs.push_back(-1);
          continue;
        }
        auto it = by_id.find(ref);
        if (it == by_id.end()) throw UsageError("layer '" + ls.id + "' references unknown layer '" + ref + "'");
        node.inputs.push_back(it->second);
      }
    }
    const std::size_t arity = (ls.kind == LayerKind::concat || ls.kind == LayerKind::add) ? 2 : 1;
    if (node.inputs.size() != arity)
      throw UsageError("layer '" + ls.id + "' expects " + std::to_string(arity) + " inputs");
    const Shape5 in = shape_of(node.inputs[0]);
    try {
      switch (ls.kind) {
        case LayerKind::conv:
        case LayerKind::conv_transpose: {
          if (ls.out_channels == 0) throw UsageError("layer '" + ls.id + "' has no output channels");
          ops::ConvSpec cs;
          cs.kernel = ls.kernel;
          if (ls.full_depth) cs.kernel.d = in.d;
          cs.stride = ls.stride;
          cs.c_in = in.c;
          cs.c_out = ls.out_channels;
          cs.padding = ls.padding;
          cs.transposed = ls.kind == LayerKind::conv_transpose;
          if (cs.kernel.h == 0 || cs.kernel.w == 0 || cs.kernel.d == 0 || cs.stride == 0)
            throw UsageError("layer '" + ls.id + "' has a zero kernel extent or stride");
          if (!cs.transposed && cs.padding == ops::Padding::same && cs.stride == 1) {
            same_padding(cs.kernel.h, in.h);
            same_padding(cs.kernel.w, in.w);
            same_padding(cs.kernel.d, in.d);
          }
          node.conv = cs;
          node.out_shape = ops::conv_output_shape(in, cs);
          node.param_index = params++;
          break;
        }
        case LayerKind::instance_norm:
          node.norm_channels = in.c;
          node.out_shape = in;
          node.param_index = params++;
          break;
        case LayerKind::relu:
          node.out_shape = in;
          break;
        case LayerKind::max_pool: {
          if (in.h < 2 || in.w < 2 || in.d < 2)
            throw ShapeError("down-sampling " + in.str() + " would produce an empty extent");
          node.out_shape = Shape5{in.n, in.h / 2, in.w / 2, in.d / 2, in.c};
          break;
        }
        case LayerKind::concat: {
          const Shape5 other = shape_of(node.inputs[1]);
          if (!in.same_spatial(other)) throw ShapeError("skip connection joins " + in.str() + " and " + other.str());
          node.out_shape = Shape5{in.n, in.h, in.w, in.d, in.c + other.c};
          break;
        }
        case LayerKind::add: {
          const Shape5 other = shape_of(node.inputs[1]);
          if (in != other) throw ShapeError("residual add joins " + in.str() + " and " + other.str());
          node.out_shape = in;
          break;
        }
      }
    } catch (const ShapeError& e) {
      throw ShapeError("layer '" + ls.id + "': " + e.what());
    }
    by_id[ls.id] = static_cast<int>(i);
    g.nodes.push_back(std::move(node));
  }
  if (g.output().out_shape.c != 2)
    throw UsageError("the output layer must produce 2-channel logits, got " + g.output().out_shape.str());
  return g;
}

// ---------------------------------------------------------------------------
// Parameters

struct ParamEntry {
  std::string layer_id;
  std::variant<ops::ConvParams, ops::InstanceNormParams> params;
};

/// View of one trainable tensor together with its gradient buffer.
struct ParamTensor {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

struct ParamStore {
  std::vector<ParamEntry> entries;
  std::uint64_t seed = 0;
  /// Bumped whenever values change; tapes recorded before a bump are stale.
  std::uint64_t version = 0;

  /// Registry order: entries in graph order; weight then bias, gamma then beta.
  std::vector<ParamTensor> tensors() {
    std::vector<ParamTensor> out;
    for (auto& e : entries) {
      if (auto* c = std::get_if<ops::ConvParams>(&e.params)) {
        out.push_back({e.layer_id + ".weight", &c->weights, &c->weight_grad});
        out.push_back({e.layer_id + ".bias", &c->bias, &c->bias_grad});
      } else {
        auto& nrm = std::get<ops::InstanceNormParams>(e.params);
        out.push_back({e.layer_id + ".gamma", &nrm.gamma, &nrm.gamma_grad});
        out.push_back({e.layer_id + ".beta", &nrm.beta, &nrm.beta_grad});
      }
    }
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& e : entries) {
      if (const auto* c = std::get_if<ops::ConvParams>(&e.params))
        total += c->weights.size() + c->bias.size();
      else {
        const auto& nrm = std::get<ops::InstanceNormParams>(e.params);
        total += nrm.gamma.size() + nrm.beta.size();
      }
    }
    return total;
  }

  void zero_grad() {
    for (auto& t : tensors()) t.grad->fill(0.0);
  }
};

inline constexpr double kInitSigma = 0.1;
inline constexpr double kInitBias = 0.1;

/// Weights ~ N(0, 0.1^2) resampled until |w| <= 0.2; biases 0.1; gamma 1,
/// beta 0. The same graph and seed always produce the same values.
inline ParamStore init_params(const ModelGraph& g, std::uint64_t seed) {
  ParamStore store;
  store.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitSigma);
  for (const GraphNode& n : g.nodes) {
    if (n.param_index < 0) continue;
    if (n.layer.kind == LayerKind::instance_norm) {
      store.entries.push_back({n.layer.id, ops::InstanceNormParams::identity(n.norm_channels)});
      continue;
    }
    ops::ConvParams p = ops::ConvParams::zeros(n.conv);
    for (double& w : p.weights.values()) {
      double v = normal(rng);
      while (std::abs(v) > 2.0 * kInitSigma) v = normal(rng);
      w = v;
    }
    p.bias.fill(kInitBias);
    store.entries.push_back({n.layer.id, std::move(p)});
  }
  return store;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct Tape {
  std::uint64_t graph_uid = 0;
  std::uint64_t params_version = 0;
  Tensor input;
  std::vector<Tensor> outputs;
  std::vector<std::variant<std::monostate, ops::PoolResult, ops::InstanceNormSaved>> saved;
};

struct ForwardResult {
  Tensor logits;
  Tape tape;
};

/// Runtime shape of every node for an input batch of `n` items.
inline Shape5 with_batch(Shape5 s, std::size_t n) {
  s.n = n;
  return s;
}

namespace detail {

inline void check_input(const ModelGraph& g, const Tensor& x) {
  const Shape5& s = x.shape();
  const Shape5& e = g.input_shape;
  if (s.h != e.h || s.w != e.w || s.d != e.d || s.c != e.c)
    throw ShapeError("input " + s.str() + " does not match compiled input " + e.str());
}

inline void check_params(const ModelGraph& g, const ParamStore& p) {
  if (p.entries.size() != g.param_slots()) throw UsageError("parameter store does not belong to this graph");
}

}  // namespace detail

/// Runs the graph. Any batch size is accepted; h, w, d and c must match the
/// compiled input shape.
inline ForwardResult forward(const ModelGraph& g, const ParamStore& params, const Tensor& x) {
  detail::check_input(g, x);
  detail::check_params(g, params);
  require_finite(x, "network input");
  ForwardResult r;
  r.tape.graph_uid = g.uid;
  r.tape.params_version = params.version;
  r.tape.input = x;
  r.tape.outputs.reserve(g.nodes.size());
  r.tape.saved.resize(g.nodes.size());
  auto in_of = [&](const GraphNode& node, std::size_t k) -> const Tensor& {
    const int idx = node.inputs[k];
    return idx < 0 ? r.tape.input : r.tape.outputs[static_cast<std::size_t>(idx)];
  };
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const GraphNode& node = g.nodes[i];
    const Tensor& a = in_of(node, 0);
    Tensor out;
    switch (node.layer.kind) {
      case LayerKind::conv:
        out = ops::conv3d_fwd(a, node.conv, std::get<ops::ConvParams>(params.entries[node.param_index].params));
        break;
      case LayerKind::conv_transpose:
        out = ops::conv_transpose3d_fwd(a, node.conv,
                                        std::get<ops::ConvParams>(params.entries[node.param_index].params));
        break;
      case LayerKind::instance_norm: {
        auto res =
            ops::instance_norm_fwd(a, std::get<ops::InstanceNormParams>(params.entries[node.param_index].params));
        out = std::move(res.out);
        r.tape.saved[i] = std::move(res.saved);
        break;
      }
      case LayerKind::relu: out = ops::relu_fwd(a); break;
      case LayerKind::max_pool: {
        auto res = ops::maxpool3d_fwd(a, 2, 2);
        out = res.out;
        r.tape.saved[i] = std::move(res);
        break;
      }
      case LayerKind::concat: out = ops::concat_channels_fwd(a, in_of(node, 1)); break;
      case LayerKind::add: out = elementwise(a, in_of(node, 1), Elementwise::add); break;
    }
    require_finite(out, "layer '" + node.layer.id + "'");
    r.tape.outputs.push_back(std::move(out));
  }
  r.logits = r.tape.outputs.back();
  return r;
}

/// Reverse pass. Overwrites every parameter gradient in `params` and returns
/// the gradient with respect to the network input. Activations consumed by
/// several layers receive the sum of their consumers' contributions.
inline Tensor backward(const ModelGraph& g, ParamStore& params, const Tape& tape, const Tensor& loss_grad) {
  if (tape.graph_uid != g.uid || tape.params_version != params.version ||
      tape.outputs.size() != g.nodes.size())
    throw UsageError("stale tape: it was not recorded with this graph and parameter version");
  detail::check_params(g, params);
  require_same_shape(loss_grad, tape.outputs.back(), "loss gradient");
  params.zero_grad();
  std::vector<std::optional<Tensor>> grads(g.nodes.size());
  Tensor input_grad(tape.input.shape());
  grads.back() = loss_grad;

  auto accumulate = [&](int idx, Tensor&& gpart) {
    if (idx < 0) {
      for (std::size_t k = 0; k < input_grad.size(); ++k) input_grad[k] += gpart[k];
      return;
    }
    auto& slot = grads[static_cast<std::size_t>(idx)];
    if (!slot) {
      slot = std::move(gpart);
      return;
    }
    for (std::size_t k = 0; k < slot->size(); ++k) (*slot)[k] += gpart[k];
  };
  auto in_of = [&](const GraphNode& node, std::size_t k) -> const Tensor& {
    const int idx = node.inputs[k];
    return idx < 0 ? tape.input : tape.outputs[static_cast<std::size_t>(idx)];
  };

  for (std::size_t ii = g.nodes.size(); ii-- > 0;) {
    if (!grads[ii]) continue;
    const GraphNode& node = g.nodes[ii];
    const Tensor go = std::move(*grads[ii]);
    grads[ii].reset();
    const Tensor& a = in_of(node, 0);
    switch (node.layer.kind) {
      case LayerKind::conv:
        accumulate(node.inputs[0], ops::conv3d_bwd(a, node.conv,
                                                   std::get<ops::ConvParams>(params.entries[node.param_index].params),
                                                   go));
        break;
      case LayerKind::conv_transpose:
        accumulate(node.inputs[0],
                   ops::conv_transpose3d_bwd(a, node.conv,
                                             std::get<ops::ConvParams>(params.entries[node.param_index].params), go));
        break;
      case LayerKind::instance_norm:
        accumulate(node.inputs[0],
                   ops::instance_norm_bwd(std::get<ops::InstanceNormSaved>(tape.saved[ii]),
                                          std::get<ops::InstanceNormParams>(params.entries[node.param_index].params),
                                          go));
        break;
      case LayerKind::relu: accumulate(node.inputs[0], ops::relu_bwd(a, go)); break;
      case LayerKind::max_pool:
        accumulate(node.inputs[0], ops::maxpool3d_bwd(std::get<ops::PoolResult>(tape.saved[ii]), go));
        break;
      case LayerKind::concat: {
        auto parts = ops::concat_channels_bwd(a.shape(), in_of(node, 1).shape(), go);
        accumulate(node.inputs[0], std::move(parts.a));
        accumulate(node.inputs[1], std::move(parts.b));
        break;
      }
      case LayerKind::add:
        accumulate(node.inputs[0], Tensor(go));
        accumulate(node.inputs[1], Tensor(go));
        break;
    }
  }
  return input_grad;
}

// ---------------------------------------------------------------------------
// Checkpoints: "ZNET1", then per parameter tensor in registry order a u64
// length-prefixed UTF-8 name, five u64 shape extents, and the raw values,
// all little-endian.

inline constexpr char kCheckpointMagic[] = "ZNET1";

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

struct NamedTensor {
  std::string name;
  Tensor value;
};

inline void write_checkpoint(std::ostream& os, ParamStore& params) {
  os.write(kCheckpointMagic, 5);
  for (const ParamTensor& t : params.tensors()) {
    detail::put_u64(os, t.name.size());
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    const Shape5& s = t.value->shape();
    for (std::size_t e : {s.n, s.h, s.w, s.d, s.c}) detail::put_u64(os, e);
    for (double v : t.value->values()) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw DataError("failed to write checkpoint");
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[5];
  if (!is.read(magic, 5) || std::string(magic, 5) != kCheckpointMagic) throw DataError("not a ZNET1 checkpoint");
  std::vector<NamedTensor> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const std::uint64_t len = detail::get_u64(is);
    if (len > (1u << 20)) throw DataError("corrupt checkpoint name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw DataError("truncated checkpoint");
    Shape5 s;
    s.n = detail::get_u64(is);
    s.h = detail::get_u64(is);
    s.w = detail::get_u64(is);
    s.d = detail::get_u64(is);
    s.c = detail::get_u64(is);
    Tensor t(s);
    for (double& v : t.values()) v = std::bit_cast<double>(detail::get_u64(is));
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

inline void save_checkpoint(const std::string& path, ParamStore& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_checkpoint(os, params);
}

/// Loads values into an existing store; names and shapes must match.
inline void load_checkpoint(const std::string& path, ParamStore& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  const std::vector<NamedTensor> stored = read_checkpoint(is);
  std::vector<ParamTensor> slots = params.tensors();
  if (stored.size() != slots.size())
    throw DataError("checkpoint has " + std::to_string(stored.size()) + " tensors, architecture expects " +
                    std::to_string(slots.size()));
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (stored[i].name != slots[i].name || stored[i].value.shape() != slots[i].value->shape())
      throw DataError("checkpoint tensor '" + stored[i].name + "' does not match '" + slots[i].name + "'");
  }
  for (std::size_t i = 0; i < slots.size(); ++i) *slots[i].value = stored[i].value;
  ++params.version;
}

}  // namespace znet
