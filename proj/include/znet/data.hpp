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
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "znet/error.hpp"
#include "znet/tensor.hpp"

namespace znet::data {

enum class Dtype { f32, u8 };
enum class VolumeKind { image, label };

struct VolumeMeta {
  std::size_t width = 1;   // X
  std::size_t height = 1;  // Y
  std::size_t slices = 1;  // L (Z)
  Dtype dtype = Dtype::f32;
  VolumeKind kind = VolumeKind::image;
  std::string source;

  std::size_t voxels() const { return width * height * slices; }
  Shape5 tensor_shape() const { return Shape5{1, height, width, slices, 1}; }
};

/// Voxels live in a (1, Y, X, L, 1) tensor. Label volumes hold 0.0 / 1.0.
struct Volume {
  VolumeMeta meta;
  Tensor voxels;
};

inline VolumeMeta meta_for(const Tensor& t, VolumeKind kind, std::string source = {}) {
  const Shape5& s = t.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("volume tensors must be (1,Y,X,L,1), got " + s.str());
  return VolumeMeta{s.w, s.h, s.d, kind == VolumeKind::label ? Dtype::u8 : Dtype::f32, kind, std::move(source)};
}

// ---------------------------------------------------------------------------
// .zvol.json header + .zvol.raw voxels (z outermost, then y rows of x,
// little-endian)

inline std::string raw_path_for(const std::string& header_path) {
  const std::string suffix = ".json";
  if (header_path.size() > suffix.size() &&
      header_path.compare(header_path.size() - suffix.size(), suffix.size(), suffix) == 0)
    return header_path.substr(0, header_path.size() - suffix.size()) + ".raw";
  return header_path + ".raw";
}

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "u8"; }
inline const char* kind_name(VolumeKind k) { return k == VolumeKind::image ? "image" : "label"; }

inline VolumeMeta parse_header(const nlohmann::json& j) {
  VolumeMeta m;
  try {
    m.width = j.at("width").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.slices = j.at("slices").get<std::size_t>();
    const std::string dtype = j.at("dtype").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    m.source = j.value("source", std::string{});
    if (dtype == "f32")
      m.dtype = Dtype::f32;
    else if (dtype == "u8")
      m.dtype = Dtype::u8;
    else
      throw DataError("unknown dtype '" + dtype + "'");
    if (kind == "image")
      m.kind = VolumeKind::image;
    else if (kind == "label")
      m.kind = VolumeKind::label;
    else
      throw DataError("unknown volume kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed volume header: ") + e.what());
  }
  if (m.width == 0 || m.height == 0 || m.slices == 0) throw DataError("volume header has a zero extent");
  if (m.kind == VolumeKind::label && m.dtype != Dtype::u8) throw DataError("label volumes must be u8");
  if (m.kind == VolumeKind::image && m.dtype != Dtype::f32) throw DataError("image volumes must be f32");
  return m;
}

inline Volume read_volume(const std::string& header_path) {
  std::ifstream hs(header_path);
  if (!hs) throw DataError("cannot open volume header " + header_path);
  nlohmann::json j;
  try {
    hs >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("cannot parse " + header_path + ": " + e.what());
  }
  const VolumeMeta meta = parse_header(j);
  const std::string raw_path = raw_path_for(header_path);
  std::ifstream rs(raw_path, std::ios::binary);
  if (!rs) throw DataError("cannot open voxel file " + raw_path);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(rs)), std::istreambuf_iterator<char>());
  const std::size_t width = meta.dtype == Dtype::f32 ? 4 : 1;
  if (bytes.size() != meta.voxels() * width)
    throw DataError(raw_path + " holds " + std::to_string(bytes.size()) + " bytes, header implies " +
                    std::to_string(meta.voxels() * width));
  Volume v{meta, Tensor(meta.tensor_shape())};
  std::size_t k = 0;
  for (std::size_t z = 0; z < meta.slices; ++z)
    for (std::size_t y = 0; y < meta.height; ++y)
      for (std::size_t x = 0; x < meta.width; ++x, ++k) {
        double value = 0.0;
        if (meta.dtype == Dtype::f32) {
          std::uint32_t bits = 0;
          for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * k + b])) << (8 * b);
          value = static_cast<double>(std::bit_cast<float>(bits));
        } else {
          const auto u = static_cast<unsigned char>(bytes[k]);
          if (u > 1) throw DataError("label value " + std::to_string(u) + " in " + raw_path + " is not binary");
          value = u;
        }
        v.voxels.at(0, y, x, z, 0) = value;
      }
  return v;
}

inline void write_volume(const std::string& header_path, const Volume& v) {
  const VolumeMeta& m = v.meta;
  if (v.voxels.shape() != m.tensor_shape()) throw ShapeError("volume tensor does not match its header");
  nlohmann::ordered_json j;
  j["width"] = m.width;
  j["height"] = m.height;
  j["slices"] = m.slices;
  j["dtype"] = dtype_name(m.dtype);
  j["kind"] = kind_name(m.kind);
  j["source"] = m.source;
  std::ofstream hs(header_path);
  if (!hs) throw DataError("cannot write " + header_path);
  hs << j.dump(2) << "\n";
  std::vector<char> bytes;
  bytes.reserve(m.voxels() * (m.dtype == Dtype::f32 ? 4 : 1));
  for (std::size_t z = 0; z < m.slices; ++z)
    for (std::size_t y = 0; y < m.height; ++y)
      for (std::size_t x = 0; x < m.width; ++x) {
        const double value = v.voxels.at(0, y, x, z, 0);
        if (m.dtype == Dtype::f32) {
          const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
          for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
        } else {
          if (value != 0.0 && value != 1.0) throw DataError("label volume holds non-binary value");
          bytes.push_back(static_cast<char>(value == 1.0 ? 1 : 0));
        }
      }
  const std::string raw_path = raw_path_for(header_path);
  std::ofstream rs(raw_path, std::ios::binary);
  if (!rs) throw DataError("cannot write " + raw_path);
  rs.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!rs) throw DataError("failed writing " + raw_path);
}

/// Divides by the volume maximum. Negative intensities (e.g. raw Hounsfield
/// units) are rejected: shift the volume to be non-negative first.
inline Tensor normalize_intensity(const Tensor& v) {
  double hi = 0.0;
  bool any = false;
  for (double x : v.values()) {
    if (!std::isfinite(x)) throw NumericError("non-finite intensity");
    if (x < 0.0) throw DataError("negative intensity " + std::to_string(x) + "; shift the volume first");
    if (!any || x > hi) hi = x;
    any = true;
  }
  if (!(hi > 0.0)) throw DataError("cannot normalize a volume whose maximum is not positive");
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / hi;
  return out;
}

// ---------------------------------------------------------------------------
// Patch policies and plans

struct Triple {
  std::size_t x = 1;
  std::size_t y = 1;
  std::size_t z = 1;
  friend bool operator==(const Triple&, const Triple&) = default;
};

enum class Phase { train, eval };

struct PatchPolicy {
  std::string name;
  Triple patch;
  Triple train_stride;
  Triple eval_stride;
};

/// Full in-plane field of view, 8 slices; stride 1 along Z for training and
/// 8 for evaluation.
inline PatchPolicy patch512(const VolumeMeta& m) {
  return {"patch512", {m.width, m.height, 8}, {m.width, m.height, 1}, {m.width, m.height, 8}};
}

inline PatchPolicy patch128() { return {"patch128", {128, 128, 64}, {128, 128, 8}, {128, 128, 64}}; }

inline PatchPolicy patch64() { return {"patch64", {64, 64, 64}, {64, 64, 8}, {64, 64, 64}}; }

/// Isotropic n^3 crops with the same stride scheme as patch128: in-plane
/// stride n, Z stride 8 for training and n for evaluation.
inline PatchPolicy cube(std::size_t n) {
  return {"cube" + std::to_string(n), {n, n, n}, {n, n, std::min<std::size_t>(8, n)}, {n, n, n}};
}

/// Accepts patch512, patch128, patch64 and cubeN.
inline PatchPolicy policy_by_name(const std::string& name, const VolumeMeta& m) {
  if (name == "patch512") return patch512(m);
  if (name == "patch128") return patch128();
  if (name == "patch64") return patch64();
  if (name.rfind("cube", 0) == 0 && name.size() > 4) {
    std::size_t n = 0;
    for (char ch : name.substr(4)) {
      if (ch < '0' || ch > '9') throw UsageError("unknown patch policy '" + name + "'");
      n = n * 10 + static_cast<std::size_t>(ch - '0');
    }
    if (n == 0) throw UsageError("cube policy needs a positive size");
    return cube(n);
  }
  throw UsageError("unknown patch policy '" + name + "'");
}

struct PatchPlan {
  PatchPolicy policy;
  VolumeMeta meta;
  Phase phase = Phase::train;
  /// Crop origins (x0, y0, z0) with z outermost, then y, then x.
  std::vector<Triple> origins;

  std::size_t size() const { return origins.size(); }
};

/// Multiples of `stride` from 0 up to extent - patch, with a final origin
/// clamped to extent - patch when the stride does not land there.
inline std::vector<std::size_t> axis_origins(std::size_t extent, std::size_t patch, std::size_t stride) {
  if (stride == 0) throw UsageError("patch stride must be positive");
  if (patch > extent)
    throw ShapeError("patch extent " + std::to_string(patch) + " exceeds volume extent " + std::to_string(extent));
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + patch <= extent; o += stride) out.push_back(o);
  if (out.back() != extent - patch) out.push_back(extent - patch);
  return out;
}

inline PatchPlan plan_patches(const VolumeMeta& meta, const PatchPolicy& policy, Phase phase) {
  const Triple stride = phase == Phase::train ? policy.train_stride : policy.eval_stride;
  PatchPlan plan{policy, meta, phase, {}};
  const auto xs = axis_origins(meta.width, policy.patch.x, stride.x);
  const auto ys = axis_origins(meta.height, policy.patch.y, stride.y);
  const auto zs = axis_origins(meta.slices, policy.patch.z, stride.z);
  plan.origins.reserve(xs.size() * ys.size() * zs.size());
  for (std::size_t z : zs)
    for (std::size_t y : ys)
      for (std::size_t x : xs) plan.origins.push_back({x, y, z});
  return plan;
}

/// Copies crop `i` of a (1, Y, X, L, C) tensor.
inline Tensor extract(const Tensor& volume, const PatchPlan& plan, std::size_t i) {
  if (i >= plan.size())
    throw ShapeError("patch index " + std::to_string(i) + " outside plan of " + std::to_string(plan.size()));
  const Shape5& s = volume.shape();
  if (s.n != 1 || s.h != plan.meta.height || s.w != plan.meta.width || s.d != plan.meta.slices)
    throw ShapeError("volume " + s.str() + " does not match the plan");
  const Triple o = plan.origins[i];
  const Triple p = plan.policy.patch;
  Tensor out(Shape5{1, p.y, p.x, p.z, s.c});
  for (std::size_t y = 0; y < p.y; ++y)
    for (std::size_t x = 0; x < p.x; ++x) {
      const double* src = volume.data() + volume.index(0, o.y + y, o.x + x, o.z, 0);
      std::copy(src, src + p.z * s.c, out.data() + out.index(0, y, x, 0, 0));
    }
  return out;
}

/// Reassembles per-patch predictions in plan order into a full volume;
/// voxels covered by several patches get the mean of their contributions.
inline Tensor stitch(const PatchPlan& plan, const std::vector<Tensor>& predictions) {
  if (predictions.size() != plan.size())
    throw ShapeError("stitch got " + std::to_string(predictions.size()) + " predictions for a plan of " +
                     std::to_string(plan.size()));
  if (predictions.empty()) throw ShapeError("stitch needs at least one prediction");
  const std::size_t c = predictions.front().shape().c;
  const Triple p = plan.policy.patch;
  const Shape5 full{1, plan.meta.height, plan.meta.width, plan.meta.slices, c};
  Tensor sum(full);
  std::vector<std::uint32_t> hits(plan.meta.voxels(), 0);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const Tensor& pred = predictions[i];
    if (pred.shape() != Shape5{1, p.y, p.x, p.z, c})
      throw ShapeError("prediction " + std::to_string(i) + " has shape " + pred.shape().str());
    const Triple o = plan.origins[i];
    for (std::size_t y = 0; y < p.y; ++y)
      for (std::size_t x = 0; x < p.x; ++x)
        for (std::size_t z = 0; z < p.z; ++z) {
          const std::size_t voxel = ((o.y + y) * plan.meta.width + (o.x + x)) * plan.meta.slices + (o.z + z);
          ++hits[voxel];
          for (std::size_t ch = 0; ch < c; ++ch) sum[voxel * c + ch] += pred.at(0, y, x, z, ch);
        }
  }
  for (std::size_t v = 0; v < hits.size(); ++v) {
    if (hits[v] == 0) throw ShapeError("plan leaves voxel " + std::to_string(v) + " uncovered");
    if (hits[v] == 1) continue;
    for (std::size_t ch = 0; ch < c; ++ch) sum[v * c + ch] /= static_cast<double>(hits[v]);
  }
  return sum;
}

/// Number of eval-plan patches covering each voxel, laid out like the volume.
inline std::vector<std::uint32_t> coverage(const PatchPlan& plan) {
  std::vector<std::uint32_t> hits(plan.meta.voxels(), 0);
  const Triple p = plan.policy.patch;
  for (const Triple& o : plan.origins)
    for (std::size_t y = 0; y < p.y; ++y)
      for (std::size_t x = 0; x < p.x; ++x)
        for (std::size_t z = 0; z < p.z; ++z)
          ++hits[((o.y + y) * plan.meta.width + (o.x + x)) * plan.meta.slices + (o.z + z)];
  return hits;
}

// ---------------------------------------------------------------------------
// Augmentation and fold splitting

/// The original pair followed by 90, 180 and 270 degree rotations about Z.
inline std::vector<std::pair<Tensor, Tensor>> augment_rotations(const Tensor& patch, const Tensor& label) {
  if (!patch.shape().same_spatial(label.shape())) throw ShapeError("patch and label shapes differ");
  std::vector<std::pair<Tensor, Tensor>> out;
  out.reserve(4);
  for (int k = 0; k < 4; ++k) out.emplace_back(rot90_z(patch, k), rot90_z(label, k));
  return out;
}

enum class SplitScheme { two_fold_10_2_8, fixed_36_24 };

inline SplitScheme parse_scheme(const std::string& s) {
  if (s == "two_fold_10_2_8") return SplitScheme::two_fold_10_2_8;
  if (s == "fixed_36_24") return SplitScheme::fixed_36_24;
  throw UsageError("unknown split scheme '" + s + "'");
}

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// two_fold_10_2_8: 20 ids shuffled into halves A and B; fold 1 trains on
/// A and validates/tests on 2/8 ids of B, fold 2 swaps the halves.
/// fixed_36_24: one fold of 36 training and 24 test ids, no validation.
inline std::vector<Fold> split_folds(const std::vector<std::string>& ids, std::uint64_t seed, SplitScheme scheme) {
  const std::size_t expected = scheme == SplitScheme::two_fold_10_2_8 ? 20 : 60;
  if (ids.size() != expected)
    throw UsageError("split scheme expects " + std::to_string(expected) + " ids, got " + std::to_string(ids.size()));
  std::vector<std::string> order = ids;
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  auto range = [&](std::size_t a, std::size_t b) {
    return std::vector<std::string>(order.begin() + static_cast<std::ptrdiff_t>(a),
                                    order.begin() + static_cast<std::ptrdiff_t>(b));
  };
  if (scheme == SplitScheme::fixed_36_24) return {Fold{range(0, 36), {}, range(36, 60)}};
  return {Fold{range(0, 10), range(10, 12), range(12, 20)}, Fold{range(10, 20), range(0, 2), range(2, 10)}};
}

inline nlohmann::ordered_json folds_to_json(const std::vector<Fold>& folds) {
  nlohmann::ordered_json j;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    j["fold" + std::to_string(i + 1)] = {
        {"train", folds[i].train}, {"val", folds[i].val}, {"test", folds[i].test}};
  }
  return j;
}

}  // namespace znet::data
