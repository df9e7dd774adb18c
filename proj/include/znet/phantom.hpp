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
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "znet/data.hpp"
#include "znet/error.hpp"
#include "znet/tensor.hpp"

namespace znet::phantom {

enum class Kind { tube, blob };

/// Synthetic CT-like volume recipe. Tubes are aorta-like: a disk per slice
/// whose center random-walks along Z. Blobs are lung-like: a union of
/// ellipsoids. Distractors are unlabelled blobs drawn with the foreground
/// intensity distribution, so intensity alone cannot separate the classes.
struct PhantomSpec {
  Kind kind = Kind::tube;
  std::size_t x = 64;
  std::size_t y = 64;
  std::size_t l = 32;
  double radius_min = 3.5;
  double radius_max = 5.0;
  /// Centerline step standard deviation in voxels per slice (tube only).
  double wobble = 0.5;
  double fg_mean = 0.7;
  double fg_sigma = 0.1;
  double bg_mean = 0.3;
  double bg_sigma = 0.1;
  std::size_t distractors = 6;
  /// Number of labelled ellipsoids (blob only).
  std::size_t blobs = 3;
  std::uint64_t seed = 0;

  void validate() const {
    if (x < 8 || y < 8 || l < 1) throw UsageError("phantom dims must be at least 8x8x1");
    if (!(radius_min >= 1.0) || radius_max < radius_min)
      throw UsageError("phantom radius range must satisfy 1 <= min <= max");
    if (!(radius_max < static_cast<double>(std::min(x, y)) / 4.0))
      throw UsageError("phantom radius must stay below min(X,Y)/4");
    if (wobble < 0 || fg_sigma < 0 || bg_sigma < 0) throw UsageError("phantom sigmas must be non-negative");
    if (kind == Kind::blob && blobs == 0) throw UsageError("blob phantoms need at least one blob");
  }
};

inline PhantomSpec spec_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"kind",   "x",        "y",        "l",          "radius_min",
                                              "radius_max", "wobble", "fg_mean", "fg_sigma", "bg_mean",
                                              "bg_sigma", "distractors", "blobs", "seed"};
  PhantomSpec s;
  if (!j.is_object()) throw UsageError("phantom spec must be a JSON object");
  for (const auto& item : j.items())
    if (std::find(known.begin(), known.end(), item.key()) == known.end())
      throw UsageError("unknown phantom spec key '" + item.key() + "'");
  try {
    if (j.contains("kind")) {
      const std::string k = j["kind"].get<std::string>();
      if (k == "tube")
        s.kind = Kind::tube;
      else if (k == "blob")
        s.kind = Kind::blob;
      else
        throw UsageError("unknown phantom kind '" + k + "'");
    }
    s.x = j.value("x", s.x);
    s.y = j.value("y", s.y);
    s.l = j.value("l", s.l);
    s.radius_min = j.value("radius_min", s.radius_min);
    s.radius_max = j.value("radius_max", s.radius_max);
    s.wobble = j.value("wobble", s.wobble);
    s.fg_mean = j.value("fg_mean", s.fg_mean);
    s.fg_sigma = j.value("fg_sigma", s.fg_sigma);
    s.bg_mean = j.value("bg_mean", s.bg_mean);
    s.bg_sigma = j.value("bg_sigma", s.bg_sigma);
    s.distractors = j.value("distractors", s.distractors);
    s.blobs = j.value("blobs", s.blobs);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed phantom spec: ") + e.what());
  }
  s.validate();
  return s;
}

struct PhantomPair {
  data::Volume image;
  data::Volume label;
};

namespace detail {

struct Ellipsoid {
  double cx, cy, cz;
  double rx, ry, rz;
  bool contains(double x, double y, double z) const {
    const double a = (x - cx) / rx, b = (y - cy) / ry, c = (z - cz) / rz;
    return a * a + b * b + c * c <= 1.0;
  }
};

inline double reflect(double v, double lo, double hi) {
  if (hi <= lo) return (lo + hi) / 2.0;
  const double span = hi - lo;
  double t = std::fmod(v - lo, 2.0 * span);
  if (t < 0) t += 2.0 * span;
  return lo + (t <= span ? t : 2.0 * span - t);
}

}  // namespace detail

inline PhantomPair generate(const PhantomSpec& spec, const std::string& source = "phantom") {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * unit(rng); };
  const double X = static_cast<double>(spec.x), Y = static_cast<double>(spec.y), L = static_cast<double>(spec.l);

  Tensor label(Shape5{1, spec.y, spec.x, spec.l, 1});
  // Per-slice tube centers, used to keep distractors clear of the tube.
  std::vector<std::pair<double, double>> centers;
  double tube_r = 0.0;
  std::vector<detail::Ellipsoid> blobs;

  if (spec.kind == Kind::tube) {
    tube_r = uniform(spec.radius_min, spec.radius_max);
    const double margin = 2.0 * tube_r;
    double cx = X / 2.0 + uniform(-X / 8.0, X / 8.0);
    double cy = Y / 2.0 + uniform(-Y / 8.0, Y / 8.0);
    cx = detail::reflect(cx, margin, X - 1.0 - margin);
    cy = detail::reflect(cy, margin, Y - 1.0 - margin);
    std::normal_distribution<double> step(0.0, spec.wobble > 0 ? spec.wobble : 1.0);
    for (std::size_t z = 0; z < spec.l; ++z) {
      if (z > 0 && spec.wobble > 0) {
        cx = detail::reflect(cx + step(rng), margin, X - 1.0 - margin);
        cy = detail::reflect(cy + step(rng), margin, Y - 1.0 - margin);
      }
      centers.emplace_back(cx, cy);
      for (std::size_t yy = 0; yy < spec.y; ++yy)
        for (std::size_t xx = 0; xx < spec.x; ++xx) {
          const double dx = static_cast<double>(xx) - cx, dy = static_cast<double>(yy) - cy;
          if (dx * dx + dy * dy <= tube_r * tube_r) label.at(0, yy, xx, z, 0) = 1.0;
        }
    }
  } else {
    for (std::size_t b = 0; b < spec.blobs; ++b) {
      const double r = uniform(spec.radius_min, spec.radius_max);
      detail::Ellipsoid e{uniform(2 * r, X - 1 - 2 * r), uniform(2 * r, Y - 1 - 2 * r), uniform(0.0, L - 1.0),
                          r * uniform(0.8, 1.2),       r * uniform(0.8, 1.2),       r * uniform(0.8, 1.6)};
      blobs.push_back(e);
    }
    for (std::size_t z = 0; z < spec.l; ++z)
      for (std::size_t yy = 0; yy < spec.y; ++yy)
        for (std::size_t xx = 0; xx < spec.x; ++xx)
          for (const auto& e : blobs)
            if (e.contains(static_cast<double>(xx), static_cast<double>(yy), static_cast<double>(z))) {
              label.at(0, yy, xx, z, 0) = 1.0;
              break;
            }
  }

  // Distractors: small ellipsoids at least two voxels away from any
  // foreground, shorter than 8 slices along Z.
  std::vector<detail::Ellipsoid> distractors;
  for (std::size_t k = 0; k < spec.distractors; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double r = uniform(std::max(1.0, spec.radius_min * 0.5), spec.radius_max);
      const double rz = uniform(1.0, 3.0);
      detail::Ellipsoid e{uniform(r, X - 1 - r), uniform(r, Y - 1 - r), uniform(0.0, L - 1.0), r, r, rz};
      bool clear = true;
      const std::size_t z_lo = static_cast<std::size_t>(std::max(0.0, std::floor(e.cz - rz)));
      const std::size_t z_hi = static_cast<std::size_t>(std::min(L - 1.0, std::ceil(e.cz + rz)));
      for (std::size_t z = z_lo; z <= z_hi && clear; ++z) {
        if (spec.kind == Kind::tube) {
          const double dx = e.cx - centers[z].first, dy = e.cy - centers[z].second;
          clear = std::sqrt(dx * dx + dy * dy) > tube_r + r + 2.0;
        }
      }
      for (const auto& bl : blobs) {
        const double dx = e.cx - bl.cx, dy = e.cy - bl.cy, dz = e.cz - bl.cz;
        const double reach = std::max({bl.rx, bl.ry, bl.rz}) + std::max(r, rz) + 2.0;
        if (dx * dx + dy * dy + dz * dz <= reach * reach) clear = false;
      }
      if (clear) {
        distractors.push_back(e);
        break;
      }
    }
  }

  std::normal_distribution<double> fg(spec.fg_mean, spec.fg_sigma > 0 ? spec.fg_sigma : 1.0);
  std::normal_distribution<double> bg(spec.bg_mean, spec.bg_sigma > 0 ? spec.bg_sigma : 1.0);
  Tensor image(label.shape());
  for (std::size_t z = 0; z < spec.l; ++z)
    for (std::size_t yy = 0; yy < spec.y; ++yy)
      for (std::size_t xx = 0; xx < spec.x; ++xx) {
        bool bright = label.at(0, yy, xx, z, 0) == 1.0;
        if (!bright)
          for (const auto& e : distractors)
            if (e.contains(static_cast<double>(xx), static_cast<double>(yy), static_cast<double>(z))) {
              bright = true;
              break;
            }
        double v = bright ? (spec.fg_sigma > 0 ? fg(rng) : spec.fg_mean) : (spec.bg_sigma > 0 ? bg(rng) : spec.bg_mean);
        v = std::clamp(v, 0.0, 1.0);
        // Stored at single precision so files round-trip exactly.
        image.at(0, yy, xx, z, 0) = static_cast<double>(static_cast<float>(v));
      }

  PhantomPair out{{data::meta_for(image, data::VolumeKind::image, source), std::move(image)},
                  {data::meta_for(label, data::VolumeKind::label, source), std::move(label)}};
  return out;
}

struct ImbalanceReport {
  std::vector<double> fractions;
  std::size_t empty_patches = 0;
};

/// Foreground fraction of every planned patch of a label volume.
inline ImbalanceReport imbalance_report(const data::Volume& label, const data::PatchPolicy& policy,
                                        data::Phase phase = data::Phase::train) {
  const data::PatchPlan plan = data::plan_patches(label.meta, policy, phase);
  ImbalanceReport r;
  r.fractions.reserve(plan.size());
  const data::Triple p = policy.patch;
  const double voxels = static_cast<double>(p.x * p.y * p.z);
  for (const data::Triple& o : plan.origins) {
    std::size_t fg = 0;
    for (std::size_t y = 0; y < p.y; ++y)
      for (std::size_t x = 0; x < p.x; ++x)
        for (std::size_t z = 0; z < p.z; ++z) fg += label.voxels.at(0, o.y + y, o.x + x, o.z + z, 0) == 1.0 ? 1 : 0;
    r.fractions.push_back(static_cast<double>(fg) / voxels);
    if (fg == 0) ++r.empty_patches;
  }
  return r;
}

}  // namespace znet::phantom
