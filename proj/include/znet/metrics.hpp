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

#include <cstdint>
#include <cstdio>
#include <string>

#include "znet/error.hpp"
#include "znet/tensor.hpp"

namespace znet::metrics {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }

  /// |Y and P| / |Y or P| on the foreground class; 1.0 when both are empty.
  double iou() const {
    const std::uint64_t uni = tp + fp + fn;
    return uni == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(uni);
  }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

/// Argmax over two channels. An exact tie goes to background.
inline Tensor binarize(const Tensor& scores) {
  const Shape5& s = scores.shape();
  if (s.c != 2) throw ShapeError("binarize expects 2 channels, got " + s.str());
  Tensor out(Shape5{s.n, s.h, s.w, s.d, 1});
  for (std::size_t v = 0; v < out.size(); ++v) out[v] = scores[2 * v + 1] > scores[2 * v] ? 1.0 : 0.0;
  return out;
}

inline ConfusionCounts confusion(const Tensor& truth, const Tensor& pred) {
  require_same_shape(truth, pred, "confusion");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double y = truth[i], p = pred[i];
    if ((y != 0.0 && y != 1.0) || (p != 0.0 && p != 1.0)) throw DataError("IoU inputs must be binary");
    if (y == 1.0)
      ++(p == 1.0 ? c.tp : c.fn);
    else
      ++(p == 1.0 ? c.fp : c.tn);
  }
  return c;
}

inline double iou(const Tensor& truth, const Tensor& pred) { return confusion(truth, pred).iou(); }

inline std::string csv_header() { return "volume_id,iou,tp,fp,fn,tn"; }

inline std::string csv_row(const std::string& volume_id, const ConfusionCounts& c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", c.iou());
  return volume_id + "," + buf + "," + std::to_string(c.tp) + "," + std::to_string(c.fp) + "," +
         std::to_string(c.fn) + "," + std::to_string(c.tn);
}

}  // namespace znet::metrics
