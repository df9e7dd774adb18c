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
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "znet/error.hpp"

namespace znet {

/// Extents of a 5-axis tensor: batch, height (Y), width (X), depth (Z),
/// channels. Channels vary fastest in memory, batch slowest.
struct Shape5 {
  std::size_t n = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t d = 1;
  std::size_t c = 1;

  friend bool operator==(const Shape5&, const Shape5&) = default;

  /// Throws ShapeError when an extent is zero or the element count does not
  /// fit in size_t.
  std::size_t count() const {
    const std::array<std::size_t, 5> dims{n, h, w, d, c};
    std::size_t total = 1;
    for (std::size_t v : dims) {
      if (v == 0) throw ShapeError("shape " + str() + " has a zero extent");
      if (total > std::numeric_limits<std::size_t>::max() / v)
        throw ShapeError("shape " + str() + " overflows the element count");
      total *= v;
    }
    return total;
  }

  bool same_spatial(const Shape5& o) const {
    return n == o.n && h == o.h && w == o.w && d == o.d;
  }

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
           std::to_string(d) + "," + std::to_string(c) + ")";
  }
};

/// Dense double-precision tensor in (n, h, w, d, c) order.
class Tensor {
 public:
  Tensor() : Tensor(Shape5{}) {}
  explicit Tensor(const Shape5& shape, double fill = 0.0) : shape_(shape), values_(shape.count(), fill) {}
  Tensor(const Shape5& shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.count())
      throw ShapeError("buffer of " + std::to_string(values_.size()) + " values does not match shape " +
                       shape_.str());
  }

  const Shape5& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::size_t index(std::size_t n, std::size_t h, std::size_t w, std::size_t d, std::size_t c) const {
    return (((n * shape_.h + h) * shape_.w + w) * shape_.d + d) * shape_.c + c;
  }

  std::array<std::size_t, 5> coords(std::size_t linear) const {
    std::array<std::size_t, 5> out{};
    out[4] = linear % shape_.c;
    linear /= shape_.c;
    out[3] = linear % shape_.d;
    linear /= shape_.d;
    out[2] = linear % shape_.w;
    linear /= shape_.w;
    out[1] = linear % shape_.h;
    out[0] = linear / shape_.h;
    return out;
  }

  double& at(std::size_t n, std::size_t h, std::size_t w, std::size_t d, std::size_t c) {
    return values_[index(n, h, w, d, c)];
  }
  double at(std::size_t n, std::size_t h, std::size_t w, std::size_t d, std::size_t c) const {
    return values_[index(n, h, w, d, c)];
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  double sum() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s;
  }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape5 shape_;
  std::vector<double> values_;
};

inline void require_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite value in " + what);
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (a.shape() != b.shape())
    throw ShapeError(what + ": shape " + a.shape().str() + " vs " + b.shape().str());
}

inline Tensor new_filled(const Shape5& shape, double v) { return Tensor(shape, v); }

/// Spatial kernel extents (height, width, depth).
struct Extent3 {
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t d = 1;
  friend bool operator==(const Extent3&, const Extent3&) = default;
};

/// Front/back zero padding that keeps a stride-1 convolution's output the
/// same length as its input: floor((k-1)/2) in front, the rest behind.
struct AxisPad {
  std::size_t front = 0;
  std::size_t back = 0;
};

inline AxisPad same_padding(std::size_t kernel, std::size_t extent) {
  if (kernel == 0) throw ShapeError("kernel extent must be positive");
  if (kernel % 2 == 0 && kernel != extent)
    throw ShapeError("even kernel extent " + std::to_string(kernel) + " is only supported when it spans the axis (" +
                     std::to_string(extent) + ")");
  const std::size_t front = (kernel - 1) / 2;
  return {front, kernel - 1 - front};
}

inline Tensor pad_same(const Tensor& t, const Extent3& kernel) {
  const Shape5& s = t.shape();
  const AxisPad ph = same_padding(kernel.h, s.h);
  const AxisPad pw = same_padding(kernel.w, s.w);
  const AxisPad pd = same_padding(kernel.d, s.d);
  Shape5 out_shape{s.n, s.h + ph.front + ph.back, s.w + pw.front + pw.back, s.d + pd.front + pd.back, s.c};
  Tensor out(out_shape);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t h = 0; h < s.h; ++h)
      for (std::size_t w = 0; w < s.w; ++w) {
        const double* src = t.data() + t.index(n, h, w, 0, 0);
        double* dst = out.data() + out.index(n, h + ph.front, w + pw.front, pd.front, 0);
        std::copy(src, src + s.d * s.c, dst);
      }
  return out;
}

inline Tensor slice_z(const Tensor& t, std::size_t z0, std::size_t len) {
  const Shape5& s = t.shape();
  if (len == 0 || z0 + len > s.d)
    throw ShapeError("slice_z [" + std::to_string(z0) + ", " + std::to_string(z0 + len) + ") outside depth " +
                     std::to_string(s.d));
  Tensor out(Shape5{s.n, s.h, s.w, len, s.c});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t h = 0; h < s.h; ++h)
      for (std::size_t w = 0; w < s.w; ++w) {
        const double* src = t.data() + t.index(n, h, w, z0, 0);
        std::copy(src, src + len * s.c, out.data() + out.index(n, h, w, 0, 0));
      }
  return out;
}

/// Rotates every (n, d, c) slab in the h/w plane by quarter_turns * 90
/// degrees counter-clockwise (x to the right, y up). One turn maps
/// out[h][w] = in[H-1-w][h], so [[1,2],[3,4]] becomes [[3,1],[4,2]].
inline Tensor rot90_z(const Tensor& t, int quarter_turns) {
  const Shape5& s = t.shape();
  if (s.h != s.w) throw ShapeError("rot90_z needs a square in-plane shape, got " + s.str());
  const int turns = ((quarter_turns % 4) + 4) % 4;
  if (turns == 0) return t;
  const std::size_t len = s.h;
  const std::size_t run = s.d * s.c;
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t h = 0; h < len; ++h)
      for (std::size_t w = 0; w < len; ++w) {
        std::size_t sh = 0, sw = 0;
        switch (turns) {
          case 1: sh = len - 1 - w; sw = h; break;
          case 2: sh = len - 1 - h; sw = len - 1 - w; break;
          default: sh = w; sw = len - 1 - h; break;
        }
        const double* src = t.data() + t.index(n, sh, sw, 0, 0);
        std::copy(src, src + run, out.data() + out.index(n, h, w, 0, 0));
      }
  return out;
}

enum class Elementwise { add, sub, mul };

inline Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise op) {
  require_same_shape(a, b, "elementwise");
  Tensor out(a.shape());
  const std::size_t len = a.size();
  for (std::size_t i = 0; i < len; ++i) {
    switch (op) {
      case Elementwise::add: out[i] = a[i] + b[i]; break;
      case Elementwise::sub: out[i] = a[i] - b[i]; break;
      case Elementwise::mul: out[i] = a[i] * b[i]; break;
    }
  }
  require_finite(out, "elementwise result");
  return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace znet
