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
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "znet/error.hpp"
#include "znet/tensor.hpp"

namespace znet::ops {

/// Depth extent placeholder for the 1x1xD kernel; replaced by the incoming
/// feature depth when a graph is compiled.
inline constexpr std::size_t kFullDepth = std::numeric_limits<std::size_t>::max();

enum class Padding { same, valid };

/// Geometry of one (possibly transposed) convolution. All convolutions here
/// are cross-correlations: out[o] = sum_t in[o*S + t - pad] * w[t].
struct ConvSpec {
  Extent3 kernel{3, 3, 3};
  std::size_t stride = 1;
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  Padding padding = Padding::same;
  bool transposed = false;

  std::size_t taps() const { return kernel.h * kernel.w * kernel.d; }
  std::size_t weight_count() const { return taps() * c_in * c_out; }
  /// kh*kw*kd*c_in*c_out + c_out.
  std::size_t param_count() const { return weight_count() + c_out; }
};

/// Weights are laid out (1, kh, kw, kd, c_in*c_out) with c_out fastest, so
/// the slice for tap t and input channel ci starts at (t*c_in + ci)*c_out.
/// For transposed convolutions c_in/c_out refer to the transposed layer's
/// own input/output.
struct ConvParams {
  Tensor weights;
  Tensor bias;
  Tensor weight_grad;
  Tensor bias_grad;

  static ConvParams zeros(const ConvSpec& spec) {
    if (spec.kernel.d == kFullDepth) throw ShapeError("FULL_DEPTH kernel is unresolved");
    const Shape5 ws{1, spec.kernel.h, spec.kernel.w, spec.kernel.d, spec.c_in * spec.c_out};
    const Shape5 bs{1, 1, 1, 1, spec.c_out};
    return {Tensor(ws), Tensor(bs), Tensor(ws), Tensor(bs)};
  }
};

struct InstanceNormParams {
  Tensor gamma;
  Tensor beta;
  Tensor gamma_grad;
  Tensor beta_grad;
  double epsilon = 1e-5;

  static InstanceNormParams identity(std::size_t channels, double epsilon = 1e-5) {
    const Shape5 s{1, 1, 1, 1, channels};
    return {Tensor(s, 1.0), Tensor(s, 0.0), Tensor(s), Tensor(s), epsilon};
  }
};

namespace detail {

struct ConvGeometry {
  Shape5 in;
  Shape5 out;
  Extent3 kernel;
  std::size_t stride = 1;
  std::ptrdiff_t pad_h = 0;
  std::ptrdiff_t pad_w = 0;
  std::ptrdiff_t pad_d = 0;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding,
                                   const char* axis) {
  if (padding == Padding::same) {
    const std::size_t out = in / stride;
    if (out == 0)
      throw ShapeError(std::string("stride ") + std::to_string(stride) + " collapses " + axis + " extent " +
                       std::to_string(in));
    return out;
  }
  if (k > in)
    throw ShapeError(std::string("kernel extent ") + std::to_string(k) + " exceeds " + axis + " extent " +
                     std::to_string(in));
  return (in - k) / stride + 1;
}

inline std::ptrdiff_t conv_front_pad(std::size_t k, std::size_t in, std::size_t stride, Padding padding) {
  if (padding == Padding::valid) return 0;
  if (stride == 1) return static_cast<std::ptrdiff_t>(same_padding(k, in).front);
  return static_cast<std::ptrdiff_t>((k - 1) / 2);
}

inline void check_conv_spec(const ConvSpec& spec, const ConvParams& p) {
  if (spec.kernel.d == kFullDepth) throw ShapeError("FULL_DEPTH kernel is unresolved");
  if (spec.stride == 0) throw ShapeError("stride must be positive");
  if (spec.kernel.h == 0 || spec.kernel.w == 0 || spec.kernel.d == 0)
    throw ShapeError("kernel extents must be positive");
  if (p.weights.size() != spec.weight_count() || p.bias.size() != spec.c_out)
    throw ShapeError("convolution parameters do not match the spec");
}

inline ConvGeometry conv_geometry(const Shape5& in, const ConvSpec& spec) {
  if (in.c != spec.c_in)
    throw ShapeError("convolution expects " + std::to_string(spec.c_in) + " input channels, got " +
                     std::to_string(in.c));
  ConvGeometry g;
  g.in = in;
  g.kernel = spec.kernel;
  g.stride = spec.stride;
  g.out = Shape5{in.n, conv_out_extent(in.h, spec.kernel.h, spec.stride, spec.padding, "height"),
                 conv_out_extent(in.w, spec.kernel.w, spec.stride, spec.padding, "width"),
                 conv_out_extent(in.d, spec.kernel.d, spec.stride, spec.padding, "depth"), spec.c_out};
  g.pad_h = conv_front_pad(spec.kernel.h, in.h, spec.stride, spec.padding);
  g.pad_w = conv_front_pad(spec.kernel.w, in.w, spec.stride, spec.padding);
  g.pad_d = conv_front_pad(spec.kernel.d, in.d, spec.stride, spec.padding);
  return g;
}

/// One axis of a convolution: for every destination coordinate, the
/// (tap, source coordinate) pairs that contribute to it.
struct AxisMap {
  std::vector<std::size_t> offsets;  // size dst + 1
  std::vector<std::size_t> taps;
  std::vector<std::size_t> srcs;
};

enum class AxisRule {
  /// src = dst*S + t - pad: a strided convolution read from its input.
  strided,
  /// dst = src*S + t - pad: the adjoint scatter, written as a gather.
  dilated
};

inline AxisMap axis_map(AxisRule rule, std::size_t dst_extent, std::size_t src_extent, std::size_t k,
                        std::size_t stride, std::ptrdiff_t pad) {
  AxisMap m;
  m.offsets.reserve(dst_extent + 1);
  m.offsets.push_back(0);
  const auto S = static_cast<std::ptrdiff_t>(stride);
  const auto src_n = static_cast<std::ptrdiff_t>(src_extent);
  for (std::size_t o = 0; o < dst_extent; ++o) {
    for (std::size_t t = 0; t < k; ++t) {
      std::ptrdiff_t src = -1;
      if (rule == AxisRule::strided) {
        src = static_cast<std::ptrdiff_t>(o) * S + static_cast<std::ptrdiff_t>(t) - pad;
      } else {
        const std::ptrdiff_t num = static_cast<std::ptrdiff_t>(o) + pad - static_cast<std::ptrdiff_t>(t);
        if (num >= 0 && num % S == 0) src = num / S;
      }
      if (src >= 0 && src < src_n) {
        m.taps.push_back(t);
        m.srcs.push_back(static_cast<std::size_t>(src));
      }
    }
    m.offsets.push_back(m.taps.size());
  }
  return m;
}

struct AxisMaps {
  AxisMap h, w, d;
  Extent3 kernel;
};

inline AxisMaps axis_maps(AxisRule rule, const Shape5& dst, const Shape5& src, const Extent3& k, std::size_t stride,
                          std::ptrdiff_t ph, std::ptrdiff_t pw, std::ptrdiff_t pd) {
  return {axis_map(rule, dst.h, src.h, k.h, stride, ph), axis_map(rule, dst.w, src.w, k.w, stride, pw),
          axis_map(rule, dst.d, src.d, k.d, stride, pd), k};
}

/// dst[o] = bias + sum over (tap, src) of src_vec(kin) * mats[tap](kin x kout).
/// KOUT fixes the output channel count at compile time (0 = runtime).
template <std::size_t KOUT>
void gather_impl(const double* __restrict src, const Shape5& ss, double* __restrict dst, const Shape5& ds,
                 const AxisMaps& m, const double* __restrict mats, const double* bias) {
  const std::size_t kin = ss.c;
  const std::size_t kout = KOUT ? KOUT : ds.c;
  const std::size_t kw = m.kernel.w, kd = m.kernel.d;
  std::vector<double> scratch(KOUT ? 0 : kout);
  double fixed[KOUT ? KOUT : 1];
  double* __restrict acc = KOUT ? fixed : scratch.data();
  for (std::size_t n = 0; n < ds.n; ++n)
    for (std::size_t oh = 0; oh < ds.h; ++oh)
      for (std::size_t ow = 0; ow < ds.w; ++ow)
        for (std::size_t od = 0; od < ds.d; ++od) {
          for (std::size_t c = 0; c < kout; ++c) acc[c] = bias ? bias[c] : 0.0;
          for (std::size_t a = m.h.offsets[oh]; a < m.h.offsets[oh + 1]; ++a)
            for (std::size_t b = m.w.offsets[ow]; b < m.w.offsets[ow + 1]; ++b) {
              const std::size_t row = ((n * ss.h + m.h.srcs[a]) * ss.w + m.w.srcs[b]) * ss.d;
              const std::size_t tap_row = (m.h.taps[a] * kw + m.w.taps[b]) * kd;
              for (std::size_t e = m.d.offsets[od]; e < m.d.offsets[od + 1]; ++e) {
                const double* __restrict v = src + (row + m.d.srcs[e]) * kin;
                const double* __restrict mat = mats + (tap_row + m.d.taps[e]) * kin * kout;
                for (std::size_t k = 0; k < kin; ++k) {
                  const double x = v[k];
                  const double* __restrict r = mat + k * kout;
                  for (std::size_t c = 0; c < kout; ++c) acc[c] += x * r[c];
                }
              }
            }
          double* out = dst + (((n * ds.h + oh) * ds.w + ow) * ds.d + od) * kout;
          for (std::size_t c = 0; c < kout; ++c) out[c] = acc[c];
        }
}

/// grad[tap](kin x kout) += sum over dst o and its (tap, src) pairs of
/// src_vec(kin) outer g[o](kout).
template <std::size_t KOUT>
void weight_grad_impl(const double* __restrict src, const Shape5& ss, const double* __restrict g, const Shape5& gs,
                      const AxisMaps& m, double* __restrict grad) {
  const std::size_t kin = ss.c;
  const std::size_t kout = KOUT ? KOUT : gs.c;
  const std::size_t kw = m.kernel.w, kd = m.kernel.d;
  for (std::size_t n = 0; n < gs.n; ++n)
    for (std::size_t oh = 0; oh < gs.h; ++oh)
      for (std::size_t ow = 0; ow < gs.w; ++ow)
        for (std::size_t od = 0; od < gs.d; ++od) {
          const double* __restrict gv = g + (((n * gs.h + oh) * gs.w + ow) * gs.d + od) * kout;
          for (std::size_t a = m.h.offsets[oh]; a < m.h.offsets[oh + 1]; ++a)
            for (std::size_t b = m.w.offsets[ow]; b < m.w.offsets[ow + 1]; ++b) {
              const std::size_t row = ((n * ss.h + m.h.srcs[a]) * ss.w + m.w.srcs[b]) * ss.d;
              const std::size_t tap_row = (m.h.taps[a] * kw + m.w.taps[b]) * kd;
              for (std::size_t e = m.d.offsets[od]; e < m.d.offsets[od + 1]; ++e) {
                const double* __restrict v = src + (row + m.d.srcs[e]) * kin;
                double* __restrict gm = grad + (tap_row + m.d.taps[e]) * kin * kout;
                for (std::size_t k = 0; k < kin; ++k) {
                  const double x = v[k];
                  double* __restrict r = gm + k * kout;
                  for (std::size_t c = 0; c < kout; ++c) r[c] += x * gv[c];
                }
              }
            }
        }
}

template <template <std::size_t> class Kernel, typename... Args>
void dispatch_width(std::size_t kout, Args&&... args) {
  switch (kout) {
    case 1: Kernel<1>::run(std::forward<Args>(args)...); break;
    case 2: Kernel<2>::run(std::forward<Args>(args)...); break;
    case 4: Kernel<4>::run(std::forward<Args>(args)...); break;
    case 8: Kernel<8>::run(std::forward<Args>(args)...); break;
    case 16: Kernel<16>::run(std::forward<Args>(args)...); break;
    case 32: Kernel<32>::run(std::forward<Args>(args)...); break;
    default: Kernel<0>::run(std::forward<Args>(args)...); break;
  }
}

template <std::size_t K>
struct Gather {
  template <typename... A>
  static void run(A&&... a) { gather_impl<K>(std::forward<A>(a)...); }
};

template <std::size_t K>
struct WeightGrad {
  template <typename... A>
  static void run(A&&... a) { weight_grad_impl<K>(std::forward<A>(a)...); }
};

inline void gather(const Tensor& src, Tensor& dst, const AxisMaps& m, const double* mats, const double* bias) {
  dispatch_width<Gather>(dst.shape().c, src.data(), src.shape(), dst.data(), dst.shape(), m, mats, bias);
}

inline void weight_grad(const Tensor& src, const Tensor& g, const AxisMaps& m, Tensor& grad) {
  dispatch_width<WeightGrad>(g.shape().c, src.data(), src.shape(), g.data(), g.shape(), m, grad.data());
}

/// Kernel bank with the channel roles of every tap swapped:
/// [t][a][b] -> [t][b][a].
inline std::vector<double> transpose_taps(const Tensor& weights, std::size_t a, std::size_t b) {
  const std::size_t taps = weights.size() / (a * b);
  std::vector<double> out(weights.size());
  for (std::size_t t = 0; t < taps; ++t)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) out[(t * b + j) * a + i] = weights[(t * a + i) * b + j];
  return out;
}

inline void bias_grad(const Tensor& grad_out, Tensor& gb) {
  const std::size_t c = grad_out.shape().c;
  const std::size_t voxels = grad_out.size() / c;
  for (std::size_t v = 0; v < voxels; ++v)
    for (std::size_t k = 0; k < c; ++k) gb[k] += grad_out[v * c + k];
}

inline void check_grad_shape(const Tensor& grad_out, const Shape5& expected, const char* what) {
  if (grad_out.shape() != expected)
    throw ShapeError(std::string(what) + ": gradient shape " + grad_out.shape().str() + " does not match output " +
                     expected.str());
}

}  // namespace detail

/// Output shape of conv3d_fwd / conv_transpose3d_fwd for input shape `in`.
inline Shape5 conv_output_shape(const Shape5& in, const ConvSpec& spec) {
  if (spec.transposed) {
    if (in.c != spec.c_in) throw ShapeError("transposed convolution channel mismatch");
    return Shape5{in.n, in.h * spec.stride, in.w * spec.stride, in.d * spec.stride, spec.c_out};
  }
  return detail::conv_geometry(in, spec).out;
}

/// Cross-correlation plus per-channel bias. No activation.
inline Tensor conv3d_fwd(const Tensor& x, const ConvSpec& spec, const ConvParams& p) {
  detail::check_conv_spec(spec, p);
  if (spec.transposed) throw ShapeError("conv3d_fwd called with a transposed spec");
  const detail::ConvGeometry g = detail::conv_geometry(x.shape(), spec);
  const auto maps =
      detail::axis_maps(detail::AxisRule::strided, g.out, g.in, g.kernel, g.stride, g.pad_h, g.pad_w, g.pad_d);
  Tensor y(g.out);
  detail::gather(x, y, maps, p.weights.data(), p.bias.data());
  return y;
}

/// Returns d(loss)/dx and overwrites p.weight_grad / p.bias_grad.
inline Tensor conv3d_bwd(const Tensor& x, const ConvSpec& spec, ConvParams& p, const Tensor& grad_out) {
  detail::check_conv_spec(spec, p);
  const detail::ConvGeometry g = detail::conv_geometry(x.shape(), spec);
  detail::check_grad_shape(grad_out, g.out, "conv3d_bwd");
  p.weight_grad = Tensor(p.weights.shape());
  p.bias_grad = Tensor(p.bias.shape());
  detail::bias_grad(grad_out, p.bias_grad);
  const auto fwd =
      detail::axis_maps(detail::AxisRule::strided, g.out, g.in, g.kernel, g.stride, g.pad_h, g.pad_w, g.pad_d);
  detail::weight_grad(x, grad_out, fwd, p.weight_grad);
  const auto adj =
      detail::axis_maps(detail::AxisRule::dilated, g.in, g.out, g.kernel, g.stride, g.pad_h, g.pad_w, g.pad_d);
  const std::vector<double> wt = detail::transpose_taps(p.weights, spec.c_in, spec.c_out);
  Tensor gx(x.shape());
  detail::gather(grad_out, gx, adj, wt.data(), nullptr);
  return gx;
}

/// Learned up-sampling: each input voxel stamps its weighted kernel at
/// in*S + t. Output extents are exactly input extents times S. This is the
/// adjoint of a valid-padded stride-S convolution whose weight slice for tap
/// t maps channel co -> ci where this layer maps ci -> co.
inline Tensor conv_transpose3d_fwd(const Tensor& x, const ConvSpec& spec, const ConvParams& p) {
  detail::check_conv_spec(spec, p);
  if (!spec.transposed) throw ShapeError("conv_transpose3d_fwd needs a transposed spec");
  const Shape5 out_shape = conv_output_shape(x.shape(), spec);
  const auto maps = detail::axis_maps(detail::AxisRule::dilated, out_shape, x.shape(), spec.kernel, spec.stride, 0, 0, 0);
  Tensor y(out_shape);
  detail::gather(x, y, maps, p.weights.data(), p.bias.data());
  return y;
}

inline Tensor conv_transpose3d_bwd(const Tensor& x, const ConvSpec& spec, ConvParams& p, const Tensor& grad_out) {
  detail::check_conv_spec(spec, p);
  const Shape5 out_shape = conv_output_shape(x.shape(), spec);
  detail::check_grad_shape(grad_out, out_shape, "conv_transpose3d_bwd");
  p.weight_grad = Tensor(p.weights.shape());
  p.bias_grad = Tensor(p.bias.shape());
  detail::bias_grad(grad_out, p.bias_grad);
  const auto fwd = detail::axis_maps(detail::AxisRule::dilated, out_shape, x.shape(), spec.kernel, spec.stride, 0, 0, 0);
  detail::weight_grad(x, grad_out, fwd, p.weight_grad);
  const auto adj = detail::axis_maps(detail::AxisRule::strided, x.shape(), out_shape, spec.kernel, spec.stride, 0, 0, 0);
  const std::vector<double> wt = detail::transpose_taps(p.weights, spec.c_in, spec.c_out);
  Tensor gx(x.shape());
  detail::gather(grad_out, gx, adj, wt.data(), nullptr);
  return gx;
}

/// Swaps the channel roles of a kernel bank: slice [t][a][b] becomes
/// [t][b][a]. Turns transposed-layer weights into the weights of the strided
/// convolution it is the adjoint of (and back).
inline Tensor swap_kernel_channels(const Tensor& weights, std::size_t c_in, std::size_t c_out) {
  const Shape5& s = weights.shape();
  if (s.c != c_in * c_out) throw ShapeError("kernel bank channel count mismatch");
  Tensor out(s);
  const std::size_t taps = s.h * s.w * s.d;
  for (std::size_t t = 0; t < taps; ++t)
    for (std::size_t a = 0; a < c_in; ++a)
      for (std::size_t b = 0; b < c_out; ++b)
        out[(t * c_out + b) * c_in + a] = weights[(t * c_in + a) * c_out + b];
  return out;
}

// ---------------------------------------------------------------------------
// Max pooling

struct PoolResult {
  Tensor out;
  /// Linear input index of the winning voxel for every output element.
  std::vector<std::size_t> argmax;
  Shape5 input_shape;
};

/// Ties go to the first voxel in (h, w, d) scan order of the window.
inline PoolResult maxpool3d_fwd(const Tensor& x, std::size_t k = 2, std::size_t s = 2) {
  const Shape5& in = x.shape();
  if (k == 0 || s == 0) throw ShapeError("pooling extent and stride must be positive");
  if (in.h < k || in.w < k || in.d < k)
    throw ShapeError("pooling window " + std::to_string(k) + " larger than input " + in.str());
  const Shape5 os{in.n, (in.h - k) / s + 1, (in.w - k) / s + 1, (in.d - k) / s + 1, in.c};
  PoolResult r{Tensor(os), std::vector<std::size_t>(os.count()), in};
  for (std::size_t n = 0; n < os.n; ++n)
    for (std::size_t oh = 0; oh < os.h; ++oh)
      for (std::size_t ow = 0; ow < os.w; ++ow)
        for (std::size_t od = 0; od < os.d; ++od)
          for (std::size_t c = 0; c < os.c; ++c) {
            std::size_t best = x.index(n, oh * s, ow * s, od * s, c);
            double best_v = x[best];
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j)
                for (std::size_t l = 0; l < k; ++l) {
                  const std::size_t idx = x.index(n, oh * s + i, ow * s + j, od * s + l, c);
                  if (x[idx] > best_v) {
                    best_v = x[idx];
                    best = idx;
                  }
                }
            const std::size_t o = r.out.index(n, oh, ow, od, c);
            r.out[o] = best_v;
            r.argmax[o] = best;
          }
  return r;
}

inline Tensor maxpool3d_bwd(const PoolResult& fwd, const Tensor& grad_out) {
  if (grad_out.size() != fwd.argmax.size() || grad_out.shape() != fwd.out.shape())
    throw ShapeError("maxpool3d_bwd: gradient shape does not match the saved indices");
  Tensor gx(fwd.input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) gx[fwd.argmax[o]] += grad_out[o];
  return gx;
}

// ---------------------------------------------------------------------------
// Instance normalization

struct InstanceNormSaved {
  Tensor xhat;
  /// 1/sqrt(var + eps), one entry per (n, c).
  std::vector<double> inv_std;
  std::vector<double> mean;
  std::vector<double> var;
};

struct InstanceNormResult {
  Tensor out;
  InstanceNormSaved saved;
};

/// Per-(n, c) mean and biased variance over all h*w*d voxels, then
/// gamma * (x - mean) / sqrt(var + eps) + beta.
inline InstanceNormResult instance_norm_fwd(const Tensor& x, const InstanceNormParams& p) {
  const Shape5& s = x.shape();
  if (p.gamma.size() != s.c || p.beta.size() != s.c)
    throw ShapeError("instance norm parameters expect " + std::to_string(p.gamma.size()) + " channels, got " +
                     std::to_string(s.c));
  if (!(p.epsilon > 0.0)) throw UsageError("instance norm epsilon must be positive");
  const std::size_t voxels = s.h * s.w * s.d;
  const std::size_t c = s.c;
  InstanceNormResult r{Tensor(s), {Tensor(s), std::vector<double>(s.n * c), std::vector<double>(s.n * c),
                                   std::vector<double>(s.n * c)}};
  std::vector<double> acc(c);
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* xv = x.data() + n * voxels * c;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t v = 0; v < voxels; ++v)
      for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += xv[v * c + ch];
    for (std::size_t ch = 0; ch < c; ++ch) r.saved.mean[n * c + ch] = acc[ch] / static_cast<double>(voxels);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t v = 0; v < voxels; ++v)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double dv = xv[v * c + ch] - r.saved.mean[n * c + ch];
        acc[ch] += dv * dv;
      }
    for (std::size_t ch = 0; ch < c; ++ch) {
      r.saved.var[n * c + ch] = acc[ch] / static_cast<double>(voxels);
      r.saved.inv_std[n * c + ch] = 1.0 / std::sqrt(r.saved.var[n * c + ch] + p.epsilon);
    }
    double* xh = r.saved.xhat.data() + n * voxels * c;
    double* yv = r.out.data() + n * voxels * c;
    for (std::size_t v = 0; v < voxels; ++v)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = v * c + ch;
        xh[i] = (xv[i] - r.saved.mean[n * c + ch]) * r.saved.inv_std[n * c + ch];
        yv[i] = xh[i] * p.gamma[ch] + p.beta[ch];
      }
  }
  return r;
}

/// Returns d(loss)/dx including the dependence of mean and variance on x;
/// overwrites gamma_grad and beta_grad.
inline Tensor instance_norm_bwd(const InstanceNormSaved& saved, InstanceNormParams& p, const Tensor& grad_out) {
  const Shape5& s = saved.xhat.shape();
  detail::check_grad_shape(grad_out, s, "instance_norm_bwd");
  const std::size_t voxels = s.h * s.w * s.d;
  const std::size_t c = s.c;
  const double m = static_cast<double>(voxels);
  p.gamma_grad = Tensor(p.gamma.shape());
  p.beta_grad = Tensor(p.beta.shape());
  Tensor gx(s);
  std::vector<double> sum_g(c), sum_gx(c);
  for (std::size_t n = 0; n < s.n; ++n) {
    const double* go = grad_out.data() + n * voxels * c;
    const double* xh = saved.xhat.data() + n * voxels * c;
    std::fill(sum_g.begin(), sum_g.end(), 0.0);
    std::fill(sum_gx.begin(), sum_gx.end(), 0.0);
    for (std::size_t v = 0; v < voxels; ++v)
      for (std::size_t ch = 0; ch < c; ++ch) {
        sum_g[ch] += go[v * c + ch];
        sum_gx[ch] += go[v * c + ch] * xh[v * c + ch];
      }
    for (std::size_t ch = 0; ch < c; ++ch) {
      p.beta_grad[ch] += sum_g[ch];
      p.gamma_grad[ch] += sum_gx[ch];
    }
    double* gxv = gx.data() + n * voxels * c;
    for (std::size_t v = 0; v < voxels; ++v)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t i = v * c + ch;
        // d xhat = g*gamma; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        const double scale = p.gamma[ch] * saved.inv_std[n * c + ch];
        gxv[i] = scale * (go[i] - sum_g[ch] / m - xh[i] * sum_gx[ch] / m);
      }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// ReLU, concatenation, residual add

inline Tensor relu_fwd(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

/// Gradient at exactly zero is taken as zero.
inline Tensor relu_bwd(const Tensor& x, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "relu_bwd");
  Tensor gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return gx;
}

inline Tensor concat_channels_fwd(const Tensor& a, const Tensor& b) {
  const Shape5& sa = a.shape();
  const Shape5& sb = b.shape();
  if (!sa.same_spatial(sb)) throw ShapeError("concat of mismatched shapes " + sa.str() + " and " + sb.str());
  Tensor out(Shape5{sa.n, sa.h, sa.w, sa.d, sa.c + sb.c});
  const std::size_t voxels = sa.n * sa.h * sa.w * sa.d;
  for (std::size_t v = 0; v < voxels; ++v) {
    double* dst = out.data() + v * (sa.c + sb.c);
    std::copy(a.data() + v * sa.c, a.data() + (v + 1) * sa.c, dst);
    std::copy(b.data() + v * sb.c, b.data() + (v + 1) * sb.c, dst + sa.c);
  }
  return out;
}

struct ConcatGrad {
  Tensor a;
  Tensor b;
};

inline ConcatGrad concat_channels_bwd(const Shape5& a_shape, const Shape5& b_shape, const Tensor& grad_out) {
  if (!a_shape.same_spatial(b_shape) || !a_shape.same_spatial(grad_out.shape()) ||
      grad_out.shape().c != a_shape.c + b_shape.c)
    throw ShapeError("concat_channels_bwd: gradient shape " + grad_out.shape().str() + " does not split into " +
                     a_shape.str() + " and " + b_shape.str());
  ConcatGrad g{Tensor(a_shape), Tensor(b_shape)};
  const std::size_t voxels = a_shape.n * a_shape.h * a_shape.w * a_shape.d;
  const std::size_t c = a_shape.c + b_shape.c;
  for (std::size_t v = 0; v < voxels; ++v) {
    const double* src = grad_out.data() + v * c;
    std::copy(src, src + a_shape.c, g.a.data() + v * a_shape.c);
    std::copy(src + a_shape.c, src + c, g.b.data() + v * b_shape.c);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy over two channels (0 = background, 1 = foreground)

/// Expands a (n,h,w,d,1) {0,1} label volume into a 2-channel one-hot tensor.
inline Tensor one_hot(const Tensor& labels) {
  const Shape5& s = labels.shape();
  if (s.c != 1) throw ShapeError("one_hot expects a single-channel label tensor");
  Tensor out(Shape5{s.n, s.h, s.w, s.d, 2});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = labels[i];
    if (v != 0.0 && v != 1.0) throw DataError("label value " + std::to_string(v) + " is not binary");
    out[2 * i + (v == 1.0 ? 1 : 0)] = 1.0;
  }
  return out;
}

struct XentResult {
  double loss = 0.0;
  Tensor probs;
};

/// Mean over voxels of -(y log p + (1-y) log(1-p)) where p is the softmax
/// foreground probability.
inline XentResult softmax_xent_fwd(const Tensor& logits, const Tensor& labels) {
  require_same_shape(logits, labels, "softmax_xent_fwd");
  if (logits.shape().c != 2) throw ShapeError("softmax cross-entropy expects 2 channels");
  const std::size_t voxels = logits.size() / 2;
  XentResult r{0.0, Tensor(logits.shape())};
  double total = 0.0;
  for (std::size_t v = 0; v < voxels; ++v) {
    const double y0 = labels[2 * v];
    const double y1 = labels[2 * v + 1];
    if (!((y0 == 1.0 && y1 == 0.0) || (y0 == 0.0 && y1 == 1.0)))
      throw DataError("labels are not one-hot at voxel " + std::to_string(v));
    const double z0 = logits[2 * v];
    const double z1 = logits[2 * v + 1];
    const double zmax = std::max(z0, z1);
    const double lse = zmax + std::log(std::exp(z0 - zmax) + std::exp(z1 - zmax));
    const double logp1 = z1 - lse;
    const double logp0 = z0 - lse;
    r.probs[2 * v] = std::exp(logp0);
    r.probs[2 * v + 1] = std::exp(logp1);
    total -= y1 * logp1 + y0 * logp0;
  }
  r.loss = total / static_cast<double>(voxels);
  if (!std::isfinite(r.loss)) throw NumericError("non-finite cross-entropy loss");
  return r;
}

/// d(mean loss)/d(logits) = (p - y) / V.
inline Tensor softmax_xent_bwd(const Tensor& probs, const Tensor& labels) {
  require_same_shape(probs, labels, "softmax_xent_bwd");
  const double voxels = static_cast<double>(probs.size() / 2);
  Tensor g(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = (probs[i] - labels[i]) / voxels;
  return g;
}

// ---------------------------------------------------------------------------
// Separable decomposition check

/// Largest absolute difference between a full 3x3x3 convolution with the
/// rank-1 kernel u (3x3, row-major h then w) times v (3, along depth) and
/// the 3x3x1 convolution with u followed by the 1x1x3 convolution with v.
/// Single channel, zero bias, same padding.
inline double separable_pair_max_diff(const Tensor& x, std::span<const double> u, std::span<const double> v) {
  if (u.size() != 9 || v.size() != 3) throw ShapeError("separable check expects a 3x3 plane and a length-3 line");
  if (x.shape().c != 1) throw ShapeError("separable check expects a single-channel input");
  const ConvSpec full{{3, 3, 3}, 1, 1, 1, Padding::same, false};
  const ConvSpec plane{{3, 3, 1}, 1, 1, 1, Padding::same, false};
  const ConvSpec line{{1, 1, 3}, 1, 1, 1, Padding::same, false};
  ConvParams pf = ConvParams::zeros(full);
  ConvParams pp = ConvParams::zeros(plane);
  ConvParams pl = ConvParams::zeros(line);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      pp.weights[i * 3 + j] = u[i * 3 + j];
      for (std::size_t l = 0; l < 3; ++l) pf.weights[(i * 3 + j) * 3 + l] = u[i * 3 + j] * v[l];
    }
  for (std::size_t l = 0; l < 3; ++l) pl.weights[l] = v[l];
  const Tensor direct = conv3d_fwd(x, full, pf);
  const Tensor staged = conv3d_fwd(conv3d_fwd(x, plane, pp), line, pl);
  double worst = 0.0;
  for (std::size_t i = 0; i < direct.size(); ++i) worst = std::max(worst, std::abs(direct[i] - staged[i]));
  return worst;
}

inline bool separable_pair_equivalence_check(const Tensor& x, std::span<const double> u, std::span<const double> v,
                                             double tolerance = 1e-10) {
  return separable_pair_max_diff(x, u, v) <= tolerance;
}

}  // namespace znet::ops
