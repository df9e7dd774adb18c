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

// Naive reference convolutions. These deliberately share nothing with the
// loops in ops.hpp beyond the parameter structs: every output element is
// computed by a direct sum over all kernel taps and input channels, with
// explicit bounds tests standing in for zero padding.

#include <cstddef>
#include <string>

#include "znet/ops.hpp"
#include "znet/tensor.hpp"

namespace znet::ops {

namespace reference_detail {

inline long long out_len(long long in, long long k, long long stride, bool same) {
  return same ? in / stride : (in - k) / stride + 1;
}

inline long long front_pad(long long k, bool same) { return same ? (k - 1) / 2 : 0; }

inline double weight_at(const ConvParams& p, long long i, long long j, long long l, long long ci, long long co,
                        const ConvSpec& spec) {
  const long long kw = static_cast<long long>(spec.kernel.w);
  const long long kd = static_cast<long long>(spec.kernel.d);
  const long long cin = static_cast<long long>(spec.c_in);
  const long long cout = static_cast<long long>(spec.c_out);
  return p.weights[static_cast<std::size_t>((((i * kw + j) * kd + l) * cin + ci) * cout + co)];
}

}  // namespace reference_detail

/// Direct cross-correlation: y[n,oh,ow,od,co] = b[co] +
/// sum_{i,j,l,ci} x[n, oh*S+i-ph, ow*S+j-pw, od*S+l-pd, ci] * w[i,j,l,ci,co].
inline Tensor conv3d_oracle(const Tensor& x, const ConvSpec& spec, const ConvParams& p) {
  using namespace reference_detail;
  const Shape5& s = x.shape();
  if (s.c != spec.c_in) throw ShapeError("oracle: channel mismatch");
  const bool same = spec.padding == Padding::same;
  const long long S = static_cast<long long>(spec.stride);
  const long long H = static_cast<long long>(s.h), W = static_cast<long long>(s.w), D = static_cast<long long>(s.d);
  const long long kh = static_cast<long long>(spec.kernel.h), kw = static_cast<long long>(spec.kernel.w),
                  kd = static_cast<long long>(spec.kernel.d);
  const long long oh_n = out_len(H, kh, S, same), ow_n = out_len(W, kw, S, same), od_n = out_len(D, kd, S, same);
  if (oh_n < 1 || ow_n < 1 || od_n < 1) throw ShapeError("oracle: kernel larger than input");
  const long long ph = front_pad(kh, same), pw = front_pad(kw, same), pd = front_pad(kd, same);
  Tensor y(Shape5{s.n, static_cast<std::size_t>(oh_n), static_cast<std::size_t>(ow_n),
                  static_cast<std::size_t>(od_n), spec.c_out});
  for (long long n = 0; n < static_cast<long long>(s.n); ++n)
    for (long long oh = 0; oh < oh_n; ++oh)
      for (long long ow = 0; ow < ow_n; ++ow)
        for (long long od = 0; od < od_n; ++od)
          for (long long co = 0; co < static_cast<long long>(spec.c_out); ++co) {
            double acc = p.bias[static_cast<std::size_t>(co)];
            for (long long i = 0; i < kh; ++i)
              for (long long j = 0; j < kw; ++j)
                for (long long l = 0; l < kd; ++l)
                  for (long long ci = 0; ci < static_cast<long long>(spec.c_in); ++ci) {
                    const long long hh = oh * S + i - ph;
                    const long long ww = ow * S + j - pw;
                    const long long dd = od * S + l - pd;
                    if (hh < 0 || hh >= H || ww < 0 || ww >= W || dd < 0 || dd >= D) continue;
                    acc += x.at(static_cast<std::size_t>(n), static_cast<std::size_t>(hh), static_cast<std::size_t>(ww),
                                static_cast<std::size_t>(dd), static_cast<std::size_t>(ci)) *
                           weight_at(p, i, j, l, ci, co, spec);
                  }
            y.at(static_cast<std::size_t>(n), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow),
                 static_cast<std::size_t>(od), static_cast<std::size_t>(co)) = acc;
          }
  return y;
}

/// Direct gather form of the transposed convolution: output voxel p collects
/// x[o] * w[t] over every (o, t) with o*S + t == p.
inline Tensor conv_transpose3d_oracle(const Tensor& x, const ConvSpec& spec, const ConvParams& p) {
  using namespace reference_detail;
  const Shape5& s = x.shape();
  if (s.c != spec.c_in) throw ShapeError("oracle: channel mismatch");
  const long long S = static_cast<long long>(spec.stride);
  const long long kh = static_cast<long long>(spec.kernel.h), kw = static_cast<long long>(spec.kernel.w),
                  kd = static_cast<long long>(spec.kernel.d);
  const Shape5 os{s.n, s.h * spec.stride, s.w * spec.stride, s.d * spec.stride, spec.c_out};
  Tensor y(os);
  for (long long n = 0; n < static_cast<long long>(os.n); ++n)
    for (long long ph = 0; ph < static_cast<long long>(os.h); ++ph)
      for (long long pw = 0; pw < static_cast<long long>(os.w); ++pw)
        for (long long pd = 0; pd < static_cast<long long>(os.d); ++pd)
          for (long long co = 0; co < static_cast<long long>(spec.c_out); ++co) {
            double acc = p.bias[static_cast<std::size_t>(co)];
            for (long long ih = 0; ih < static_cast<long long>(s.h); ++ih)
              for (long long iw = 0; iw < static_cast<long long>(s.w); ++iw)
                for (long long id = 0; id < static_cast<long long>(s.d); ++id) {
                  const long long i = ph - ih * S, j = pw - iw * S, l = pd - id * S;
                  if (i < 0 || i >= kh || j < 0 || j >= kw || l < 0 || l >= kd) continue;
                  for (long long ci = 0; ci < static_cast<long long>(spec.c_in); ++ci)
                    acc += x.at(static_cast<std::size_t>(n), static_cast<std::size_t>(ih), static_cast<std::size_t>(iw),
                                static_cast<std::size_t>(id), static_cast<std::size_t>(ci)) *
                           weight_at(p, i, j, l, ci, co, spec);
                }
            y.at(static_cast<std::size_t>(n), static_cast<std::size_t>(ph), static_cast<std::size_t>(pw),
                 static_cast<std::size_t>(pd), static_cast<std::size_t>(co)) = acc;
          }
  return y;
}

}  // namespace znet::ops
