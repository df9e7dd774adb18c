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
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "znet/autograd.hpp"
#include "znet/models.hpp"
#include "znet/ops.hpp"
#include "znet/tensor.hpp"

namespace znet::gradcheck {

inline constexpr double kStep = 1e-5;
inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kNetTolerance = 1e-3;
/// Denominator floor for the relative error, so entries whose true gradient
/// is zero are compared at round-off scale instead of dividing by ~0.
inline constexpr double kRelFloor = 1e-6;

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
}

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = kOpTolerance;
  std::size_t probes = 0;
  /// Probes skipped because a kink fell inside the difference stencil.
  std::size_t kinks = 0;
  bool pass() const { return probes > 0 && std::isfinite(max_rel_error) && max_rel_error < tolerance; }
};

struct Options {
  std::uint64_t seed = 0;
  /// Negative control: perturbs every analytic gradient by 1% so the suite
  /// must report failures.
  bool inject_fault = false;
};

namespace detail {

using Rng = std::mt19937_64;

inline Tensor random_tensor(const Shape5& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = u(rng);
  return t;
}

/// Values bounded away from zero, for ReLU.
inline Tensor away_from_zero(const Shape5& s, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(s);
  for (double& v : t.values()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

/// A shuffled ladder of distinct values 0.01 apart, so no pooling window has
/// a near-tie that a finite-difference step could flip.
inline Tensor distinct_values(const Shape5& s, Rng& rng) {
  Tensor t(s);
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(order[i]) - 0.5;
  return t;
}

inline double central(const std::function<double()>& objective, double& slot, double step) {
  const double saved = slot;
  slot = saved + step;
  const double up = objective();
  slot = saved - step;
  const double down = objective();
  slot = saved;
  return (up - down) / (2.0 * step);
}

struct Probe {
  double value = 0.0;
  bool kink = false;
};

/// Central difference at kStep. On a smooth stretch the estimate at kStep/10
/// agrees to O(h^2); a disagreement means a ReLU or pooling kink lies inside
/// the stencil, and the probe is flagged instead of compared.
inline Probe numeric(const std::function<double()>& objective, double& slot) {
  const double coarse = central(objective, slot, kStep);
  const double fine = central(objective, slot, kStep / 10.0);
  return {coarse, rel_error(coarse, fine) > 0.1 * kOpTolerance};
}

/// Compares every entry (or `probes` random entries when nonzero) of
/// `analytic` against central differences of `objective` wrt `target`.
/// With `skip_kinks`, probes that straddle a kink are skipped and replaced.
inline void compare(CheckResult& r, const std::function<double()>& objective, Tensor& target, const Tensor& analytic,
                    const Options& opt, Rng& rng, std::size_t probes = 0, bool skip_kinks = false) {
  std::vector<std::size_t> idx(target.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (probes > 0) std::shuffle(idx.begin(), idx.end(), rng);
  const double fault = opt.inject_fault ? 1.01 : 1.0;
  std::size_t done = 0;
  for (std::size_t i : idx) {
    if (probes > 0 && done == probes) break;
    const Probe n = skip_kinks ? numeric(objective, target[i]) : Probe{central(objective, target[i], kStep)};
    if (n.kink) {
      ++r.kinks;
      continue;
    }
    const double a = analytic[i] * fault + (opt.inject_fault ? 1e-3 : 0.0);
    r.max_rel_error = std::max(r.max_rel_error, rel_error(a, n.value));
    ++r.probes;
    ++done;
  }
}

/// Objective sum(r * out) used for op-level checks; its gradient wrt the op
/// output is r itself.
inline double weighted_sum(const Tensor& out, const Tensor& r) { return dot(out, r); }

inline CheckResult check_conv(const std::string& name, const Shape5& in, ops::ConvSpec spec, const Options& opt,
                              Rng& rng) {
  CheckResult r{name};
  Tensor x = random_tensor(in, rng);
  ops::ConvParams p = ops::ConvParams::zeros(spec);
  p.weights = random_tensor(p.weights.shape(), rng);
  p.bias = random_tensor(p.bias.shape(), rng);
  auto fwd = [&] {
    return spec.transposed ? ops::conv_transpose3d_fwd(x, spec, p) : ops::conv3d_fwd(x, spec, p);
  };
  const Tensor weights = random_tensor(fwd().shape(), rng);
  const Tensor gx = spec.transposed ? ops::conv_transpose3d_bwd(x, spec, p, weights)
                                    : ops::conv3d_bwd(x, spec, p, weights);
  const Tensor gw = p.weight_grad, gb = p.bias_grad;
  const std::function<double()> obj = [&] { return weighted_sum(fwd(), weights); };
  compare(r, obj, x, gx, opt, rng);
  compare(r, obj, p.weights, gw, opt, rng);
  compare(r, obj, p.bias, gb, opt, rng);
  return r;
}

inline CheckResult check_maxpool(const Options& opt, Rng& rng) {
  CheckResult r{"maxpool 2x2x2/2"};
  Tensor x = distinct_values(Shape5{2, 4, 6, 4, 2}, rng);
  const ops::PoolResult fwd = ops::maxpool3d_fwd(x);
  const Tensor w = random_tensor(fwd.out.shape(), rng);
  const Tensor gx = ops::maxpool3d_bwd(fwd, w);
  compare(r, [&] { return weighted_sum(ops::maxpool3d_fwd(x).out, w); }, x, gx, opt, rng);
  return r;
}

inline CheckResult check_instance_norm(const Options& opt, Rng& rng) {
  CheckResult r{"instance norm"};
  Tensor x = random_tensor(Shape5{2, 3, 4, 2, 3}, rng, -2.0, 2.0);
  ops::InstanceNormParams p = ops::InstanceNormParams::identity(3);
  p.gamma = random_tensor(p.gamma.shape(), rng, 0.5, 1.5);
  p.beta = random_tensor(p.beta.shape(), rng);
  const ops::InstanceNormResult fwd = ops::instance_norm_fwd(x, p);
  const Tensor w = random_tensor(fwd.out.shape(), rng);
  const Tensor gx = ops::instance_norm_bwd(fwd.saved, p, w);
  const Tensor gg = p.gamma_grad, gb = p.beta_grad;
  const std::function<double()> obj = [&] { return weighted_sum(ops::instance_norm_fwd(x, p).out, w); };
  compare(r, obj, x, gx, opt, rng);
  compare(r, obj, p.gamma, gg, opt, rng);
  compare(r, obj, p.beta, gb, opt, rng);
  return r;
}

inline CheckResult check_relu(const Options& opt, Rng& rng) {
  CheckResult r{"relu"};
  Tensor x = away_from_zero(Shape5{1, 3, 3, 3, 2}, rng);
  const Tensor w = random_tensor(x.shape(), rng);
  const Tensor gx = ops::relu_bwd(x, w);
  compare(r, [&] { return weighted_sum(ops::relu_fwd(x), w); }, x, gx, opt, rng);
  return r;
}

inline CheckResult check_concat(const Options& opt, Rng& rng) {
  CheckResult r{"concat"};
  Tensor a = random_tensor(Shape5{2, 2, 3, 2, 2}, rng);
  Tensor b = random_tensor(Shape5{2, 2, 3, 2, 3}, rng);
  const Tensor w = random_tensor(Shape5{2, 2, 3, 2, 5}, rng);
  const ops::ConcatGrad g = ops::concat_channels_bwd(a.shape(), b.shape(), w);
  const std::function<double()> obj = [&] { return weighted_sum(ops::concat_channels_fwd(a, b), w); };
  compare(r, obj, a, g.a, opt, rng);
  compare(r, obj, b, g.b, opt, rng);
  return r;
}

inline CheckResult check_add(const Options& opt, Rng& rng) {
  CheckResult r{"residual add"};
  Tensor a = random_tensor(Shape5{1, 2, 3, 2, 2}, rng);
  Tensor b = random_tensor(a.shape(), rng);
  const Tensor w = random_tensor(a.shape(), rng);
  const std::function<double()> obj = [&] { return weighted_sum(elementwise(a, b, Elementwise::add), w); };
  compare(r, obj, a, w, opt, rng);
  compare(r, obj, b, w, opt, rng);
  return r;
}

inline Tensor random_one_hot(const Shape5& logits_shape, Rng& rng) {
  Tensor labels(Shape5{logits_shape.n, logits_shape.h, logits_shape.w, logits_shape.d, 1});
  std::bernoulli_distribution fg(0.4);
  for (double& v : labels.values()) v = fg(rng) ? 1.0 : 0.0;
  return ops::one_hot(labels);
}

inline CheckResult check_xent(const Options& opt, Rng& rng) {
  CheckResult r{"softmax cross-entropy"};
  Tensor z = random_tensor(Shape5{2, 3, 3, 2, 2}, rng, -3.0, 3.0);
  const Tensor y = random_one_hot(z.shape(), rng);
  const ops::XentResult fwd = ops::softmax_xent_fwd(z, y);
  const Tensor g = ops::softmax_xent_bwd(fwd.probs, y);
  compare(r, [&] { return ops::softmax_xent_fwd(z, y).loss; }, z, g, opt, rng);
  return r;
}

}  // namespace detail

inline Shape5 tiny_input_shape() { return Shape5{1, 8, 8, 4, 1}; }

inline models::ArchConfig tiny_arch(const std::string& name) { return models::parse_arch(name, 2, 2); }

/// Loss gradient of a whole 2-level network at 20 random parameter scalars
/// plus 20 input voxels.
inline CheckResult check_network(const std::string& arch, const Options& opt) {
  std::uint64_t salt = 0;
  for (char ch : arch) salt = salt * 131u + static_cast<unsigned char>(ch);
  detail::Rng rng(opt.seed * 7919u + salt);
  CheckResult r{"network " + arch, 0.0, kNetTolerance};
  const ModelGraph g = compile(models::build(tiny_arch(arch)), tiny_input_shape());
  ParamStore params = init_params(g, opt.seed);
  Tensor x = detail::random_tensor(tiny_input_shape(), rng, 0.0, 1.0);
  const Tensor y = detail::random_one_hot(g.output().out_shape, rng);
  auto loss = [&] { return ops::softmax_xent_fwd(forward(g, params, x).logits, y).loss; };

  ForwardResult fwd = forward(g, params, x);
  const ops::XentResult xent = ops::softmax_xent_fwd(fwd.logits, y);
  const Tensor gx = backward(g, params, fwd.tape, ops::softmax_xent_bwd(xent.probs, y));

  std::vector<ParamTensor> tensors = params.tensors();
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  for (std::size_t t = 0; t < tensors.size(); ++t)
    for (std::size_t i = 0; i < tensors[t].value->size(); ++i) slots.emplace_back(t, i);
  std::shuffle(slots.begin(), slots.end(), rng);
  const double fault = opt.inject_fault ? 1.01 : 1.0;
  for (std::size_t k = 0; k < slots.size() && r.probes < 20; ++k) {
    const auto [t, i] = slots[k];
    const detail::Probe n = detail::numeric(loss, (*tensors[t].value)[i]);
    if (n.kink) {
      ++r.kinks;
      continue;
    }
    const double a = (*tensors[t].grad)[i] * fault + (opt.inject_fault ? 1e-3 : 0.0);
    r.max_rel_error = std::max(r.max_rel_error, rel_error(a, n.value));
    ++r.probes;
  }
  detail::compare(r, loss, x, gx, opt, rng, 20, true);
  return r;
}

inline std::vector<CheckResult> run_suite(const Options& opt) {
  using ops::ConvSpec;
  using ops::Padding;
  detail::Rng rng(opt.seed);
  std::vector<CheckResult> out;
  const Shape5 in{2, 5, 6, 4, 2};
  out.push_back(detail::check_conv("conv 3x3x3", in, ConvSpec{{3, 3, 3}, 1, 2, 3, Padding::same, false}, opt, rng));
  out.push_back(detail::check_conv("conv 3x3x1", in, ConvSpec{{3, 3, 1}, 1, 2, 3, Padding::same, false}, opt, rng));
  out.push_back(
      detail::check_conv("conv 1x1xFULL", in, ConvSpec{{1, 1, 4}, 1, 2, 3, Padding::same, false}, opt, rng));
  out.push_back(detail::check_conv("conv 5x5x5", Shape5{1, 5, 5, 5, 1},
                                   ConvSpec{{5, 5, 5}, 1, 1, 2, Padding::same, false}, opt, rng));
  out.push_back(detail::check_conv("conv 3x3x3 stride 2", Shape5{2, 6, 5, 4, 2},
                                   ConvSpec{{3, 3, 3}, 2, 2, 3, Padding::same, false}, opt, rng));
  out.push_back(detail::check_conv("conv 2x2x2 stride 2", Shape5{2, 4, 6, 4, 2},
                                   ConvSpec{{2, 2, 2}, 2, 2, 3, Padding::valid, false}, opt, rng));
  out.push_back(detail::check_conv("transposed conv 2x2x2 stride 2", Shape5{2, 2, 3, 2, 3},
                                   ConvSpec{{2, 2, 2}, 2, 3, 2, Padding::valid, true}, opt, rng));
  out.push_back(detail::check_maxpool(opt, rng));
  out.push_back(detail::check_instance_norm(opt, rng));
  out.push_back(detail::check_relu(opt, rng));
  out.push_back(detail::check_concat(opt, rng));
  out.push_back(detail::check_add(opt, rng));
  out.push_back(detail::check_xent(opt, rng));
  for (const std::string& arch : models::arch_names()) out.push_back(check_network(arch, opt));
  return out;
}

}  // namespace znet::gradcheck
