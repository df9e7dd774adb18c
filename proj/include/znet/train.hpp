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
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "znet/autograd.hpp"
#include "znet/data.hpp"
#include "znet/error.hpp"
#include "znet/metrics.hpp"
#include "znet/models.hpp"
#include "znet/ops.hpp"
#include "znet/tensor.hpp"

namespace znet::train {

/// Initial rates tried by the learning-rate sweep.
inline const std::vector<double>& sweep_rates() {
  static const std::vector<double> rates{0.1, 0.05, 0.01, 0.005};
  return rates;
}

struct TrainConfig {
  double lr0 = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 4;
  std::size_t batch_size = 2;
  std::uint64_t seed = 0;
  std::string arch = "zunet-v2";
  std::size_t levels = 3;
  std::size_t base_channels = 8;
  std::string policy = "patch512";
  /// Adds the 90/180/270 degree rotations of every training patch.
  bool augment = true;
  /// Worker threads for evaluation; results do not depend on it.
  std::size_t threads = 1;

  void validate() const {
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw UsageError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
    if (epochs < 1) throw UsageError("epochs must be at least 1");
    if (batch_size < 1) throw UsageError("batch size must be at least 1");
    if (threads < 1) throw UsageError("threads must be at least 1");
    models::parse_arch(arch, levels, base_channels).validate();
  }
};

struct IterationRecord {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double val_iou = 0.0;
};

struct TimingRecord {
  std::size_t iterations = 0;
  double seconds = 0.0;
};

struct RunLog {
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;
  /// Wall-clock per block of 100 iterations; not part of the deterministic log.
  std::vector<TimingRecord> timing;

  void append(const RunLog& o) {
    iterations.insert(iterations.end(), o.iterations.begin(), o.iterations.end());
    epochs.insert(epochs.end(), o.epochs.begin(), o.epochs.end());
    timing.insert(timing.end(), o.timing.begin(), o.timing.end());
  }

  /// Mean training loss of each epoch, in epoch order.
  std::vector<double> epoch_mean_loss() const {
    std::vector<double> sums, counts;
    for (const auto& r : iterations) {
      if (sums.size() < r.epoch) {
        sums.resize(r.epoch, 0.0);
        counts.resize(r.epoch, 0.0);
      }
      sums[r.epoch - 1] += r.loss;
      counts[r.epoch - 1] += 1.0;
    }
    for (std::size_t i = 0; i < sums.size(); ++i) sums[i] = counts[i] > 0 ? sums[i] / counts[i] : 0.0;
    return sums;
  }
};

/// Epoch 1 uses lr0, epochs 2-4 use lr0/2, later epochs lr0/20 (the /10
/// drop applies to the already halved rate).
inline double lr_at(std::size_t epoch, double lr0) {
  if (epoch <= 1) return lr0;
  if (epoch <= 4) return lr0 / 2.0;
  return lr0 / 20.0;
}

// ---------------------------------------------------------------------------
// SGD with classical momentum: v <- m*v + g; w <- w - lr*v

struct SgdState {
  std::vector<Tensor> velocity;
};

inline void sgd_step(ParamStore& params, SgdState& state, double lr, double momentum) {
  std::vector<ParamTensor> tensors = params.tensors();
  if (state.velocity.empty())
    for (const auto& t : tensors) state.velocity.emplace_back(t.value->shape());
  if (state.velocity.size() != tensors.size()) throw ShapeError("optimizer state does not match the parameters");
  for (const auto& t : tensors)
    if (!t.grad->all_finite()) throw NumericError("non-finite gradient in " + t.name);
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    Tensor& w = *tensors[k].value;
    const Tensor& g = *tensors[k].grad;
    Tensor& v = state.velocity[k];
    if (v.shape() != w.shape()) throw ShapeError("optimizer state shape mismatch for " + tensors[k].name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      w[i] -= lr * v[i];
    }
  }
  ++params.version;
}

// ---------------------------------------------------------------------------
// Datasets

/// One phantom or scan: intensity-normalized image and binary label, both
/// (1, Y, X, L, 1).
struct Case {
  std::string id;
  Tensor image;
  Tensor label;
  data::VolumeMeta meta;
};

inline std::string image_header(const std::string& dir, const std::string& id) {
  return (std::filesystem::path(dir) / (id + "_image.zvol.json")).string();
}
inline std::string label_header(const std::string& dir, const std::string& id) {
  return (std::filesystem::path(dir) / (id + "_label.zvol.json")).string();
}

inline Case load_case(const std::string& dir, const std::string& id) {
  const data::Volume img = data::read_volume(image_header(dir, id));
  const data::Volume lab = data::read_volume(label_header(dir, id));
  if (img.meta.kind != data::VolumeKind::image || lab.meta.kind != data::VolumeKind::label)
    throw DataError("case '" + id + "' has mismatched volume kinds");
  if (img.voxels.shape() != lab.voxels.shape()) throw DataError("case '" + id + "' image and label shapes differ");
  return {id, data::normalize_intensity(img.voxels), lab.voxels, img.meta};
}

inline Case make_case(std::string id, const data::Volume& image, const data::Volume& label) {
  if (image.voxels.shape() != label.voxels.shape()) throw DataError("case '" + id + "' image and label shapes differ");
  return {std::move(id), data::normalize_intensity(image.voxels), label.voxels, image.meta};
}

// ---------------------------------------------------------------------------
// Training state

struct TrainState {
  TrainConfig config;
  data::PatchPolicy policy;
  ModelGraph graph;
  ParamStore params;
  SgdState sgd;
  std::size_t iteration = 0;
};

inline Shape5 patch_input_shape(const data::PatchPolicy& policy) {
  return Shape5{1, policy.patch.y, policy.patch.x, policy.patch.z, 1};
}

/// Compiles the configured architecture for the policy's patch shape and
/// initializes its parameters from the config seed.
inline TrainState make_state(const TrainConfig& cfg, const data::VolumeMeta& meta) {
  cfg.validate();
  TrainState st;
  st.config = cfg;
  st.policy = data::policy_by_name(cfg.policy, meta);
  const auto arch = models::parse_arch(cfg.arch, cfg.levels, cfg.base_channels);
  st.graph = compile(models::build(arch), patch_input_shape(st.policy));
  st.params = init_params(st.graph, cfg.seed);
  return st;
}

namespace detail {

struct SampleRef {
  std::size_t case_index;
  std::size_t origin;
  int rotation;
};

inline std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5a4e4554u};
  std::uint64_t out[1];
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  out[0] = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out[0];
}

inline void copy_into_batch(Tensor& batch, std::size_t slot, const Tensor& item) {
  std::copy(item.data(), item.data() + item.size(), batch.data() + slot * item.size());
}

}  // namespace detail

/// One pass over every planned (and optionally rotated) training patch in a
/// seeded shuffle order: forward, loss, backward and an SGD step per batch.
inline RunLog train_epoch(TrainState& st, const std::vector<Case>& cases, std::size_t epoch) {
  if (cases.empty()) throw UsageError("no training cases");
  const TrainConfig& cfg = st.config;
  std::vector<data::PatchPlan> plans;
  std::vector<detail::SampleRef> samples;
  const int rotations = cfg.augment ? 4 : 1;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    plans.push_back(data::plan_patches(cases[c].meta, st.policy, data::Phase::train));
    for (std::size_t o = 0; o < plans.back().size(); ++o)
      for (int r = 0; r < rotations; ++r) samples.push_back({c, o, r});
  }
  std::mt19937_64 rng(detail::epoch_seed(cfg.seed, epoch));
  for (std::size_t i = samples.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(samples[i - 1], samples[pick(rng)]);
  }

  RunLog log;
  const double lr = lr_at(epoch, cfg.lr0);
  const Shape5 item = patch_input_shape(st.policy);
  auto block_start = std::chrono::steady_clock::now();
  for (std::size_t start = 0; start < samples.size(); start += cfg.batch_size) {
    const std::size_t n = std::min(cfg.batch_size, samples.size() - start);
    Tensor x(with_batch(item, n));
    Tensor y(Shape5{n, item.h, item.w, item.d, 2});
    for (std::size_t k = 0; k < n; ++k) {
      const auto& s = samples[start + k];
      const Case& cs = cases[s.case_index];
      Tensor img = data::extract(cs.image, plans[s.case_index], s.origin);
      Tensor lab = data::extract(cs.label, plans[s.case_index], s.origin);
      if (s.rotation != 0) {
        img = rot90_z(img, s.rotation);
        lab = rot90_z(lab, s.rotation);
      }
      detail::copy_into_batch(x, k, img);
      detail::copy_into_batch(y, k, ops::one_hot(lab));
    }
    ForwardResult fwd = forward(st.graph, st.params, x);
    const ops::XentResult xent = ops::softmax_xent_fwd(fwd.logits, y);
    if (!std::isfinite(xent.loss))
      throw NumericError("non-finite loss at iteration " + std::to_string(st.iteration + 1));
    backward(st.graph, st.params, fwd.tape, ops::softmax_xent_bwd(xent.probs, y));
    sgd_step(st.params, st.sgd, lr, cfg.momentum);
    ++st.iteration;
    log.iterations.push_back({st.iteration, epoch, lr, xent.loss});
    if (st.iteration % 100 == 0) {
      const auto now = std::chrono::steady_clock::now();
      log.timing.push_back({st.iteration, std::chrono::duration<double>(now - block_start).count()});
      block_start = now;
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// Inference and evaluation

/// Softmax class probabilities of every eval patch, stitched back into a
/// (1, Y, X, L, 2) volume.
inline Tensor predict_volume(const ModelGraph& graph, const ParamStore& params, const Tensor& image,
                             const data::VolumeMeta& meta, const data::PatchPolicy& policy) {
  const data::PatchPlan plan = data::plan_patches(meta, policy, data::Phase::eval);
  std::vector<Tensor> preds;
  preds.reserve(plan.size());
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const Tensor patch = data::extract(image, plan, i);
    const Tensor logits = forward(graph, params, patch).logits;
    Tensor probs(logits.shape());
    for (std::size_t v = 0; v < logits.size() / 2; ++v) {
      const double z0 = logits[2 * v], z1 = logits[2 * v + 1];
      const double m = std::max(z0, z1);
      const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
      probs[2 * v] = e0 / (e0 + e1);
      probs[2 * v + 1] = e1 / (e0 + e1);
    }
    preds.push_back(std::move(probs));
  }
  return data::stitch(plan, preds);
}

struct VolumeScore {
  std::string id;
  metrics::ConfusionCounts counts;
};

struct EvalResult {
  double mean_iou = 0.0;
  std::vector<VolumeScore> volumes;
};

/// Mean foreground IoU over volumes of the stitched, binarized predictions.
inline EvalResult evaluate(const ModelGraph& graph, const ParamStore& params, const std::vector<Case>& cases,
                           const data::PatchPolicy& policy, std::size_t threads = 1) {
  if (cases.empty()) throw UsageError("evaluation needs at least one volume");
  EvalResult r;
  r.volumes.resize(cases.size());
  auto score = [&](std::size_t i) {
    const Tensor probs = predict_volume(graph, params, cases[i].image, cases[i].meta, policy);
    r.volumes[i] = {cases[i].id, metrics::confusion(cases[i].label, metrics::binarize(probs))};
  };
  if (threads <= 1 || cases.size() == 1) {
    for (std::size_t i = 0; i < cases.size(); ++i) score(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = next++; i < cases.size(); i = next++) score(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  double sum = 0.0;
  for (const auto& v : r.volumes) sum += v.counts.iou();
  r.mean_iou = sum / static_cast<double>(cases.size());
  return r;
}

// ---------------------------------------------------------------------------
// Whole runs

struct TrainResult {
  RunLog log;
  TrainState state;
  /// Parameters of the epoch with the best validation IoU (the last epoch
  /// when there is no validation set).
  ParamStore best;
  std::size_t best_epoch = 0;
  double best_val_iou = std::numeric_limits<double>::quiet_NaN();
};

inline std::string checkpoint_name(std::size_t epoch) { return "epoch_" + std::to_string(epoch) + ".znet"; }

/// Trains for cfg.epochs epochs, validating after each one. With `out_dir`
/// set, writes a checkpoint per epoch plus best.znet.
inline TrainResult train_run(const TrainConfig& cfg, const std::vector<Case>& train_cases,
                             const std::vector<Case>& val_cases, const std::optional<std::string>& out_dir = {}) {
  if (train_cases.empty()) throw UsageError("no training cases");
  TrainResult res{{}, make_state(cfg, train_cases.front().meta), {}, 0, std::numeric_limits<double>::quiet_NaN()};
  for (const Case& c : train_cases)
    if (c.meta.width != train_cases.front().meta.width || c.meta.height != train_cases.front().meta.height)
      throw DataError("all training volumes must share the in-plane size");
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    res.log.append(train_epoch(res.state, train_cases, epoch));
    bool better = false;
    if (!val_cases.empty()) {
      const double v = evaluate(res.state.graph, res.state.params, val_cases, res.state.policy, cfg.threads).mean_iou;
      res.log.epochs.push_back({epoch, v});
      better = res.best_epoch == 0 || v > res.best_val_iou;
      if (better) res.best_val_iou = v;
    } else {
      better = true;
    }
    if (better) {
      res.best = res.state.params;
      res.best_epoch = epoch;
    }
    if (out_dir) {
      save_checkpoint((std::filesystem::path(*out_dir) / checkpoint_name(epoch)).string(), res.state.params);
    }
  }
  if (out_dir) save_checkpoint((std::filesystem::path(*out_dir) / "best.znet").string(), res.best);
  return res;
}

struct SweepEntry {
  double lr0 = 0.0;
  double val_iou = 0.0;
  std::size_t best_epoch = 0;
};

/// Runs every sweep rate and returns the results, best first.
inline std::vector<SweepEntry> lr_sweep(TrainConfig cfg, const std::vector<Case>& train_cases,
                                        const std::vector<Case>& val_cases) {
  std::vector<SweepEntry> out;
  for (double lr : sweep_rates()) {
    cfg.lr0 = lr;
    const TrainResult r = train_run(cfg, train_cases, val_cases);
    out.push_back({lr, r.best_val_iou, r.best_epoch});
  }
  std::stable_sort(out.begin(), out.end(), [](const SweepEntry& a, const SweepEntry& b) { return a.val_iou > b.val_iou; });
  return out;
}

// ---------------------------------------------------------------------------
// CSV output

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_loss_csv(const RunLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "iteration,epoch,lr,loss\n";
  for (const auto& r : log.iterations)
    os << r.iteration << "," << r.epoch << "," << fmt_double(r.lr) << "," << fmt_double(r.loss) << "\n";
}

inline void write_val_csv(const RunLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "epoch,val_iou\n";
  for (const auto& r : log.epochs) os << r.epoch << "," << fmt_double(r.val_iou) << "\n";
}

inline void write_timing_csv(const RunLog& log, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << "iterations,seconds_per_100\n";
  for (const auto& r : log.timing) os << r.iterations << "," << fmt_double(r.seconds) << "\n";
}

}  // namespace znet::train
