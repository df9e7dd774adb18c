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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "znet/cli.hpp"
#include "znet/gradcheck.hpp"
#include "znet/metrics.hpp"
#include "znet/models.hpp"
#include "znet/phantom.hpp"
#include "znet/train.hpp"

namespace fs = std::filesystem;
using namespace znet;

namespace {

/// Flags shared by train, predict and eval. Values given on the command
/// line override the config file.
struct RunFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string arch, policy, data_dir, scheme;
  std::size_t levels = 0, base = 0, epochs = 0, batch = 0, fold = 0, threads = 0;
  double lr = 0.0, momentum = 0.0;
  bool augment = false, no_augment = false, lr_sweep = false;
  CLI::Option *o_seed{}, *o_arch{}, *o_policy{}, *o_levels{}, *o_base{}, *o_data{}, *o_scheme{}, *o_fold{},
      *o_epochs{}, *o_batch{}, *o_lr{}, *o_momentum{}, *o_threads{};

  void attach(CLI::App* app, bool training) {
    app->add_option("--config", config, "JSON run config");
    o_seed = app->add_option("--seed", seed, "seed (default: ZNET_SEED or 0)");
    o_arch = app->add_option("--arch", arch, "unet|vnet|zunet-v1|zunet-v2|zvnet-v1|zvnet-v2");
    o_policy = app->add_option("--policy", policy, "patch512|patch128|patch64|cubeN");
    o_levels = app->add_option("--levels", levels, "resolution levels");
    o_base = app->add_option("--base-channels", base, "channels at the first level");
    o_threads = app->add_option("--threads", threads, "evaluation worker threads");
    o_data = app->add_option("--data", data_dir, "directory holding manifest.json and volumes");
    if (!training) return;
    o_scheme = app->add_option("--scheme", scheme, "manifest|two_fold_10_2_8|fixed_36_24");
    o_fold = app->add_option("--fold", fold, "1-based fold index");
    o_epochs = app->add_option("--epochs", epochs, "training epochs");
    o_batch = app->add_option("--batch-size", batch, "patches per SGD step");
    o_lr = app->add_option("--lr", lr, "initial learning rate");
    o_momentum = app->add_option("--momentum", momentum, "SGD momentum");
    app->add_flag("--augment", augment, "add 90/180/270 degree rotations");
    app->add_flag("--no-augment", no_augment, "train on unrotated patches only");
    app->add_flag("--lr-sweep", lr_sweep, "try lr0 in {0.1, 0.05, 0.01, 0.005} and keep the best");
  }

  cli::RunConfig resolve() const {
    cli::RunConfig rc = config.empty() ? cli::config_from_json(nlohmann::json::object())
                                       : cli::config_from_json(cli::read_json_file(config));
    auto given = [](CLI::Option* o) { return o != nullptr && o->count() > 0; };
    if (given(o_seed)) rc.train.seed = seed;
    if (given(o_arch)) rc.train.arch = arch;
    if (given(o_policy)) rc.train.policy = policy;
    if (given(o_levels)) rc.train.levels = levels;
    if (given(o_base)) rc.train.base_channels = base;
    if (given(o_threads)) rc.train.threads = threads;
    if (given(o_data)) rc.data.dir = data_dir;
    if (given(o_scheme)) rc.data.scheme = scheme;
    if (given(o_fold)) rc.data.fold = fold;
    if (given(o_epochs)) rc.train.epochs = epochs;
    if (given(o_batch)) rc.train.batch_size = batch;
    if (given(o_lr)) rc.train.lr0 = lr;
    if (given(o_momentum)) rc.train.momentum = momentum;
    if (augment && no_augment) throw UsageError("--augment and --no-augment are exclusive");
    if (augment) rc.train.augment = true;
    if (no_augment) rc.train.augment = false;
    if (lr_sweep) rc.lr_sweep = true;
    rc.train.validate();
    return rc;
  }
};

/// Rebuilds the configured architecture for `meta` and loads a checkpoint.
train::TrainState restore(const cli::RunConfig& rc, const data::VolumeMeta& meta, const std::string& checkpoint) {
  train::TrainState st = train::make_state(rc.train, meta);
  load_checkpoint(checkpoint, st.params);
  return st;
}

int cmd_phantom(const std::string& spec_path, std::size_t count, const std::string& out,
                const std::optional<std::string>& split, std::optional<std::uint64_t> seed) {
  phantom::PhantomSpec spec;
  spec.seed = cli::default_seed();
  if (!spec_path.empty()) {
    nlohmann::json j = cli::read_json_file(spec_path);
    if (j.is_object() && !j.contains("seed")) j["seed"] = spec.seed;
    spec = phantom::spec_from_json(j);
  }
  if (seed) spec.seed = *seed;
  spec.validate();
  std::optional<std::array<std::size_t, 3>> counts;
  if (split) counts = cli::parse_split_counts(*split);
  const cli::Manifest m = cli::write_phantom_set(spec, count, out, counts);
  std::cout << "wrote " << m.ids.size() << " phantom pairs to " << out << "\n";
  return cli::kExitOk;
}

int cmd_train(const cli::RunConfig& rc, const std::string& out) {
  if (rc.data.dir.empty()) throw UsageError("train needs --data or data.dir in the config");
  if (out.empty()) throw UsageError("train needs --out");
  const cli::Manifest m = cli::read_manifest(rc.data.dir);
  const data::Fold fold = cli::select_fold(m, rc.data, rc.train.seed);
  const auto train_cases = cli::load_cases(rc.data.dir, fold.train);
  const auto val_cases = cli::load_cases(rc.data.dir, fold.val);
  fs::create_directories(out);
  cli::write_json_file((fs::path(out) / "folds.json").string(), data::folds_to_json({fold}));

  cli::RunConfig chosen = rc;
  if (rc.lr_sweep) {
    const auto sweep = train::lr_sweep(rc.train, train_cases, val_cases);
    std::ofstream os(fs::path(out) / "sweep.csv");
    os << "lr0,best_val_iou,best_epoch\n";
    for (const auto& e : sweep)
      os << train::fmt_double(e.lr0) << "," << train::fmt_double(e.val_iou) << "," << e.best_epoch << "\n";
    chosen.train.lr0 = sweep.front().lr0;
    std::cout << "lr sweep best lr0=" << chosen.train.lr0 << " val_iou=" << sweep.front().val_iou << "\n";
  }
  cli::write_json_file((fs::path(out) / "config.json").string(), cli::config_to_json(chosen));

  const train::TrainResult r = train::train_run(chosen.train, train_cases, val_cases, out);
  train::write_loss_csv(r.log, (fs::path(out) / "loss.csv").string());
  train::write_val_csv(r.log, (fs::path(out) / "val.csv").string());
  train::write_timing_csv(r.log, (fs::path(out) / "timing.csv").string());
  std::cout << "trained " << r.log.iterations.size() << " iterations; best epoch " << r.best_epoch;
  if (!val_cases.empty()) std::cout << " (val IoU " << r.best_val_iou << ")";
  std::cout << "\n";

  if (!fold.test.empty()) {
    const auto test_cases = cli::load_cases(rc.data.dir, fold.test);
    const auto ev = train::evaluate(r.state.graph, r.best, test_cases, r.state.policy, chosen.train.threads);
    std::ofstream os(fs::path(out) / "test_metrics.csv");
    os << metrics::csv_header() << "\n";
    for (const auto& v : ev.volumes) os << metrics::csv_row(v.id, v.counts) << "\n";
    std::cout << "test mean IoU " << ev.mean_iou << "\n";
  }
  return cli::kExitOk;
}

int cmd_predict(const cli::RunConfig& rc, const std::string& checkpoint, const std::string& input,
                const std::string& out, const std::string& probs_out) {
  const data::Volume img = data::read_volume(input);
  if (img.meta.kind != data::VolumeKind::image) throw DataError(input + " is not an image volume");
  const train::TrainState st = restore(rc, img.meta, checkpoint);
  const Tensor probs = train::predict_volume(st.graph, st.params, data::normalize_intensity(img.voxels), img.meta,
                                             st.policy);
  const Tensor label = metrics::binarize(probs);
  data::write_volume(out, {data::meta_for(label, data::VolumeKind::label, img.meta.source), label});
  if (!probs_out.empty()) {
    Tensor fg(label.shape());
    for (std::size_t v = 0; v < fg.size(); ++v) fg[v] = probs[2 * v + 1];
    data::write_volume(probs_out, {data::meta_for(fg, data::VolumeKind::image, img.meta.source), fg});
  }
  std::cout << "wrote " << out << "\n";
  return cli::kExitOk;
}

int cmd_eval(const cli::RunConfig& rc, const std::string& checkpoint, const std::string& ids_arg,
             const std::string& which, const std::string& out) {
  if (rc.data.dir.empty()) throw UsageError("eval needs --data or data.dir in the config");
  std::vector<std::string> ids;
  if (!ids_arg.empty()) {
    ids = cli::split_list(ids_arg);
  } else {
    const cli::Manifest m = cli::read_manifest(rc.data.dir);
    if (which == "all") {
      ids = m.ids;
    } else {
      const data::Fold f = cli::select_fold(m, rc.data, rc.train.seed);
      if (which == "train")
        ids = f.train;
      else if (which == "val")
        ids = f.val;
      else if (which == "test")
        ids = f.test;
      else
        throw UsageError("--split must be train, val, test or all");
    }
  }
  const auto cases = cli::load_cases(rc.data.dir, ids);
  if (cases.empty()) throw UsageError("no volumes to evaluate");
  const train::TrainState st = restore(rc, cases.front().meta, checkpoint);
  const auto ev = train::evaluate(st.graph, st.params, cases, st.policy, rc.train.threads);
  std::ostringstream csv;
  csv << metrics::csv_header() << "\n";
  for (const auto& v : ev.volumes) csv << metrics::csv_row(v.id, v.counts) << "\n";
  if (out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream os(out);
    if (!os) throw DataError("cannot write " + out);
    os << csv.str();
  }
  std::cout << "mean IoU " << train::fmt_double(ev.mean_iou) << "\n";
  return cli::kExitOk;
}

int cmd_params(const std::string& arch, std::size_t levels, std::size_t base, const std::string& shape) {
  const auto parts = cli::split_list(shape);
  if (parts.size() != 3) throw UsageError("--shape must be H,W,D");
  std::size_t dims[3];
  for (int i = 0; i < 3; ++i) {
    if (parts[i].find_first_not_of("0123456789") != std::string::npos) throw UsageError("--shape must be H,W,D");
    dims[i] = std::stoull(parts[i]);
  }
  const auto cfg = models::parse_arch(arch, levels, base);
  cfg.validate();
  std::cout << models::summarize(models::build(cfg), Shape5{1, dims[0], dims[1], dims[2], 1});
  return cli::kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, bool inject_fault) {
  const auto results = gradcheck::run_suite({seed, inject_fault});
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-4s %-32s max_rel_err=%.3e tol=%.0e probes=%zu kinks_skipped=%zu\n", r.pass() ? "PASS" : "FAIL",
                r.name.c_str(), r.max_rel_error, r.tolerance, r.probes, r.kinks);
    ok = ok && r.pass();
  }
  if (!ok) throw NumericError("gradient check failed");
  return cli::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Z-Net volumetric segmentation toolkit"};
  app.require_subcommand(1);

  auto* ph = app.add_subcommand("phantom", "generate synthetic image/label pairs");
  std::string ph_spec, ph_out, ph_split;
  std::size_t ph_count = 20;
  std::uint64_t ph_seed = 0;
  ph->add_option("--spec", ph_spec, "phantom spec JSON");
  ph->add_option("--count", ph_count, "number of phantoms");
  ph->add_option("--out", ph_out, "output directory")->required();
  auto* ph_split_opt = ph->add_option("--split", ph_split, "train,val,test counts recorded in the manifest");
  auto* ph_seed_opt = ph->add_option("--seed", ph_seed, "base seed (overrides the spec)");

  auto* tr = app.add_subcommand("train", "train a network on a phantom or scan set");
  RunFlags tr_flags;
  std::string tr_out;
  tr_flags.attach(tr, true);
  tr->add_option("--out", tr_out, "run directory")->required();

  auto* pr = app.add_subcommand("predict", "segment one volume");
  RunFlags pr_flags;
  std::string pr_ckpt, pr_in, pr_out, pr_probs;
  pr_flags.attach(pr, false);
  pr->add_option("--checkpoint", pr_ckpt, "ZNET1 checkpoint")->required();
  pr->add_option("--input", pr_in, "image .zvol.json")->required();
  pr->add_option("--out", pr_out, "label .zvol.json to write")->required();
  pr->add_option("--probs", pr_probs, "optional foreground probability .zvol.json");

  auto* ev = app.add_subcommand("eval", "per-volume IoU of a checkpoint");
  RunFlags ev_flags;
  std::string ev_ckpt, ev_ids, ev_which = "test", ev_out;
  ev_flags.attach(ev, true);
  ev->add_option("--checkpoint", ev_ckpt, "ZNET1 checkpoint")->required();
  ev->add_option("--ids", ev_ids, "comma-separated volume ids");
  ev->add_option("--split", ev_which, "train|val|test|all from the manifest");
  ev->add_option("--out", ev_out, "metrics CSV (default: stdout)");

  auto* pa = app.add_subcommand("params", "layer table and parameter total");
  std::string pa_arch = "zunet-v2", pa_shape = "64,64,8";
  std::size_t pa_levels = 3, pa_base = 8;
  pa->add_option("--arch", pa_arch, "architecture");
  pa->add_option("--levels", pa_levels, "resolution levels");
  pa->add_option("--base-channels", pa_base, "channels at the first level");
  pa->add_option("--shape", pa_shape, "input H,W,D");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::uint64_t gc_seed = 0;
  bool gc_fault = false;
  auto* gc_seed_opt = gc->add_option("--seed", gc_seed, "seed (default: ZNET_SEED or 0)");
  gc->add_flag("--inject-fault", gc_fault, "perturb analytic gradients (negative control)")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  try {
    if (ph->parsed())
      return cmd_phantom(ph_spec, ph_count, ph_out,
                         ph_split_opt->count() ? std::optional<std::string>(ph_split) : std::nullopt,
                         ph_seed_opt->count() ? std::optional<std::uint64_t>(ph_seed) : std::nullopt);
    if (tr->parsed()) return cmd_train(tr_flags.resolve(), tr_out);
    if (pr->parsed()) return cmd_predict(pr_flags.resolve(), pr_ckpt, pr_in, pr_out, pr_probs);
    if (ev->parsed()) return cmd_eval(ev_flags.resolve(), ev_ckpt, ev_ids, ev_which, ev_out);
    if (pa->parsed()) return cmd_params(pa_arch, pa_levels, pa_base, pa_shape);
    if (gc->parsed()) return cmd_gradcheck(gc_seed_opt->count() ? gc_seed : cli::default_seed(), gc_fault);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e);
  }
  return cli::kExitUsage;
}
