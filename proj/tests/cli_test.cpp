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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "znet/cli.hpp"
#include "znet/models.hpp"

namespace {

using namespace znet;
namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
};

const fs::path& work() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "znet_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

Outcome znet(const std::string& args) {
  const fs::path log = work() / "stdout.txt";
  const std::string cmd = std::string(ZNET_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinySpec = R"({"x": 16, "y": 16, "l": 10, "radius_min": 2.0, "radius_max": 3.0, "distractors": 1})";
const std::string kTinyArch = "--arch zunet-v2 --levels 1 --base-channels 2";

TEST(Cli, MissingSubcommandIsUsageError) { EXPECT_EQ(znet("").code, cli::kExitUsage); }

TEST(Cli, UnknownFlagOrArchIsUsageError) {
  EXPECT_EQ(znet("params --bogus").code, cli::kExitUsage);
  EXPECT_EQ(znet("params --arch resnet").code, cli::kExitUsage);
  EXPECT_EQ(znet("params --shape 8,8").code, cli::kExitUsage);
}

TEST(Cli, ParamsLastLineIsTotal) {
  const Outcome r = znet("params --arch unet --levels 1 --base-channels 2 --shape 8,8,4");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto end = r.out.find_last_not_of('\n');
  const auto line = r.out.substr(r.out.rfind('\n', end) + 1, end - r.out.rfind('\n', end));
  EXPECT_EQ(line.rfind("total", 0), 0u);
  const auto expected = models::count_params(models::build(models::parse_arch("unet", 1, 2)), {1, 8, 8, 4, 1});
  EXPECT_EQ(std::stoull(line.substr(line.find_last_of(' ') + 1)), expected);
}

TEST(Cli, PhantomSetIsReproducible) {
  write(work() / "spec.json", kTinySpec);
  const std::string spec = (work() / "spec.json").string();
  ASSERT_EQ(znet("phantom --spec " + spec + " --count 3 --seed 9 --out " + (work() / "p1").string()).code, 0);
  ASSERT_EQ(znet("phantom --spec " + spec + " --count 3 --seed 9 --out " + (work() / "p2").string()).code, 0);
  for (const char* f : {"manifest.json", "phantom_002_image.zvol.raw", "phantom_002_label.zvol.raw"})
    EXPECT_EQ(slurp(work() / "p1" / f), slurp(work() / "p2" / f)) << f;
  const auto m = cli::read_manifest((work() / "p1").string());
  EXPECT_EQ(m.ids, (std::vector<std::string>{"phantom_000", "phantom_001", "phantom_002"}));
  EXPECT_FALSE(m.split.has_value());
}

TEST(Cli, PhantomSplitMustAddUp) {
  write(work() / "spec.json", kTinySpec);
  EXPECT_EQ(znet("phantom --spec " + (work() / "spec.json").string() + " --count 3 --split 1,1,2 --out " +
                 (work() / "bad").string())
                .code,
            cli::kExitUsage);
  EXPECT_EQ(znet("phantom --count 3 --split 1,2 --out " + (work() / "bad").string()).code, cli::kExitUsage);
}

TEST(Cli, ConfigRejectsUnknownKeys) {
  write(work() / "bad.json", R"({"train": {"lr0": 0.1, "learning_rate": 0.2}})");
  EXPECT_EQ(znet("train --config " + (work() / "bad.json").string() + " --out " + (work() / "r").string()).code,
            cli::kExitUsage);
  EXPECT_THROW(cli::config_from_json({{"optimizer", "adam"}}), UsageError);
}

TEST(Cli, ConfigRoundTrip) {
  cli::RunConfig rc;
  rc.train.arch = "zvnet-v1";
  rc.train.lr0 = 0.01;
  rc.data.dir = "x";
  rc.lr_sweep = true;
  const auto back = cli::config_from_json(nlohmann::json::parse(cli::config_to_json(rc).dump()));
  EXPECT_EQ(back.train.arch, "zvnet-v1");
  EXPECT_EQ(back.train.lr0, 0.01);
  EXPECT_EQ(back.data.dir, "x");
  EXPECT_TRUE(back.lr_sweep);
}

TEST(Cli, SplitCounts) {
  EXPECT_EQ(cli::parse_split_counts("16,2,4"), (std::array<std::size_t, 3>{16, 2, 4}));
  EXPECT_THROW(cli::parse_split_counts("1,2,3,4"), UsageError);
  EXPECT_THROW(cli::parse_split_counts("1,,3"), UsageError);
  EXPECT_THROW(cli::parse_split_counts("a,b,c"), UsageError);
}

TEST(Cli, MissingDataIsDataError) {
  EXPECT_EQ(znet("train --data " + (work() / "nowhere").string() + " --out " + (work() / "r").string()).code,
            cli::kExitData);
}

TEST(Cli, GradcheckPassesAndFaultExitsNumeric) {
  const Outcome ok = znet("gradcheck --seed 1");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(znet("gradcheck --inject-fault").code, cli::kExitNumeric);
}

TEST(Cli, TrainPredictEvalEndToEnd) {
  write(work() / "spec.json", kTinySpec);
  const fs::path data = work() / "set", run = work() / "run";
  ASSERT_EQ(znet("phantom --spec " + (work() / "spec.json").string() + " --count 4 --split 2,1,1 --out " +
                 data.string())
                .code,
            0);
  const Outcome tr = znet("train --data " + data.string() + " " + kTinyArch + " --epochs 1 --no-augment --out " +
                      run.string());
  ASSERT_EQ(tr.code, 0) << tr.out;
  for (const char* f : {"config.json", "folds.json", "loss.csv", "val.csv", "timing.csv", "epoch_1.znet", "best.znet",
                        "test_metrics.csv"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_EQ(slurp(run / "test_metrics.csv").rfind("volume_id,iou,tp,fp,fn,tn\nphantom_003,", 0), 0u);

  const std::string ckpt = (run / "best.znet").string();
  const Outcome pr = znet("predict " + kTinyArch + " --checkpoint " + ckpt + " --input " +
                      (data / "phantom_003_image.zvol.json").string() + " --out " +
                      (work() / "pred.zvol.json").string() + " --probs " + (work() / "prob.zvol.json").string());
  ASSERT_EQ(pr.code, 0) << pr.out;
  const auto label = data::read_volume((work() / "pred.zvol.json").string());
  EXPECT_EQ(label.meta.kind, data::VolumeKind::label);
  EXPECT_EQ(label.voxels.shape(), (Shape5{1, 16, 16, 10, 1}));

  const Outcome ev = znet("eval --data " + data.string() + " " + kTinyArch + " --checkpoint " + ckpt + " --split test");
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_NE(ev.out.find("phantom_003,"), std::string::npos);

  // a checkpoint from another architecture does not fit
  EXPECT_EQ(znet("eval --data " + data.string() + " --arch unet --levels 1 --base-channels 2 --checkpoint " + ckpt +
                 " --split test")
                .code,
            cli::kExitData);
}

}  // namespace
