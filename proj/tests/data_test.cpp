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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "znet/data.hpp"

namespace {

using namespace znet;
using data::Phase;
using data::Triple;

namespace fs = std::filesystem;

data::VolumeMeta meta(std::size_t x, std::size_t y, std::size_t l) {
  return {x, y, l, data::Dtype::f32, data::VolumeKind::image, ""};
}

Tensor random_volume(const data::VolumeMeta& m, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t(Shape5{1, m.height, m.width, m.slices, c});
  for (double& v : t.values()) v = u(rng);
  return t;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("znet_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(AxisOrigins, StridesAndClampedTail) {
  EXPECT_EQ(data::axis_origins(10, 8, 8), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(data::axis_origins(16, 8, 8), (std::vector<std::size_t>{0, 8}));
  EXPECT_EQ(data::axis_origins(8, 8, 1), (std::vector<std::size_t>{0}));
  EXPECT_EQ(data::axis_origins(11, 8, 1).size(), 4u);
  EXPECT_THROW(data::axis_origins(7, 8, 1), ShapeError);
}

TEST(PatchPlan, Patch512CountsAlongDepth) {
  for (std::size_t l : {8, 9, 32, 57}) {
    const auto m = meta(64, 48, l);
    EXPECT_EQ(data::plan_patches(m, data::patch512(m), Phase::train).size(), l - 7);
    const std::size_t eval = (l + 7) / 8;
    EXPECT_EQ(data::plan_patches(m, data::patch512(m), Phase::eval).size(), eval);
  }
}

TEST(PatchPlan, ShortVolumeIsShapeError) {
  const auto m = meta(64, 64, 7);
  EXPECT_THROW(data::plan_patches(m, data::patch512(m), Phase::train), ShapeError);
  EXPECT_THROW(data::plan_patches(meta(100, 100, 64), data::patch128(), Phase::train), ShapeError);
}

TEST(PatchPlan, OriginsAreZOuter) {
  const auto plan = data::plan_patches(meta(20, 12, 16), data::cube(8), Phase::eval);
  ASSERT_EQ(plan.size(), 3u * 2u * 2u);
  EXPECT_EQ(plan.origins[0], (Triple{0, 0, 0}));
  EXPECT_EQ(plan.origins[1], (Triple{8, 0, 0}));
  EXPECT_EQ(plan.origins[2], (Triple{12, 0, 0}));
  EXPECT_EQ(plan.origins[3], (Triple{0, 4, 0}));
  EXPECT_EQ(plan.origins[6], (Triple{0, 0, 8}));
}

TEST(PatchPlan, PolicyNames) {
  const auto m = meta(64, 64, 32);
  EXPECT_EQ(data::policy_by_name("patch512", m).patch, (Triple{64, 64, 8}));
  EXPECT_EQ(data::policy_by_name("cube16", m).patch, (Triple{16, 16, 16}));
  EXPECT_EQ(data::policy_by_name("patch64", m).patch, (Triple{64, 64, 64}));
  EXPECT_THROW(data::policy_by_name("cube", m), UsageError);
  EXPECT_THROW(data::policy_by_name("cube0", m), UsageError);
  EXPECT_THROW(data::policy_by_name("patch1", m), UsageError);
}

TEST(Coverage, EveryVoxelCoveredForRandomShapes) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> ext(8, 40);
  for (int trial = 0; trial < 25; ++trial) {
    const auto m = meta(ext(rng), ext(rng), ext(rng));
    for (const auto& policy : {data::patch512(m), data::cube(8)})
      for (Phase ph : {Phase::train, Phase::eval}) {
        const auto hits = data::coverage(data::plan_patches(m, policy, ph));
        EXPECT_EQ(*std::min_element(hits.begin(), hits.end()) >= 1, true);
      }
  }
}

TEST(Stitch, OverlapTakesTheMean) {
  // depth 10, patch 8, eval origins 0 and 2: slices 2..7 overlap
  const auto m = meta(4, 4, 10);
  const auto plan = data::plan_patches(m, data::patch512(m), Phase::eval);
  ASSERT_EQ(plan.size(), 2u);
  std::vector<Tensor> preds{Tensor(Shape5{1, 4, 4, 8, 1}, 1.0), Tensor(Shape5{1, 4, 4, 8, 1}, 3.0)};
  const Tensor out = data::stitch(plan, preds);
  EXPECT_EQ(out.at(0, 1, 2, 0, 0), 1.0);
  EXPECT_EQ(out.at(0, 1, 2, 1, 0), 1.0);
  for (std::size_t z = 2; z < 8; ++z) EXPECT_EQ(out.at(0, 3, 0, z, 0), 2.0);
  EXPECT_EQ(out.at(0, 0, 0, 9, 0), 3.0);
}

TEST(Stitch, ExtractThenStitchIsIdentity) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<std::size_t> ext(8, 24);
  for (int trial = 0; trial < 15; ++trial) {
    const auto m = meta(ext(rng), ext(rng), ext(rng));
    const Tensor vol = random_volume(m, 2, trial);
    for (const auto& policy : {data::patch512(m), data::cube(8)}) {
      const auto plan = data::plan_patches(m, policy, Phase::train);
      std::vector<Tensor> parts;
      for (std::size_t i = 0; i < plan.size(); ++i) parts.push_back(data::extract(vol, plan, i));
      const Tensor back = data::stitch(plan, parts);
      for (std::size_t i = 0; i < vol.size(); ++i) ASSERT_NEAR(back[i], vol[i], 1e-15);
    }
  }
}

TEST(Stitch, WrongCountIsShapeError) {
  const auto m = meta(8, 8, 16);
  const auto plan = data::plan_patches(m, data::patch512(m), Phase::eval);
  EXPECT_THROW(data::stitch(plan, {Tensor(Shape5{1, 8, 8, 8, 1})}), ShapeError);
}

TEST(Augment, FourRotationsOfPatchAndLabel) {
  const Tensor p = random_volume(meta(4, 4, 2), 1, 1);
  const Tensor l = random_volume(meta(4, 4, 2), 1, 2);
  const auto r = data::augment_rotations(p, l);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_EQ(r[0].first, p);
  EXPECT_EQ(r[2].second, rot90_z(l, 2));
}

TEST(Volume, RoundTripImageAndLabel) {
  const fs::path dir = scratch("rt");
  const auto m = meta(5, 3, 4);
  Tensor img = random_volume(m, 1, 4);
  for (double& v : img.values()) v = static_cast<float>(v);
  data::Volume vi{data::meta_for(img, data::VolumeKind::image, "unit"), img};
  data::write_volume((dir / "a.zvol.json").string(), vi);
  const auto back = data::read_volume((dir / "a.zvol.json").string());
  EXPECT_EQ(back.voxels, img);
  EXPECT_EQ(back.meta.source, "unit");
  EXPECT_EQ(fs::file_size(dir / "a.zvol.raw"), 5u * 3 * 4 * 4);

  Tensor lab(img.shape());
  lab.at(0, 2, 4, 3, 0) = 1.0;
  data::write_volume((dir / "b.zvol.json").string(), {data::meta_for(lab, data::VolumeKind::label), lab});
  EXPECT_EQ(data::read_volume((dir / "b.zvol.json").string()).voxels, lab);
  // z outermost, then y rows of x: (x=4, y=2, z=3) is the last byte
  std::ifstream raw(dir / "b.zvol.raw", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(raw)), {});
  EXPECT_EQ(bytes.back(), 1);
  EXPECT_EQ(std::count(bytes.begin(), bytes.end(), 1), 1);
}

TEST(Volume, BadFilesAreDataErrors) {
  const fs::path dir = scratch("bad");
  EXPECT_THROW(data::read_volume((dir / "missing.zvol.json").string()), DataError);
  std::ofstream((dir / "h.zvol.json")) << R"({"width":2,"height":2,"slices":1,"dtype":"f32","kind":"image"})";
  std::ofstream((dir / "h.zvol.raw"), std::ios::binary) << "abc";
  EXPECT_THROW(data::read_volume((dir / "h.zvol.json").string()), DataError);
  std::ofstream((dir / "l.zvol.json")) << R"({"width":1,"height":1,"slices":1,"dtype":"u8","kind":"label"})";
  std::ofstream((dir / "l.zvol.raw"), std::ios::binary) << '\x02';
  EXPECT_THROW(data::read_volume((dir / "l.zvol.json").string()), DataError);
  std::ofstream((dir / "k.zvol.json")) << R"({"width":1,"height":1,"slices":1,"dtype":"f32","kind":"label"})";
  EXPECT_THROW(data::read_volume((dir / "k.zvol.json").string()), DataError);
}

TEST(Normalize, DividesByMaximum) {
  const Tensor t(Shape5{1, 1, 1, 3, 1}, std::vector<double>{0, 2, 4});
  const Tensor n = data::normalize_intensity(t);
  EXPECT_EQ(n[1], 0.5);
  EXPECT_EQ(n[2], 1.0);
  EXPECT_THROW(data::normalize_intensity(Tensor(Shape5{1, 1, 1, 2, 1}, std::vector<double>{-1, 3})), DataError);
  EXPECT_THROW(data::normalize_intensity(Tensor(Shape5{1, 1, 1, 2, 1})), DataError);
}

std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("v" + std::to_string(i));
  return out;
}

TEST(Folds, TwoFoldSizesAndDisjointness) {
  const auto folds = data::split_folds(ids(20), 5, data::SplitScheme::two_fold_10_2_8);
  ASSERT_EQ(folds.size(), 2u);
  for (const auto& f : folds) {
    EXPECT_EQ(f.train.size(), 10u);
    EXPECT_EQ(f.val.size(), 2u);
    EXPECT_EQ(f.test.size(), 8u);
    std::set<std::string> all(f.train.begin(), f.train.end());
    all.insert(f.val.begin(), f.val.end());
    all.insert(f.test.begin(), f.test.end());
    EXPECT_EQ(all.size(), 20u);
  }
  std::set<std::string> t1(folds[0].train.begin(), folds[0].train.end());
  for (const auto& id : folds[1].train) EXPECT_EQ(t1.count(id), 0u);
}

TEST(Folds, FixedSplitAndSeedDependence) {
  const auto f = data::split_folds(ids(60), 1, data::SplitScheme::fixed_36_24);
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].train.size(), 36u);
  EXPECT_TRUE(f[0].val.empty());
  EXPECT_EQ(f[0].test.size(), 24u);
  EXPECT_EQ(data::split_folds(ids(60), 1, data::SplitScheme::fixed_36_24)[0].train, f[0].train);
  EXPECT_NE(data::split_folds(ids(60), 2, data::SplitScheme::fixed_36_24)[0].train, f[0].train);
  EXPECT_THROW(data::split_folds(ids(19), 1, data::SplitScheme::two_fold_10_2_8), UsageError);
  EXPECT_THROW(data::parse_scheme("three_fold"), UsageError);
}

}  // namespace
