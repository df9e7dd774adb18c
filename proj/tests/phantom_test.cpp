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

#include "znet/phantom.hpp"

namespace {

using namespace znet;
using phantom::Kind;
using phantom::PhantomSpec;

TEST(Phantom, SameSeedSameVolumes) {
  PhantomSpec s;
  s.seed = 42;
  const auto a = phantom::generate(s), b = phantom::generate(s);
  EXPECT_EQ(a.image.voxels, b.image.voxels);
  EXPECT_EQ(a.label.voxels, b.label.voxels);
  s.seed = 43;
  EXPECT_FALSE(phantom::generate(s).label.voxels == a.label.voxels);
}

TEST(Phantom, ShapesAndRanges) {
  PhantomSpec s;
  s.x = 40;
  s.y = 32;
  s.l = 12;
  const auto p = phantom::generate(s, "t");
  EXPECT_EQ(p.image.voxels.shape(), (Shape5{1, 32, 40, 12, 1}));
  EXPECT_EQ(p.image.meta.kind, data::VolumeKind::image);
  EXPECT_EQ(p.label.meta.dtype, data::Dtype::u8);
  for (double v : p.image.voxels.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (double v : p.label.voxels.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

// Every slice of a tube carries foreground, and foreground is brighter on average.
TEST(Phantom, TubeSpansEverySliceAndIsBright) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PhantomSpec s;
    s.seed = seed;
    const auto p = phantom::generate(s);
    const Tensor& lab = p.label.voxels;
    double fg = 0, bg = 0, nf = 0, nb = 0;
    for (std::size_t z = 0; z < s.l; ++z) {
      std::size_t count = 0;
      for (std::size_t y = 0; y < s.y; ++y)
        for (std::size_t x = 0; x < s.x; ++x) count += lab.at(0, y, x, z, 0) == 1.0;
      EXPECT_GT(count, 0u) << "seed " << seed << " slice " << z;
    }
    for (std::size_t i = 0; i < lab.size(); ++i) {
      (lab[i] == 1.0 ? fg : bg) += p.image.voxels[i];
      (lab[i] == 1.0 ? nf : nb) += 1;
    }
    EXPECT_GT(fg / nf, bg / nb + 0.2);
  }
}

TEST(Phantom, NoiseFreeImageIsTwoLevel) {
  PhantomSpec s;
  s.fg_sigma = 0;
  s.bg_sigma = 0;
  s.distractors = 0;
  const auto p = phantom::generate(s);
  for (std::size_t i = 0; i < p.label.voxels.size(); ++i)
    EXPECT_EQ(p.image.voxels[i], static_cast<float>(p.label.voxels[i] == 1.0 ? s.fg_mean : s.bg_mean));
}

TEST(Phantom, BlobKindProducesForeground) {
  PhantomSpec s;
  s.kind = Kind::blob;
  s.seed = 5;
  EXPECT_GT(phantom::generate(s).label.voxels.sum(), 0.0);
}

TEST(Phantom, SpecValidation) {
  PhantomSpec s;
  s.radius_max = 20;
  EXPECT_THROW(s.validate(), UsageError);
  EXPECT_THROW(phantom::spec_from_json({{"colour", 1}}), UsageError);
  EXPECT_THROW(phantom::spec_from_json({{"kind", "cone"}}), UsageError);
  const auto t = phantom::spec_from_json({{"kind", "blob"}, {"x", 32}, {"y", 32}, {"l", 9}, {"seed", 3}});
  EXPECT_EQ(t.kind, Kind::blob);
  EXPECT_EQ(t.l, 9u);
  EXPECT_EQ(t.seed, 3u);
}

// Whole-slab patches always see the tube; small cubes often miss it.
TEST(Phantom, ImbalanceDependsOnPatchShape) {
  PhantomSpec s;
  s.seed = 1;
  const auto p = phantom::generate(s);
  const auto slab = phantom::imbalance_report(p.label, data::patch512(p.label.meta));
  EXPECT_EQ(slab.empty_patches, 0u);
  EXPECT_EQ(slab.fractions.size(), s.l - 7);
  const auto cube = phantom::imbalance_report(p.label, data::cube(16));
  EXPECT_GT(cube.empty_patches, cube.fractions.size() / 2);
}

}  // namespace
