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

#include "znet/models.hpp"

namespace {

using namespace znet;
using models::Mode;

// Closed-form U-Net parameter count, written independently of the builder.
std::size_t conv(std::size_t taps, std::size_t ci, std::size_t co) { return taps * ci * co + co; }
std::size_t norm(std::size_t c) { return 2 * c; }

std::size_t block(Mode m, std::size_t ci, std::size_t co, std::size_t depth) {
  switch (m) {
    case Mode::full3d: return conv(27, ci, co) + norm(co);
    case Mode::z_v1: return conv(9, ci, co) + norm(co) + conv(depth, co, co) + norm(co);
    case Mode::z_v2: return conv(9, ci, co) + norm(co);
  }
  return 0;
}

std::size_t unet_oracle(Mode m, std::size_t levels, std::size_t base, std::size_t depth) {
  std::size_t total = 0, ci = 1;
  for (std::size_t l = 0; l < levels; ++l) {
    const std::size_t ch = base << l, d = depth >> l;
    total += block(m, ci, ch, d) + block(m, ch, ch, d);
    if (m == Mode::z_v2) total += conv(d, ch, ch) + norm(ch);
    ci = ch;
  }
  const std::size_t deep = base << levels;
  total += block(m, ci, deep, depth >> levels) + block(m, deep, deep, depth >> levels);
  for (std::size_t l = levels; l-- > 0;) {
    const std::size_t ch = base << l, prev = base << (l + 1);
    if (m == Mode::z_v2) total += conv(depth >> (l + 1), prev, prev) + norm(prev);
    total += conv(8, prev, ch) + norm(ch);
    total += block(m, 2 * ch, ch, depth >> l) + block(m, ch, ch, depth >> l);
  }
  return total + conv(1, base, 2);
}

TEST(Models, HandCountedTinyUnet) {
  const auto spec = models::build(models::parse_arch("unet", 1, 2));
  EXPECT_EQ(models::count_params(spec, {1, 8, 8, 4, 1}), 1258u);
}

TEST(Models, UnetCountsMatchClosedForm) {
  const std::pair<const char*, Mode> archs[] = {{"unet", Mode::full3d}, {"zunet-v1", Mode::z_v1},
                                                {"zunet-v2", Mode::z_v2}};
  for (const auto& [name, mode] : archs)
    for (std::size_t levels : {1, 2, 3})
      for (std::size_t base : {2, 8})
        for (std::size_t depth : {8, 16}) {
          const auto spec = models::build(models::parse_arch(name, levels, base));
          EXPECT_EQ(models::count_params(spec, {1, 16, 16, depth, 1}), unet_oracle(mode, levels, base, depth))
              << name << " L" << levels << " b" << base << " D" << depth;
        }
}

TEST(Models, OutputMatchesInputWithTwoLogits) {
  for (const auto& name : models::arch_names()) {
    const auto g = compile(models::build(models::parse_arch(name, 2, 2)), {1, 8, 8, 8, 1});
    EXPECT_EQ(g.output().out_shape, (Shape5{1, 8, 8, 8, 2})) << name;
    EXPECT_EQ(init_params(g, 0).scalar_count(), models::count_params(models::build(models::parse_arch(name, 2, 2)),
                                                                     {1, 8, 8, 8, 1}));
  }
}

TEST(Models, SeparableModesHaveNoCubicKernels) {
  for (const char* name : {"zunet-v1", "zunet-v2", "zvnet-v1", "zvnet-v2"}) {
    const auto g = compile(models::build(models::parse_arch(name, 2, 4)), {1, 16, 16, 8, 1});
    for (const auto& n : g.nodes) {
      if (n.layer.kind != LayerKind::conv || n.conv.stride != 1) continue;
      const auto k = n.conv.kernel;
      EXPECT_TRUE((k.h == k.w && k.d == 1) || (k.h == 1 && k.w == 1)) << name << " " << n.layer.id;
    }
  }
}

TEST(Models, ModeTwoHasOneDepthConvPerResampling) {
  const auto g = compile(models::build(models::parse_arch("zunet-v2", 3, 4)), {1, 16, 16, 16, 1});
  std::size_t depth_convs = 0, resamples = 0;
  for (const auto& n : g.nodes) {
    if (n.layer.full_depth) ++depth_convs;
    if (n.layer.kind == LayerKind::max_pool || n.layer.kind == LayerKind::conv_transpose) ++resamples;
  }
  EXPECT_EQ(depth_convs, resamples);
}

TEST(Models, SeparableFamiliesAreSmaller) {
  const Shape5 in{1, 32, 32, 16, 1};
  for (const char* fam : {"unet", "vnet"}) {
    const std::string z = fam[0] == 'u' ? "zunet" : "zvnet";
    const auto full = models::count_params(models::build(models::parse_arch(fam)), in);
    const auto v1 = models::count_params(models::build(models::parse_arch(z + "-v1")), in);
    const auto v2 = models::count_params(models::build(models::parse_arch(z + "-v2")), in);
    EXPECT_LT(v1, full);
    EXPECT_LT(v2, v1);
  }
}

TEST(Models, TooManyLevelsIsShapeError) {
  EXPECT_THROW(compile(models::build(models::parse_arch("unet", 4, 2)), {1, 16, 16, 8, 1}), ShapeError);
}

TEST(Models, UnknownArchIsUsageError) {
  EXPECT_THROW(models::parse_arch("resnet"), UsageError);
  EXPECT_THROW(models::parse_arch("unet", 0, 8).validate(), UsageError);
  EXPECT_EQ(models::arch_name(models::parse_arch("zvnet-v1")), "zvnet-v1");
}

TEST(Models, SummaryEndsWithTotal) {
  const auto spec = models::build(models::parse_arch("unet", 1, 2));
  const std::string s = models::summarize(spec, {1, 8, 8, 4, 1});
  const auto last = s.substr(s.rfind('\n', s.size() - 2) + 1);
  EXPECT_EQ(last.rfind("total", 0), 0u);
  EXPECT_NE(last.find("1258"), std::string::npos);
}

}  // namespace
