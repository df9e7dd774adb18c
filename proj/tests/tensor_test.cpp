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

#include <random>

#include "znet/tensor.hpp"

namespace {

using znet::Shape5;
using znet::Tensor;

TEST(Tensor, ChannelsVaryFastest) {
  Tensor t(Shape5{2, 3, 4, 5, 6});
  EXPECT_EQ(t.index(0, 0, 0, 0, 1), 1u);
  EXPECT_EQ(t.index(0, 0, 0, 1, 0), 6u);
  EXPECT_EQ(t.index(0, 0, 1, 0, 0), 30u);
  EXPECT_EQ(t.index(0, 1, 0, 0, 0), 120u);
  EXPECT_EQ(t.index(1, 0, 0, 0, 0), 360u);
}

TEST(Tensor, CoordsInvertIndex) {
  Tensor t(Shape5{2, 3, 4, 5, 6});
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto c = t.coords(i);
    EXPECT_EQ(t.index(c[0], c[1], c[2], c[3], c[4]), i);
  }
}

TEST(Tensor, ZeroExtentThrows) {
  EXPECT_THROW(Tensor(Shape5{1, 0, 1, 1, 1}), znet::ShapeError);
  EXPECT_THROW(Tensor(Shape5{1, 2, 2, 2, 1}, std::vector<double>(7)), znet::ShapeError);
}

TEST(Tensor, OverflowThrows) {
  const std::size_t big = std::size_t{1} << 40;
  EXPECT_THROW(Shape5({big, big, 1, 1, 1}).count(), znet::ShapeError);
}

TEST(Tensor, RequireFinite) {
  Tensor t(Shape5{1, 1, 1, 2, 1});
  EXPECT_NO_THROW(znet::require_finite(t, "t"));
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(znet::require_finite(t, "t"), znet::NumericError);
}

TEST(Tensor, SamePadding) {
  EXPECT_EQ(znet::same_padding(3, 10).front, 1u);
  EXPECT_EQ(znet::same_padding(3, 10).back, 1u);
  EXPECT_EQ(znet::same_padding(1, 10).front, 0u);
  // even kernel only when it spans the axis
  EXPECT_EQ(znet::same_padding(8, 8).front, 3u);
  EXPECT_EQ(znet::same_padding(8, 8).back, 4u);
  EXPECT_THROW(znet::same_padding(4, 8), znet::ShapeError);
}

TEST(Tensor, PadSameKeepsInterior) {
  Tensor t(Shape5{1, 2, 2, 2, 1}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor p = znet::pad_same(t, {3, 3, 3});
  EXPECT_EQ(p.shape(), (Shape5{1, 4, 4, 4, 1}));
  EXPECT_DOUBLE_EQ(p.sum(), t.sum());
  EXPECT_DOUBLE_EQ(p.at(0, 1, 1, 1, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.at(0, 2, 2, 2, 0), 8.0);
}

TEST(Tensor, SliceZ) {
  Tensor t(Shape5{1, 1, 1, 5, 2});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  const Tensor s = znet::slice_z(t, 2, 2);
  EXPECT_EQ(s.values()[0], 4.0);
  EXPECT_EQ(s.values()[3], 7.0);
  EXPECT_THROW(znet::slice_z(t, 4, 2), znet::ShapeError);
}

TEST(Tensor, Rot90Example) {
  // [[1,2],[3,4]] -> [[3,1],[4,2]]
  Tensor t(Shape5{1, 2, 2, 1, 1}, std::vector<double>{1, 2, 3, 4});
  const Tensor r = znet::rot90_z(t, 1);
  EXPECT_EQ((std::vector<double>(r.values().begin(), r.values().end())), (std::vector<double>{3, 1, 4, 2}));
}

TEST(Tensor, Rot90GroupProperties) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor t(Shape5{2, 5, 5, 3, 2});
    for (double& v : t.values()) v = u(rng);
    EXPECT_EQ(znet::rot90_z(znet::rot90_z(t, 1), 3), t);
    EXPECT_EQ(znet::rot90_z(znet::rot90_z(t, 2), 2), t);
    EXPECT_EQ(znet::rot90_z(t, 4), t);
    EXPECT_EQ(znet::rot90_z(t, -1), znet::rot90_z(t, 3));
    EXPECT_NEAR(znet::rot90_z(t, 1).sum(), t.sum(), 1e-12);
  }
  EXPECT_THROW(znet::rot90_z(Tensor(Shape5{1, 2, 3, 1, 1}), 1), znet::ShapeError);
}

TEST(Tensor, ElementwiseAndDot) {
  Tensor a(Shape5{1, 1, 1, 3, 1}, std::vector<double>{1, 2, 3});
  Tensor b(Shape5{1, 1, 1, 3, 1}, std::vector<double>{4, 5, 6});
  EXPECT_DOUBLE_EQ(znet::dot(a, b), 32.0);
  EXPECT_DOUBLE_EQ(znet::elementwise(a, b, znet::Elementwise::sub).sum(), -9.0);
  EXPECT_DOUBLE_EQ(znet::elementwise(a, b, znet::Elementwise::mul).sum(), 32.0);
  EXPECT_THROW(znet::dot(a, Tensor(Shape5{1, 1, 1, 2, 1})), znet::ShapeError);
}

}  // namespace
