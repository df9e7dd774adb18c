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

#include "znet/metrics.hpp"

namespace {

using namespace znet;

Tensor mask(unsigned bits, std::size_t n = 9) {
  Tensor t(Shape5{1, 1, 1, n, 1});
  for (std::size_t i = 0; i < n; ++i) t[i] = (bits >> i) & 1u ? 1.0 : 0.0;
  return t;
}

TEST(Iou, HandExamples) {
  EXPECT_DOUBLE_EQ(metrics::iou(mask(0b0011), mask(0b0110)), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(metrics::iou(mask(0), mask(0)), 1.0);
  EXPECT_DOUBLE_EQ(metrics::iou(mask(1), mask(0)), 0.0);
  const auto c = metrics::confusion(mask(0b0011), mask(0b0110));
  EXPECT_EQ(c.tp, 1u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.fn, 1u);
  EXPECT_EQ(c.tn, 6u);
}

// Brute force over every pair of 9-voxel masks.
TEST(Iou, SymmetricBoundedAndIdentity) {
  for (unsigned a = 0; a < 512; ++a) {
    const Tensor ta = mask(a);
    EXPECT_EQ(metrics::iou(ta, ta), 1.0);
    for (unsigned b = 0; b < 512; ++b) {
      const Tensor tb = mask(b);
      const double v = metrics::iou(ta, tb);
      ASSERT_EQ(v, metrics::iou(tb, ta));
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
      const unsigned inter = static_cast<unsigned>(__builtin_popcount(a & b));
      const unsigned uni = static_cast<unsigned>(__builtin_popcount(a | b));
      ASSERT_DOUBLE_EQ(v, uni == 0 ? 1.0 : static_cast<double>(inter) / uni);
    }
  }
}

// Adding a true-positive voxel never lowers IoU; adding a false positive never raises it.
TEST(Iou, Monotonicity) {
  for (unsigned y = 0; y < 512; ++y)
    for (unsigned p = 0; p < 512; ++p) {
      const double base = metrics::iou(mask(y), mask(p));
      for (unsigned k = 0; k < 9; ++k) {
        const unsigned bit = 1u << k;
        if (p & bit) continue;
        const double grown = metrics::iou(mask(y), mask(p | bit));
        if (y & bit)
          ASSERT_GE(grown, base);
        else
          ASSERT_LE(grown, base);
      }
    }
}

TEST(Iou, RejectsNonBinaryAndMismatch) {
  Tensor t = mask(1);
  t[3] = 0.5;
  EXPECT_THROW(metrics::iou(t, mask(1)), DataError);
  EXPECT_THROW(metrics::iou(mask(1, 9), mask(1, 8)), ShapeError);
}

TEST(Binarize, ArgmaxWithBackgroundTies) {
  const Tensor s(Shape5{1, 1, 1, 3, 2}, std::vector<double>{0.2, 0.8, 0.5, 0.5, 0.9, 0.1});
  const Tensor b = metrics::binarize(s);
  EXPECT_EQ(b[0], 1.0);
  EXPECT_EQ(b[1], 0.0);
  EXPECT_EQ(b[2], 0.0);
}

TEST(Csv, RowFormat) {
  EXPECT_EQ(metrics::csv_header(), "volume_id,iou,tp,fp,fn,tn");
  EXPECT_EQ(metrics::csv_row("v1", metrics::confusion(mask(0b0011), mask(0b0110))), "v1,0.333333,1,1,1,6");
}

}  // namespace
