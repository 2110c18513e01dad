/*
 Copyright 2026 maskkit contributors
 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      http://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
#include <cmath>

#include <gtest/gtest.h>

#include "maskkit/roialign.hpp"
#include "maskkit/rng.hpp"
#include "test_oracles.hpp"

using namespace maskkit;

namespace {

FeatureMap random_map(Rng& rng, int c, int h, int w, int stride) {
    FeatureMap map;
    map.data = Tensor({c, h, w});
    map.stride = stride;
    for (std::size_t i = 0; i < map.data.size(); ++i) map.data[i] = rng.uniform(-2.0, 2.0);
    return map;
}

Box random_roi(Rng& rng, double image_w, double image_h) {
    const double w = rng.uniform(3.0, 0.8 * image_w), h = rng.uniform(3.0, 0.8 * image_h);
    const double cx = rng.uniform(0.1 * image_w, 0.9 * image_w);
    const double cy = rng.uniform(0.1 * image_h, 0.9 * image_h);
    return Box::from_center(cx, cy, w, h);
}

} // namespace

// 500 random RoIs against the brute-force bilinear oracle.
TEST(RoiAlignTest, MatchesBruteForceOracle) {
    Rng rng(41);
    double worst = 0.0;
    for (int t = 0; t < 500; ++t) {
        const int stride = 1 << rng.uniform_int(4);
        const int h = 6 + rng.uniform_int(14), w = 6 + rng.uniform_int(14);
        const FeatureMap map = random_map(rng, 1 + rng.uniform_int(3), h, w, stride);
        const Box roi = random_roi(rng, w * stride, h * stride);
        const int out_size = 2 + rng.uniform_int(6);
        const int ratio = 1 + rng.uniform_int(3);

        const Tensor got = roi_align(map, roi, out_size, ratio);
        const Tensor want = oracle::roi_align_bruteforce(map, roi, out_size, ratio);
        ASSERT_TRUE(got.same_shape(want));
        for (std::size_t i = 0; i < got.size(); ++i)
            worst = std::max(worst, std::abs(got[i] - want[i]));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(RoiAlignTest, ConstantMapGivesConstantOutput) {
    FeatureMap map;
    map.data = Tensor({2, 12, 12});
    map.data.fill(3.25);
    map.stride = 4;
    // RoI far from the border so no zero padding is sampled
    const Tensor out = roi_align(map, Box(8, 8, 40, 40), 5, 2);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 3.25, 1e-12);
}

TEST(RoiAlignTest, LinearInFeatures) {
    Rng rng(47);
    FeatureMap a = random_map(rng, 2, 10, 10, 2);
    FeatureMap b = random_map(rng, 2, 10, 10, 2);
    FeatureMap mix;
    mix.stride = 2;
    mix.data = Tensor({2, 10, 10});
    for (std::size_t i = 0; i < mix.data.size(); ++i)
        mix.data[i] = 1.5 * a.data[i] - 0.75 * b.data[i];

    const Box roi(3, 2, 15, 17);
    const Tensor oa = roi_align(a, roi, 4, 2);
    const Tensor ob = roi_align(b, roi, 4, 2);
    const Tensor om = roi_align(mix, roi, 4, 2);
    for (std::size_t i = 0; i < om.size(); ++i)
        EXPECT_NEAR(om[i], 1.5 * oa[i] - 0.75 * ob[i], 1e-9);
}

// <backward(g), F> == <g, forward(F)> for the linear map F -> roi_align(F).
TEST(RoiAlignTest, BackwardIsForwardAdjoint) {
    Rng rng(53);
    for (int t = 0; t < 100; ++t) {
        const int stride = 1 << rng.uniform_int(3);
        const FeatureMap map = random_map(rng, 2, 9, 11, stride);
        const Box roi = random_roi(rng, 11 * stride, 9 * stride);
        const int out_size = 3, ratio = 2;

        const Tensor fwd = roi_align(map, roi, out_size, ratio);
        Tensor g({2, out_size, out_size});
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.uniform(-1.0, 1.0);

        Tensor grad_map({2, 9, 11});
        roi_align_backward(g, roi, stride, ratio, grad_map);

        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) lhs += g[i] * fwd[i];
        for (std::size_t i = 0; i < grad_map.size(); ++i) rhs += grad_map[i] * map.data[i];
        EXPECT_NEAR(lhs, rhs, 1e-9);
    }
}

TEST(RoiAlignTest, BackwardAccumulatesAcrossRois) {
    Rng rng(59);
    const FeatureMap map = random_map(rng, 1, 8, 8, 1);
    Tensor g({1, 2, 2});
    g.fill(1.0);
    Tensor acc({1, 8, 8}), one({1, 8, 8}), two({1, 8, 8});
    const Box r1(1, 1, 5, 5), r2(2, 3, 7, 6);
    roi_align_backward(g, r1, 1, 2, acc);
    roi_align_backward(g, r2, 1, 2, acc);
    roi_align_backward(g, r1, 1, 2, one);
    roi_align_backward(g, r2, 1, 2, two);
    for (std::size_t i = 0; i < acc.size(); ++i)
        EXPECT_NEAR(acc[i], one[i] + two[i], 1e-12);
}

TEST(RoiAlignTest, RejectsDegenerateRoi) {
    Rng rng(61);
    const FeatureMap map = random_map(rng, 1, 8, 8, 16);
    // 1e-7 px wide in feature units after dividing by stride 16
    EXPECT_THROW(roi_align(map, Box(4, 4, 4 + 1e-8, 12), 3, 2), std::invalid_argument);
    EXPECT_THROW(roi_align(map, Box(4, 4, 12, 12), 0, 2), std::invalid_argument);
    EXPECT_THROW(roi_align(map, Box(4, 4, 12, 12), 3, 0), std::invalid_argument);
}

TEST(KeypointTargetTest, EncodeDecodeStaysWithinHalfCell) {
    Rng rng(67);
    for (int t = 0; t < 1000; ++t) {
        const Box roi = random_roi(rng, 120, 120);
        const int m = 56;
        std::vector<Point> pts;
        for (int k = 0; k < 5; ++k)
            pts.push_back({rng.uniform(roi.x1, roi.x2), rng.uniform(roi.y1, roi.y2)});
        const std::vector<KeypointTarget> enc = encode_keypoint_target(roi, pts, m);

        KeypointMask mask(5, m);
        for (int k = 0; k < 5; ++k) {
            ASSERT_TRUE(enc[k].valid);
            mask.at(k, enc[k].row, enc[k].col) = 10.0;
        }
        const std::vector<Point> dec = decode_keypoint_mask(mask, roi);
        const double cell_x = roi.width() / m, cell_y = roi.height() / m;
        for (int k = 0; k < 5; ++k) {
            EXPECT_LE(std::abs(dec[k].x - pts[k].x), 0.5 * cell_x + 1e-9);
            EXPECT_LE(std::abs(dec[k].y - pts[k].y), 0.5 * cell_y + 1e-9);
        }
    }
}

TEST(KeypointTargetTest, OutsideRoiMarkedInvalid) {
    const Box roi(10, 10, 20, 20);
    const std::vector<Point> pts = {{5, 15}, {15, 15}, {15, 25}, {10, 10}, {20, 20}};
    const std::vector<KeypointTarget> enc = encode_keypoint_target(roi, pts, 14);
    EXPECT_FALSE(enc[0].valid);
    EXPECT_TRUE(enc[1].valid);
    EXPECT_FALSE(enc[2].valid);
    EXPECT_TRUE(enc[3].valid); // on the closed boundary
    EXPECT_TRUE(enc[4].valid);
    EXPECT_EQ(enc[3].row, 0);
    EXPECT_EQ(enc[3].col, 0);
    EXPECT_EQ(enc[4].row, 13);
    EXPECT_EQ(enc[4].col, 13);
}

TEST(KeypointTargetTest, DecodePicksArgmaxCellCenter) {
    KeypointMask mask(1, 4);
    mask.at(0, 2, 1) = 5.0;
    const Box roi(0, 0, 8, 16);
    const std::vector<Point> dec = decode_keypoint_mask(mask, roi);
    EXPECT_DOUBLE_EQ(dec[0].x, (1 + 0.5) * 8.0 / 4.0);
    EXPECT_DOUBLE_EQ(dec[0].y, (2 + 0.5) * 16.0 / 4.0);
}

TEST(KeypointTargetTest, EncodeCentroidMatchesCellArithmetic) {
    const Box roi(4, 4, 12, 12);
    // landmark at 35% / 75% of the RoI with m = 4 -> cells 1 and 3
    const std::vector<Point> pts = {{4 + 0.35 * 8, 4 + 0.75 * 8}};
    const std::vector<KeypointTarget> enc = encode_keypoint_target(roi, pts, 4);
    EXPECT_EQ(enc[0].col, 1);
    EXPECT_EQ(enc[0].row, 3);
}
