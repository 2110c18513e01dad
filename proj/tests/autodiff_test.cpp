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
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "maskkit/autodiff.hpp"
#include "maskkit/gradcheck.hpp"
#include "maskkit/rng.hpp"

namespace {

using namespace maskkit;

Tensor random_tensor(Rng& rng, const std::vector<int>& dims) {
    Tensor t(dims);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

// Direct translation of the definition: out[oc,y,x] = b[oc] +
// sum_{ic,ky,kx} in[ic, y+ky-ph, x+kx-pw] * w[oc,ic,ky,kx], zero outside.
Tensor conv2d_reference(const Tensor& in, const Tensor& w, const Tensor& b) {
    const int IC = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    Tensor out({OC, H, W});
    for (int oc = 0; oc < OC; ++oc)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = b.at(oc);
                for (int ic = 0; ic < IC; ++ic)
                    for (int ky = 0; ky < KH; ++ky)
                        for (int kx = 0; kx < KW; ++kx) {
                            const int iy = y + ky - KH / 2;
                            const int ix = x + kx - KW / 2;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += in.at(ic, iy, ix) * w.at(oc, ic, ky, kx);
                        }
                out.at(oc, y, x) = acc;
            }
    return out;
}

// Scatter formulation: every input element deposits its 4x4 stamp at
// (2y+ky-1, 2x+kx-1).
Tensor conv_transpose_reference(const Tensor& in, const Tensor& w, const Tensor& b) {
    const int IC = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int OC = w.dim(1), OH = 2 * H, OW = 2 * W;
    Tensor out({OC, OH, OW});
    for (int oc = 0; oc < OC; ++oc)
        for (int y = 0; y < OH; ++y)
            for (int x = 0; x < OW; ++x) out.at(oc, y, x) = b.at(oc);
    for (int ic = 0; ic < IC; ++ic)
        for (int oc = 0; oc < OC; ++oc)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    for (int ky = 0; ky < 4; ++ky)
                        for (int kx = 0; kx < 4; ++kx) {
                            const int oy = 2 * y + ky - 1, ox = 2 * x + kx - 1;
                            if (oy < 0 || oy >= OH || ox < 0 || ox >= OW) continue;
                            out.at(oc, oy, ox) += in.at(ic, y, x) * w.at(ic, oc, ky, kx);
                        }
    return out;
}

// Half-pixel source coordinate with clamp-to-edge, evaluated per output pixel.
double bilinear_up2_reference_at(const Tensor& in, int c, int oy, int ox) {
    const int H = in.dim(1), W = in.dim(2);
    auto sample = [&](double v, int n, int* lo, int* hi, double* f) {
        double s = (v + 0.5) / 2.0 - 0.5;
        if (s < 0) s = 0;
        if (s > n - 1) s = n - 1;
        *lo = static_cast<int>(std::floor(s));
        *hi = std::min(*lo + 1, n - 1);
        *f = s - *lo;
    };
    int ylo, yhi, xlo, xhi;
    double fy, fx;
    sample(oy, H, &ylo, &yhi, &fy);
    sample(ox, W, &xlo, &xhi, &fx);
    const double top = in.at(c, ylo, xlo) * (1 - fx) + in.at(c, ylo, xhi) * fx;
    const double bot = in.at(c, yhi, xlo) * (1 - fx) + in.at(c, yhi, xhi) * fx;
    return top * (1 - fy) + bot * fy;
}

TEST(Conv2dTest, MatchesReferenceImplementation) {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int IC = 1 + rng.uniform_int(3), OC = 1 + rng.uniform_int(3);
        const int H = 2 + rng.uniform_int(6), W = 2 + rng.uniform_int(6);
        const int K = (trial % 2 == 0) ? 3 : 1;
        Tensor in = random_tensor(rng, {IC, H, W});
        Tensor w = random_tensor(rng, {OC, IC, K, K});
        Tensor b = random_tensor(rng, {OC});
        Tensor got = conv2d(in, w, b);
        Tensor want = conv2d_reference(in, w, b);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i)
            ASSERT_NEAR(got[i], want[i], 1e-12) << "trial " << trial << " elem " << i;
    }
}

TEST(Conv2dTest, HandWorkedIdentityAndShift) {
    // A 3x3 kernel with a single 1 at the center is the identity (plus bias).
    Tensor in({1, 3, 3});
    for (int i = 0; i < 9; ++i) in[i] = i + 1;
    Tensor w({1, 1, 3, 3});
    w.at(0, 0, 1, 1) = 1.0;
    Tensor b({1});
    b[0] = 0.5;
    Tensor out = conv2d(in, w, b);
    for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(out[i], in[i] + 0.5);

    // A 1 at kernel position (1, 2) reads the pixel to the right; the last
    // column falls off the padded edge and sees zero.
    Tensor ws({1, 1, 3, 3});
    ws.at(0, 0, 1, 2) = 1.0;
    Tensor zb({1});
    Tensor shifted = conv2d(in, ws, zb);
    EXPECT_DOUBLE_EQ(shifted.at(0, 0, 0), 2.0);
    EXPECT_DOUBLE_EQ(shifted.at(0, 1, 1), 6.0);
    EXPECT_DOUBLE_EQ(shifted.at(0, 0, 2), 0.0);
    EXPECT_DOUBLE_EQ(shifted.at(0, 2, 2), 0.0);
}

TEST(Conv2dTest, ResultIndependentOfThreadCount) {
    Rng rng(12);
    Tensor in = random_tensor(rng, {3, 9, 7});
    Tensor w = random_tensor(rng, {8, 3, 3, 3});
    Tensor b = random_tensor(rng, {8});
    Tensor serial, threaded;
    {
        ScopedThreadOverride guard(1);
        serial = conv2d(in, w, b);
    }
    {
        ScopedThreadOverride guard(4);
        threaded = conv2d(in, w, b);
    }
    ASSERT_EQ(serial.size(), threaded.size());
    for (std::size_t i = 0; i < serial.size(); ++i) EXPECT_EQ(serial[i], threaded[i]);
}

TEST(ConvTransposeTest, MatchesScatterReference) {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const int IC = 1 + rng.uniform_int(3), OC = 1 + rng.uniform_int(3);
        const int H = 1 + rng.uniform_int(5), W = 1 + rng.uniform_int(5);
        Tensor in = random_tensor(rng, {IC, H, W});
        Tensor w = random_tensor(rng, {IC, OC, 4, 4});
        Tensor b = random_tensor(rng, {OC});
        Tensor got = conv_transpose4x4s2(in, w, b);
        Tensor want = conv_transpose_reference(in, w, b);
        ASSERT_EQ(got.dim(1), 2 * H);
        ASSERT_EQ(got.dim(2), 2 * W);
        for (std::size_t i = 0; i < got.size(); ++i)
            ASSERT_NEAR(got[i], want[i], 1e-12) << "trial " << trial << " elem " << i;
    }
}

TEST(ConvTransposeTest, SingleInputPixelPaintsClippedStamp) {
    // One input pixel at (0,0) writes w[ky,kx] to (ky-1, kx-1): row/col -1
    // clip away, leaving a 3x3 corner stamp.
    Tensor in({1, 1, 1});
    in[0] = 2.0;
    Tensor w({1, 1, 4, 4});
    for (int ky = 0; ky < 4; ++ky)
        for (int kx = 0; kx < 4; ++kx) w.at(0, 0, ky, kx) = 10.0 * ky + kx;
    Tensor b({1});
    Tensor out = conv_transpose4x4s2(in, w, b);
    ASSERT_EQ(out.dim(1), 2);
    ASSERT_EQ(out.dim(2), 2);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 2.0 * 11.0);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 1), 2.0 * 12.0);
    EXPECT_DOUBLE_EQ(out.at(0, 1, 0), 2.0 * 21.0);
    EXPECT_DOUBLE_EQ(out.at(0, 1, 1), 2.0 * 22.0);
}

TEST(MaxPoolTest, CeilModeHandlesOddEdges) {
    // 5x5 input pools to 3x3; the last row/column windows are 1-wide.
    Tensor in({1, 5, 5});
    for (int i = 0; i < 25; ++i) in[i] = i;
    std::vector<std::size_t> argmax;
    Tensor out = maskkit::maxpool2_ceil(in, &argmax);
    ASSERT_EQ(out.dim(1), 3);
    ASSERT_EQ(out.dim(2), 3);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 6.0);
    EXPECT_DOUBLE_EQ(out.at(0, 0, 2), 9.0);
    EXPECT_DOUBLE_EQ(out.at(0, 2, 0), 21.0);
    EXPECT_DOUBLE_EQ(out.at(0, 2, 2), 24.0);
    EXPECT_EQ(argmax[0], 6u);
    EXPECT_EQ(argmax[8], 24u);
}

TEST(MaxPoolTest, TiesPickFirstScannedElement) {
    Tensor in({1, 2, 2});
    in[0] = in[1] = in[2] = in[3] = 3.0;
    std::vector<std::size_t> argmax;
    maskkit::maxpool2_ceil(in, &argmax);
    EXPECT_EQ(argmax[0], 0u);
}

TEST(UpsampleTest, NearestReplicatesEachPixel) {
    Tensor in({2, 2, 3});
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = static_cast<double>(i);
    Tensor out = upsample_nearest2(in);
    ASSERT_EQ(out.dim(1), 4);
    ASSERT_EQ(out.dim(2), 6);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 6; ++x)
                EXPECT_DOUBLE_EQ(out.at(c, y, x), in.at(c, y / 2, x / 2));
}

TEST(BilinearUp2Test, MatchesHalfPixelReference) {
    Rng rng(14);
    Tensor in = random_tensor(rng, {2, 4, 5});
    Tensor out = bilinear_up2(in);
    ASSERT_EQ(out.dim(1), 8);
    ASSERT_EQ(out.dim(2), 10);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 10; ++x)
                EXPECT_NEAR(out.at(c, y, x), bilinear_up2_reference_at(in, c, y, x), 1e-12);
}

TEST(BilinearUp2Test, ConstantInputStaysConstant) {
    Tensor in({1, 3, 3});
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = 4.25;
    Tensor out = bilinear_up2(in);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out[i], 4.25);
}

TEST(BilinearUp2Test, BackwardIsForwardAdjoint) {
    // <g, up(x)> == <up^T(g), x> for random g and x.
    Rng rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        const int C = 1 + rng.uniform_int(2);
        const int H = 2 + rng.uniform_int(4), W = 2 + rng.uniform_int(4);
        Tensor x = random_tensor(rng, {C, H, W});
        Tensor g = random_tensor(rng, {C, 2 * H, 2 * W});
        Tensor fwd = bilinear_up2(x);
        Tensor gin({C, H, W});
        bilinear_up2_backward(g, gin);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) lhs += g[i] * fwd[i];
        for (std::size_t i = 0; i < x.size(); ++i) rhs += gin[i] * x[i];
        EXPECT_NEAR(lhs, rhs, 1e-9);
    }
}

TEST(AnchorFlattenTest, LayoutMatchesAnchorGridOrder) {
    // Channel a*comps+d at (y, x) must land at ((y*W + x)*A + a)*comps + d.
    const int A = 3, comps = 2, H = 2, W = 3;
    Tensor v({A * comps, H, W});
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    ad::NodePtr flat = ad::anchor_flatten_op(ad::constant(v), A, comps);
    ASSERT_EQ(flat->value.size(), static_cast<std::size_t>(A * comps * H * W));
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int a = 0; a < A; ++a)
                for (int d = 0; d < comps; ++d)
                    EXPECT_DOUBLE_EQ(
                        flat->value[(static_cast<std::size_t>(y * W + x) * A + a) * comps + d],
                        v.at(a * comps + d, y, x));
}

TEST(AnchorFlattenTest, RejectsChannelMismatch) {
    Tensor v({5, 2, 2});
    EXPECT_THROW(ad::anchor_flatten_op(ad::constant(v), 3, 2), std::invalid_argument);
}

TEST(GraphTest, RequiresGradPropagatesFromParams) {
    Rng rng(16);
    Tensor xv = random_tensor(rng, {1, 4, 4});
    Tensor wv = random_tensor(rng, {2, 1, 3, 3});
    Tensor bv = random_tensor(rng, {2});

    ad::NodePtr frozen = ad::conv2d_op(ad::constant(xv), ad::constant(wv), ad::constant(bv));
    EXPECT_FALSE(frozen->requires_grad);
    EXPECT_EQ(frozen->grad.size(), 0u);

    ad::NodePtr w = ad::param(wv);
    ad::NodePtr live = ad::conv2d_op(ad::constant(xv), w, ad::constant(bv));
    EXPECT_TRUE(live->requires_grad);
    EXPECT_EQ(live->grad.size(), live->value.size());
}

TEST(GraphTest, BackwardRequiresScalarRoot) {
    ad::NodePtr x = ad::param(Tensor({2, 2, 2}));
    ad::NodePtr y = ad::relu_op(x);
    EXPECT_THROW(ad::backward(y), std::invalid_argument);
}

TEST(GraphTest, AddAndReluBackwardHandWorked) {
    // f = sum over relu(a + b) with one negative lane: dead lane gets zero.
    Tensor av({3}), bv({3});
    av[0] = 1.0, av[1] = -2.0, av[2] = 0.5;
    bv[0] = 0.5, bv[1] = 1.0, bv[2] = -0.25;
    ad::NodePtr a = ad::param(av);
    ad::NodePtr b = ad::param(bv);
    ad::NodePtr s = ad::relu_op(ad::add_op(a, b));
    auto ones = std::make_shared<std::vector<double>>(3, 1.0);
    ad::NodePtr total = gc::project_op(s, ones);
    ad::backward(total);
    EXPECT_DOUBLE_EQ(a->grad[0], 1.0);
    EXPECT_DOUBLE_EQ(a->grad[1], 0.0);
    EXPECT_DOUBLE_EQ(a->grad[2], 1.0);
    EXPECT_DOUBLE_EQ(b->grad[1], 0.0);
    EXPECT_DOUBLE_EQ(b->grad[2], 1.0);
}

TEST(GraphTest, SharedNodeAccumulatesBothPaths) {
    // f = <1, x + x> so df/dx = 2 everywhere; the diamond must not double-visit.
    Tensor xv({4});
    for (int i = 0; i < 4; ++i) xv[i] = 0.1 * (i + 1);
    ad::NodePtr x = ad::param(xv);
    ad::NodePtr s = ad::add_op(x, x);
    auto ones = std::make_shared<std::vector<double>>(4, 1.0);
    ad::backward(gc::project_op(s, ones));
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x->grad[i], 2.0);
}

TEST(GraphTest, WeightedSumMatchesCoefficients) {
    Tensor a({1}), b({1});
    a[0] = 2.0;
    b[0] = 3.0;
    ad::NodePtr na = ad::param(a), nb = ad::param(b);
    ad::NodePtr total = ad::weighted_sum_op({na, nb}, {1.5, -0.5});
    EXPECT_DOUBLE_EQ(total->value[0], 1.5 * 2.0 - 0.5 * 3.0);
    ad::backward(total);
    EXPECT_DOUBLE_EQ(na->grad[0], 1.5);
    EXPECT_DOUBLE_EQ(nb->grad[0], -0.5);
}

TEST(GraphTest, ComposedNetworkMatchesFiniteDifference) {
    // conv -> relu -> maxpool -> bilinear up -> projection, differentiated
    // with respect to the conv weight.
    Rng rng(17);
    Tensor xv = random_tensor(rng, {2, 6, 6});
    Tensor wv = random_tensor(rng, {3, 2, 3, 3});
    Tensor bv = random_tensor(rng, {3});
    auto r = gc::random_projection(rng, 3 * 6 * 6);

    auto eval = [&](const Tensor& w, Tensor* gw) {
        ad::NodePtr wn = gw ? ad::param(w) : ad::constant(w);
        ad::NodePtr y = ad::conv2d_op(ad::constant(xv), wn, ad::constant(bv));
        y = ad::relu_op(y);
        y = ad::maxpool2_op(y);
        y = ad::bilinear_up2_op(y);
        ad::NodePtr total = gc::project_op(y, r);
        if (gw) {
            ad::backward(total);
            *gw = wn->grad;
        }
        return total->value[0];
    };

    Tensor analytic;
    eval(wv, &analytic);
    Rng pick(18);
    for (int k = 0; k < 12; ++k) {
        const std::size_t c = pick.uniform_int(static_cast<int>(wv.size()));
        Tensor wp = wv, wm = wv;
        wp[c] += gc::kFdStep;
        wm[c] -= gc::kFdStep;
        const double fd = (eval(wp, nullptr) - eval(wm, nullptr)) / (2.0 * gc::kFdStep);
        const double denom = std::max({std::abs(fd), std::abs(analytic[c]), 1e-8});
        EXPECT_LT(std::abs(fd - analytic[c]) / denom, gc::kTolerance) << "coord " << c;
    }
}

TEST(GradCheckTest, OpProbesPassAtToleranceSingleInstance) {
    Rng rng(19);
    auto probes = make_op_probes(rng);
    EXPECT_GE(probes.size(), 8u);
    for (const auto& p : probes) {
        std::size_t coords = 0;
        const double err = gc::probe_rel_err(p, rng, &coords);
        EXPECT_LT(err, gc::kTolerance) << p.name;
        EXPECT_GT(coords, 0u) << p.name;
    }
}

TEST(GradCheckTest, LossProbesPassAtToleranceSingleInstance) {
    Rng rng(20);
    auto probes = make_loss_probes(rng);
    EXPECT_GE(probes.size(), 3u);
    for (const auto& p : probes) {
        std::size_t coords = 0;
        const double err = gc::probe_rel_err(p, rng, &coords);
        EXPECT_LT(err, gc::kTolerance) << p.name;
        EXPECT_GT(coords, 0u) << p.name;
    }
}

} // namespace
