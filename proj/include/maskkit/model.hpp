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
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskkit/autodiff.hpp"
#include "maskkit/geometry.hpp"
#include "maskkit/rng.hpp"

namespace maskkit {

/// Desk-scale detector: a frozen random backbone feeds a trainable FPN,
/// a shared context module, shared 1x1 class/box heads (3 anchors per cell),
/// and a mask-style keypoint head (RoIAlign -> convs -> deconv -> bilinear).
struct ToyModelConfig {
    int backbone_channels = 8;
    int fpn_channels = 16;
    int num_keypoints = 5;
    int pooled_size = 14;
    int mask_size = 56;
    int sampling_ratio = 2;
    int k0 = 3;
    double cls_prior = 0.01;
    AnchorConfig anchors;

    int num_anchors() const { return anchors.anchors_per_cell(); }

    void validate() const {
        anchors.validate();
        if (backbone_channels <= 0 || fpn_channels <= 0 || num_keypoints <= 0)
            throw std::invalid_argument("ToyModelConfig: channel counts must be positive");
        if (fpn_channels % 2 != 0 || fpn_channels / 4 <= 0)
            throw std::invalid_argument("ToyModelConfig: fpn_channels must be divisible by 4");
        if (mask_size != 4 * pooled_size)
            throw std::invalid_argument("ToyModelConfig: mask_size must be 4 * pooled_size");
        if (!(cls_prior > 0.0 && cls_prior < 1.0))
            throw std::invalid_argument("ToyModelConfig: cls_prior must be in (0,1)");
        if (anchors.levels() != 5)
            throw std::invalid_argument("ToyModelConfig: expects a five-level pyramid");
    }
};

inline void to_json(nlohmann::ordered_json& j, const ToyModelConfig& c) {
    j = nlohmann::ordered_json{{"backbone_channels", c.backbone_channels},
                               {"fpn_channels", c.fpn_channels},
                               {"num_keypoints", c.num_keypoints},
                               {"pooled_size", c.pooled_size},
                               {"mask_size", c.mask_size},
                               {"sampling_ratio", c.sampling_ratio},
                               {"k0", c.k0},
                               {"cls_prior", c.cls_prior}};
    nlohmann::ordered_json ja;
    to_json(ja, c.anchors);
    j["anchors"] = std::move(ja);
}

inline void from_json(const nlohmann::ordered_json& j, ToyModelConfig& c) {
    j.at("backbone_channels").get_to(c.backbone_channels);
    j.at("fpn_channels").get_to(c.fpn_channels);
    j.at("num_keypoints").get_to(c.num_keypoints);
    j.at("pooled_size").get_to(c.pooled_size);
    j.at("mask_size").get_to(c.mask_size);
    j.at("sampling_ratio").get_to(c.sampling_ratio);
    j.at("k0").get_to(c.k0);
    j.at("cls_prior").get_to(c.cls_prior);
    from_json(j.at("anchors"), c.anchors);
    c.validate();
}

struct LevelOutput {
    ad::NodePtr features; // context output [F, h, w]
    ad::NodePtr cls;      // [A, h, w]
    ad::NodePtr box;      // [A*4, h, w]
};

struct ModelForward {
    std::vector<LevelOutput> levels; // P2..P6
    ad::NodePtr cls_flat;            // [N] logits in anchor order
    ad::NodePtr box_flat;            // [N*4] deltas in anchor order
    std::map<std::string, ad::NodePtr> pnodes;
    bool train = false;
    // Inputs of the non-smooth ops (relu, max pool) downstream of trainable
    // parameters. Gradient probes inspect these to confirm the forward pass
    // evaluates clear of non-differentiable points.
    std::vector<ad::NodePtr> relu_inputs;
    std::vector<ad::NodePtr> pool_inputs;
};

class ToyModel {
public:
    ToyModel(ToyModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
        cfg_.validate();
        init_tensors();
        Rng rng(mix_seed(seed_));
        for (auto& [name, t] : tensors_) init_tensor(name, t, rng);
    }

    const ToyModelConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }

    /// All named tensors in a fixed order (frozen backbone included).
    std::vector<std::pair<std::string, Tensor>>& tensors() { return tensors_; }
    const std::vector<std::pair<std::string, Tensor>>& tensors() const { return tensors_; }

    /// Trainable tensors (everything outside the backbone).
    std::vector<std::pair<std::string, Tensor*>> parameters() {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (auto& [name, t] : tensors_)
            if (name.rfind("bb.", 0) != 0) out.emplace_back(name, &t);
        return out;
    }

    Tensor& tensor(const std::string& name) {
        for (auto& [n, t] : tensors_)
            if (n == name) return t;
        throw std::invalid_argument("ToyModel: unknown tensor " + name);
    }
    const Tensor& tensor(const std::string& name) const {
        return const_cast<ToyModel*>(this)->tensor(name);
    }

    /// Backbone features C2..C5 (strides 4..32); frozen, so kept off-graph.
    std::array<Tensor, 4> backbone(const Tensor& image) const {
        if (image.rank() != 3 || image.dim(0) != 3)
            throw std::invalid_argument("ToyModel: image must be [3,H,W]");
        if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0)
            throw std::invalid_argument("ToyModel: image dims must be multiples of 32");
        std::array<Tensor, 4> cs;
        Tensor x = image;
        for (int s = 1; s <= 5; ++s) {
            x = conv2d(x, tensor("bb.conv" + std::to_string(s) + ".w"),
                       tensor("bb.conv" + std::to_string(s) + ".b"));
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::max(0.0, x[i]);
            x = maxpool2_ceil(x);
            if (s >= 2) cs[s - 2] = x;
        }
        return cs;
    }

    /// Detection forward pass. With train=true parameters become graph leaves
    /// whose grads are read back after ad::backward.
    ModelForward forward(const Tensor& image, bool train) const {
        ModelForward fwd;
        fwd.train = train;
        for (const auto& [name, t] : tensors_)
            if (name.rfind("bb.", 0) != 0)
                fwd.pnodes[name] = train ? ad::param(t) : ad::constant(t);
        auto P = [&](const std::string& name) { return fwd.pnodes.at(name); };

        const std::array<Tensor, 4> cs = backbone(image);
        std::array<ad::NodePtr, 4> lat;
        for (int l = 0; l < 4; ++l)
            lat[l] = ad::conv2d_op(ad::constant(cs[l]), P("fpn.lat" + std::to_string(l + 2) + ".w"),
                                   P("fpn.lat" + std::to_string(l + 2) + ".b"));
        std::array<ad::NodePtr, 5> pyr; // P2..P6
        pyr[3] = lat[3];
        for (int l = 2; l >= 0; --l) pyr[l] = ad::add_op(lat[l], ad::upsample_nearest2_op(pyr[l + 1]));
        fwd.pool_inputs.push_back(pyr[3]);
        pyr[4] = ad::maxpool2_op(pyr[3]);

        const int A = cfg_.num_anchors();
        std::vector<ad::NodePtr> cls_parts, box_parts;
        for (int l = 0; l < 5; ++l) {
            ad::NodePtr ctx = context_module(fwd, pyr[l]);
            ad::NodePtr cls = ad::conv2d_op(ctx, P("head.cls.w"), P("head.cls.b"));
            ad::NodePtr box = ad::conv2d_op(ctx, P("head.box.w"), P("head.box.b"));
            fwd.levels.push_back(LevelOutput{ctx, cls, box});
            cls_parts.push_back(ad::anchor_flatten_op(cls, A, 1));
            box_parts.push_back(ad::anchor_flatten_op(box, A, 4));
        }
        fwd.cls_flat = ad::concat_flat_op(cls_parts);
        fwd.box_flat = ad::concat_flat_op(box_parts);
        return fwd;
    }

    /// Keypoint logits [K, m, m] for one RoI, pooled from the pyramid level
    /// chosen by the k0 rule.
    ad::NodePtr keypoint_head(ModelForward& fwd, const Box& roi) const {
        const int level = assign_level(roi, cfg_.k0);
        const int stride = cfg_.anchors.strides[level - 2];
        auto P = [&](const std::string& name) { return fwd.pnodes.at(name); };
        auto R = [&](const ad::NodePtr& x) {
            fwd.relu_inputs.push_back(x);
            return ad::relu_op(x);
        };
        ad::NodePtr h = ad::roi_align_op(fwd.levels[level - 2].features, stride, roi,
                                         cfg_.pooled_size, cfg_.sampling_ratio);
        h = R(ad::conv2d_op(h, P("kp.conv1.w"), P("kp.conv1.b")));
        h = R(ad::conv2d_op(h, P("kp.conv2.w"), P("kp.conv2.b")));
        h = ad::conv_transpose_op(h, P("kp.deconv.w"), P("kp.deconv.b"));
        return ad::bilinear_up2_op(h);
    }

private:
    ad::NodePtr context_module(ModelForward& fwd, const ad::NodePtr& p) const {
        auto P = [&](const std::string& name) { return fwd.pnodes.at(name); };
        auto R = [&](const ad::NodePtr& x) {
            fwd.relu_inputs.push_back(x);
            return ad::relu_op(x);
        };
        ad::NodePtr b1 = ad::conv2d_op(p, P("ctx.c1.w"), P("ctx.c1.b"));
        ad::NodePtr t = R(ad::conv2d_op(p, P("ctx.c2.w"), P("ctx.c2.b")));
        ad::NodePtr b2 = ad::conv2d_op(t, P("ctx.c3.w"), P("ctx.c3.b"));
        ad::NodePtr b3 = ad::conv2d_op(R(b2), P("ctx.c4.w"), P("ctx.c4.b"));
        return R(ad::concat_channels_op({b1, b2, b3}));
    }

    void add(const std::string& name, std::vector<int> dims) {
        tensors_.emplace_back(name, Tensor(dims));
    }

    void init_tensors() {
        const int B = cfg_.backbone_channels, F = cfg_.fpn_channels, A = cfg_.num_anchors();
        const int half = F / 2, quarter = F / 4, K = cfg_.num_keypoints;
        add("bb.conv1.w", {B, 3, 3, 3});
        add("bb.conv1.b", {B});
        for (int s = 2; s <= 5; ++s) {
            add("bb.conv" + std::to_string(s) + ".w", {B, B, 3, 3});
            add("bb.conv" + std::to_string(s) + ".b", {B});
        }
        for (int l = 2; l <= 5; ++l) {
            add("fpn.lat" + std::to_string(l) + ".w", {F, B, 1, 1});
            add("fpn.lat" + std::to_string(l) + ".b", {F});
        }
        add("ctx.c1.w", {half, F, 3, 3});
        add("ctx.c1.b", {half});
        add("ctx.c2.w", {quarter, F, 3, 3});
        add("ctx.c2.b", {quarter});
        add("ctx.c3.w", {quarter, quarter, 3, 3});
        add("ctx.c3.b", {quarter});
        add("ctx.c4.w", {quarter, quarter, 3, 3});
        add("ctx.c4.b", {quarter});
        add("head.cls.w", {A, F, 1, 1});
        add("head.cls.b", {A});
        add("head.box.w", {A * 4, F, 1, 1});
        add("head.box.b", {A * 4});
        add("kp.conv1.w", {F, F, 3, 3});
        add("kp.conv1.b", {F});
        add("kp.conv2.w", {F, F, 3, 3});
        add("kp.conv2.b", {F});
        add("kp.deconv.w", {F, K, 4, 4});
        add("kp.deconv.b", {K});
    }

    void init_tensor(const std::string& name, Tensor& t, Rng& rng) {
        if (name == "head.cls.b") {
            t.fill(-std::log((1.0 - cfg_.cls_prior) / cfg_.cls_prior));
            return;
        }
        if (name.ends_with(".b")) {
            t.zero();
            return;
        }
        double std_dev;
        if (name == "head.cls.w" || name == "head.box.w") {
            std_dev = 0.01;
        } else {
            // He initialization over fan-in; deconv weight is [IC, OC, 4, 4]
            const std::size_t fan_in = (name == "kp.deconv.w")
                                           ? static_cast<std::size_t>(t.dim(0)) * 16
                                           : static_cast<std::size_t>(t.dim(1)) * t.dim(2) * t.dim(3);
            std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
        }
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * std_dev;
    }

    ToyModelConfig cfg_;
    std::uint64_t seed_ = 0;
    std::vector<std::pair<std::string, Tensor>> tensors_;
};

// ---------------------------------------------------------------------------
// analytic multiply-accumulate counts

struct MacBreakdown {
    std::uint64_t backbone = 0;
    std::uint64_t fpn = 0;
    std::uint64_t context = 0;
    std::uint64_t heads = 0;
    std::uint64_t keypoint_per_roi = 0;

    std::uint64_t detection() const { return backbone + fpn + context + heads; }
    double keypoint_ratio(int rois) const {
        return static_cast<double>(keypoint_per_roi) * rois / static_cast<double>(detection());
    }
};

/// Counts multiply-accumulates of one forward pass at the given input size.
/// Convolutions dominate; resampling taps are counted at 4 MACs per output.
inline MacBreakdown count_macs(const ToyModelConfig& cfg, int image_h, int image_w) {
    cfg.validate();
    if (image_h % 32 != 0 || image_w % 32 != 0)
        throw std::invalid_argument("count_macs: image dims must be multiples of 32");
    MacBreakdown mac;
    const std::uint64_t B = cfg.backbone_channels, F = cfg.fpn_channels;
    const std::uint64_t A = cfg.num_anchors(), K = cfg.num_keypoints;
    const std::uint64_t half = F / 2, quarter = F / 4;

    auto cells = [](int h, int w) { return static_cast<std::uint64_t>(h) * w; };
    int h = image_h, w = image_w;
    std::vector<std::uint64_t> level_cells; // P2..P6
    for (int s = 1; s <= 5; ++s) {
        const std::uint64_t ic = (s == 1) ? 3 : B;
        mac.backbone += ic * B * 9 * cells(h, w);
        h = (h + 1) / 2;
        w = (w + 1) / 2;
        if (s >= 2) level_cells.push_back(cells(h, w));
    }
    level_cells.push_back(cells((h + 1) / 2, (w + 1) / 2)); // P6

    for (int l = 0; l < 4; ++l) mac.fpn += B * F * level_cells[l];            // laterals
    for (int l = 0; l < 3; ++l) mac.fpn += F * level_cells[l];                // top-down adds
    for (int l = 0; l < 5; ++l) {
        mac.context += (F * half * 9 + F * quarter * 9 + 2 * quarter * quarter * 9) * level_cells[l];
        mac.heads += (F * A + F * A * 4) * level_cells[l];
    }

    const std::uint64_t p = cfg.pooled_size, m = cfg.mask_size;
    const std::uint64_t r = cfg.sampling_ratio;
    mac.keypoint_per_roi += F * p * p * r * r * 4;     // roi_align taps
    mac.keypoint_per_roi += 2 * F * F * 9 * p * p;     // two 3x3 convs
    mac.keypoint_per_roi += F * K * 16 * p * p;        // deconv
    mac.keypoint_per_roi += K * m * m * 4;             // bilinear up
    return mac;
}

} // namespace maskkit
