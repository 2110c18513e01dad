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

#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "maskkit/losses.hpp"
#include "maskkit/matching.hpp"
#include "maskkit/model.hpp"
#include "maskkit/optimizer.hpp"
#include "maskkit/pipeline.hpp"
#include "maskkit/rng.hpp"
#include "maskkit/synthdata.hpp"

namespace maskkit {

struct TrainConfig {
    int steps = 2500;
    std::uint64_t seed = 0;
    int image_size = 160;
    LossConfig loss;
    OptimizerConfig opt;
    AugmentConfig aug;
    int max_kp_rois = 8;
    double proposal_conf = 0.02;
    double proposal_nms = 0.6;
    double proposal_keep_iou = 0.6;
    int pre_nms_top_k = 256;
    double divergence_factor = 10.0;
    int divergence_window = 100;
    int log_every = 100;

    void validate() const {
        if (steps <= 0 || image_size <= 0 || image_size % 32 != 0)
            throw std::invalid_argument("TrainConfig: steps > 0 and image_size % 32 == 0 required");
        if (max_kp_rois < 0 || pre_nms_top_k <= 0)
            throw std::invalid_argument("TrainConfig: bad proposal limits");
        if (!(divergence_factor > 1.0) || divergence_window <= 0)
            throw std::invalid_argument("TrainConfig: bad divergence guard");
        loss.validate();
        opt.validate();
        aug.validate();
    }
};

/// Training defaults tuned for the synthetic corpus: crops match the scene
/// size and the scale jitter stays narrow so faces remain in anchor range.
inline TrainConfig default_train_config(int image_size) {
    TrainConfig cfg;
    cfg.image_size = image_size;
    cfg.aug.crop_size = image_size;
    cfg.aug.scale_min = 0.7;
    cfg.aug.scale_max = 1.3;
    return cfg;
}

struct TrainStepStats {
    int step = 0;
    double l_cls = 0.0, l_box = 0.0, l_kp = 0.0, l_total = 0.0;
    int n_pos = 0;
    int n_rois = 0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<TrainStepStats> trace;
    bool diverged = false;
    int steps_run = 0;
};

/// SGD training over augmented scenes. One scene per step: match anchors,
/// forward, focal + smooth-L1 on the heads, keypoint cross-entropy on RoIs
/// (ground-truth boxes plus high-IoU proposals), backward, update. Stops
/// early if the loss blows up or turns non-finite.
inline TrainResult train_toy(ToyModel& model, const std::vector<Scene>& scenes,
                             const TrainConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    if (scenes.empty()) throw std::invalid_argument("train_toy: no scenes");
    auto params = model.parameters();
    SgdOptimizer opt(cfg.opt, params);
    Rng rng(mix_seed(cfg.seed));
    const AnchorGrid grid =
        generate_anchors(model.config().anchors, cfg.image_size, cfg.image_size);
    const int m = model.config().mask_size;

    TrainResult result;
    double initial_loss = 0.0;
    int high_steps = 0;

    for (int step = 0; step < cfg.steps; ++step) {
        const std::size_t scene_idx = rng.uniform_int(static_cast<int>(scenes.size()));
        const std::uint64_t aug_seed = rng.bits();
        const Scene aug = augment_detection(scenes[scene_idx], cfg.aug, aug_seed);

        std::vector<Box> gt_boxes;
        gt_boxes.reserve(aug.faces.size());
        for (const auto& f : aug.faces) gt_boxes.push_back(f.box);
        const MatchResult match = match_anchors(grid.boxes, gt_boxes);

        ModelForward fwd = model.forward(aug.image, true);

        std::vector<BoxDelta> box_targets;
        for (std::size_t i = 0; i < match.size(); ++i)
            if (match.label[i] == AnchorLabel::positive)
                box_targets.push_back(encode_deltas(grid.boxes[i], gt_boxes[match.matched_gt[i]]));

        const ad::NodePtr l_cls = ad::focal_loss_op(fwd.cls_flat, match, cfg.loss);
        const ad::NodePtr l_box = ad::smooth_l1_op(fwd.box_flat, match, box_targets, cfg.loss);

        // keypoint RoIs: every ground-truth box, then matched proposals
        std::vector<ad::NodePtr> masks;
        std::vector<std::vector<KeypointTarget>> kp_targets;
        int n_rois = 0;
        if (cfg.loss.lambda_kp > 0.0 && !gt_boxes.empty()) {
            std::vector<std::pair<Box, int>> rois;
            for (std::size_t g = 0; g < gt_boxes.size(); ++g)
                if (static_cast<int>(rois.size()) < cfg.max_kp_rois)
                    rois.emplace_back(gt_boxes[g], static_cast<int>(g));
            if (static_cast<int>(rois.size()) < cfg.max_kp_rois) {
                std::vector<Detection> dets =
                    decode_detections(grid, fwd.cls_flat->value, fwd.box_flat->value,
                                      cfg.proposal_conf, cfg.image_size, cfg.image_size);
                detail::keep_top_k(dets, cfg.pre_nms_top_k);
                const std::vector<Proposal> props = filter_proposals(
                    dets, cfg.proposal_conf, cfg.proposal_nms, &gt_boxes, cfg.proposal_keep_iou);
                for (const auto& p : props) {
                    if (static_cast<int>(rois.size()) >= cfg.max_kp_rois) break;
                    rois.emplace_back(p.det.box, p.gt_index);
                }
            }
            for (const auto& [roi, g] : rois) {
                if (roi.width() < 1.0 || roi.height() < 1.0) continue;
                const FaceAnnotation& face = aug.faces[g];
                std::vector<KeypointTarget> t = encode_keypoint_target(roi, face.landmarks, m);
                int n_valid = 0;
                for (std::size_t k = 0; k < t.size(); ++k) {
                    if (!face.visible[k]) t[k].valid = false;
                    if (t[k].valid) ++n_valid;
                }
                if (n_valid == 0) continue;
                masks.push_back(model.keypoint_head(fwd, roi));
                kp_targets.push_back(std::move(t));
            }
            n_rois = static_cast<int>(masks.size());
        }
        const ad::NodePtr l_kp = ad::keypoint_ce_op(masks, kp_targets, cfg.loss);
        const ad::NodePtr total =
            ad::weighted_sum_op({l_cls, l_box, l_kp}, {1.0, 1.0, cfg.loss.lambda_kp});

        ad::backward(total);

        std::vector<const Tensor*> grads;
        grads.reserve(params.size());
        bool finite = std::isfinite(total->value[0]);
        for (const auto& [name, t] : params) {
            const Tensor& g = fwd.pnodes.at(name)->grad;
            for (std::size_t i = 0; finite && i < g.size(); ++i)
                if (!std::isfinite(g[i])) finite = false;
            grads.push_back(&g);
        }
        if (!finite) {
            result.diverged = true;
            if (log) *log << "step " << step << ": non-finite loss or gradient, aborting\n";
            break;
        }

        TrainStepStats st;
        st.step = step;
        st.l_cls = l_cls->value[0];
        st.l_box = l_box->value[0];
        st.l_kp = l_kp->value[0];
        st.l_total = total->value[0];
        st.n_pos = match.n_pos;
        st.n_rois = n_rois;
        st.lr = opt.step(params, grads, total->value[0]);
        result.trace.push_back(st);
        result.steps_run = step + 1;

        if (step == 0) initial_loss = std::max(st.l_total, 1e-6);
        if (st.l_total > cfg.divergence_factor * initial_loss) {
            if (++high_steps >= cfg.divergence_window) {
                result.diverged = true;
                if (log)
                    *log << "step " << step << ": loss " << st.l_total << " stuck above "
                         << cfg.divergence_factor << "x initial, aborting\n";
                break;
            }
        } else {
            high_steps = 0;
        }

        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
            *log << "step " << step << " loss " << st.l_total << " (cls " << st.l_cls << " box "
                 << st.l_box << " kp " << st.l_kp << ") n_pos " << st.n_pos << " rois " << st.n_rois
                 << " lr " << st.lr << "\n";
    }
    return result;
}

} // namespace maskkit
