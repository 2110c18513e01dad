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

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskkit/checkpoint.hpp"
#include "maskkit/metrics.hpp"
#include "maskkit/model.hpp"
#include "maskkit/suppression.hpp"
#include "maskkit/synthdata.hpp"

namespace maskkit {

struct DetectConfig {
    double conf_floor = 0.02;
    double nms_thresh = 0.6;
    int pre_nms_top_k = 1000;
    int max_detections = 100;
    bool multi_scale = false; // adds scales 0.5 and 2.0
    bool flip = false;        // adds horizontally flipped passes
    double soft_nms_sigma = 0.5;
    double soft_nms_floor = 0.001;
    double vote_iou = 0.5;
    bool landmarks = true;
};

struct DetectedFace {
    Detection det;
    std::vector<Point> landmarks;
};

/// Zero-pads an image at the bottom/right to the next multiple of m.
inline Tensor pad_to_multiple(const Tensor& img, int m) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    const int PH = (H + m - 1) / m * m, PW = (W + m - 1) / m * m;
    if (PH == H && PW == W) return img;
    Tensor out({C, PH, PW});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) out.at(c, y, x) = img.at(c, y, x);
    return out;
}

/// Converts head outputs to scored boxes: logistic scores, delta decode
/// against the anchors, clip to [0,w]x[0,h], drop sub-threshold and
/// degenerate boxes. `source` tags the augmentation pass.
inline std::vector<Detection> decode_detections(const AnchorGrid& grid, const Tensor& cls_flat,
                                                const Tensor& box_flat, double conf_floor,
                                                double image_w, double image_h, int source = 0) {
    if (cls_flat.size() != grid.size() || box_flat.size() != grid.size() * 4)
        throw std::invalid_argument("decode_detections: head/grid size mismatch");
    std::vector<Detection> out;
    // Diverging heads can emit NaN or absurd deltas; drop those predictions
    // instead of constructing invalid boxes (comparison is NaN-rejecting).
    const auto sane = [](double v) { return std::abs(v) < 1e6; };
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double score = logistic(cls_flat[i]);
        if (!(score >= conf_floor)) continue;
        const BoxDelta d{box_flat[i * 4 + 0], box_flat[i * 4 + 1], box_flat[i * 4 + 2],
                         box_flat[i * 4 + 3]};
        if (!sane(d.dx) || !sane(d.dy) || !sane(d.dw) || !sane(d.dh)) continue;
        const Box raw = decode_deltas(grid.boxes[i], d).box;
        const double x1 = std::clamp(raw.x1, 0.0, image_w), y1 = std::clamp(raw.y1, 0.0, image_h);
        const double x2 = std::clamp(raw.x2, 0.0, image_w), y2 = std::clamp(raw.y2, 0.0, image_h);
        if (x2 - x1 < 1e-3 || y2 - y1 < 1e-3) continue;
        out.push_back(Detection{Box(x1, y1, x2, y2), score, source});
    }
    return out;
}

namespace detail {

inline void keep_top_k(std::vector<Detection>& dets, int k) {
    if (static_cast<int>(dets.size()) <= k) return;
    std::vector<std::size_t> order = score_order(dets);
    std::vector<Detection> top;
    top.reserve(k);
    for (int i = 0; i < k; ++i) top.push_back(dets[order[i]]);
    dets.swap(top);
}

} // namespace detail

/// Full detector: forward pass(es), decode, suppression, landmark decode.
///
/// Every pass (multi_scale and flip add passes beyond the identity one) is
/// Gaussian Soft-NMS'd, the survivors are pooled in original image
/// coordinates, reduced by greedy NMS and refined by box voting; landmarks
/// always come from the unaugmented pass's features. Soft-NMS before the
/// greedy pass matters even single-scale: near-duplicate boxes that greedy
/// NMS cannot merge keep outranking true detections unless their scores are
/// decayed first.
inline std::vector<DetectedFace> detect(const ToyModel& model, const Tensor& image,
                                        const DetectConfig& cfg) {
    const int H = image.dim(1), W = image.dim(2);
    struct Pass {
        double scale;
        bool flip;
    };
    std::vector<Pass> passes{{1.0, false}};
    if (cfg.multi_scale) {
        passes.push_back({0.5, false});
        passes.push_back({2.0, false});
    }
    if (cfg.flip) {
        const std::size_t n = passes.size();
        for (std::size_t i = 0; i < n; ++i) passes.push_back({passes[i].scale, true});
    }

    ModelForward base_fwd;
    std::vector<Detection> pool;
    for (std::size_t pi = 0; pi < passes.size(); ++pi) {
        const Pass& pass = passes[pi];
        const int sw = std::max(1, static_cast<int>(std::lround(W * pass.scale)));
        const int sh = std::max(1, static_cast<int>(std::lround(H * pass.scale)));
        Tensor img = (pass.scale == 1.0) ? image : resize_bilinear(image, sh, sw);
        if (pass.flip) img = hflip_image(img);
        const Tensor padded = pad_to_multiple(img, 32);
        ModelForward fwd = model.forward(padded, false);
        const AnchorGrid grid =
            generate_anchors(model.config().anchors, padded.dim(2), padded.dim(1));
        std::vector<Detection> dets =
            decode_detections(grid, fwd.cls_flat->value, fwd.box_flat->value, cfg.conf_floor,
                              sw, sh, static_cast<int>(pi));
        if (pass.scale == 1.0 && !pass.flip) base_fwd = std::move(fwd);

        const double fx = static_cast<double>(sw) / W, fy = static_cast<double>(sh) / H;
        for (auto& d : dets) {
            Box b = d.box;
            if (pass.flip) b = Box(sw - b.x2, b.y1, sw - b.x1, b.y2);
            d.box = Box(b.x1 / fx, b.y1 / fy, b.x2 / fx, b.y2 / fy);
        }
        detail::keep_top_k(dets, cfg.pre_nms_top_k);
        const std::vector<Detection> survivors =
            soft_nms(dets, cfg.soft_nms_sigma, cfg.soft_nms_floor);
        pool.insert(pool.end(), survivors.begin(), survivors.end());
    }

    std::vector<Detection> kept = nms_greedy(pool, cfg.nms_thresh);
    if (static_cast<int>(kept.size()) > cfg.max_detections) kept.resize(cfg.max_detections);
    const std::vector<Detection> final_dets = box_vote(kept, pool, cfg.vote_iou);

    std::vector<DetectedFace> out;
    out.reserve(final_dets.size());
    for (const auto& d : final_dets) {
        DetectedFace f;
        f.det = d;
        if (cfg.landmarks && d.box.width() > 1e-3 && d.box.height() > 1e-3) {
            const ad::NodePtr logits = model.keypoint_head(base_fwd, d.box);
            KeypointMask mask(logits->value.dim(0), logits->value.dim(1));
            std::copy(logits->value.data(), logits->value.data() + logits->value.size(),
                      mask.logits.begin());
            f.landmarks = decode_keypoint_mask(mask, d.box);
        }
        out.push_back(std::move(f));
    }
    return out;
}

// ---------------------------------------------------------------------------
// corpus evaluation

struct EvalSummary {
    double ap = 0.0;
    double mean_nme = std::numeric_limits<double>::infinity(); // over matched faces
    std::size_t n_images = 0, n_faces = 0, n_detections = 0, n_matched = 0;
    PrCurve pr;
    CedCurve ced;
};

inline EvalSummary evaluate_scenes(const ToyModel& model, const std::vector<Scene>& scenes,
                                   const DetectConfig& dcfg, const EvalConfig& ecfg,
                                   std::vector<std::vector<DetectedFace>>* all_dets = nullptr) {
    ecfg.validate();
    EvalSummary s;
    s.n_images = scenes.size();
    std::vector<std::vector<Detection>> det_boxes(scenes.size());
    std::vector<std::vector<Box>> gt_boxes(scenes.size());
    std::vector<double> face_nmes;
    double nme_acc = 0.0;

    for (std::size_t im = 0; im < scenes.size(); ++im) {
        const Scene& scene = scenes[im];
        const std::vector<DetectedFace> faces = detect(model, scene.image, dcfg);
        s.n_detections += faces.size();
        for (const auto& f : faces) det_boxes[im].push_back(f.det);
        for (const auto& g : scene.faces) gt_boxes[im].push_back(g.box);
        s.n_faces += scene.faces.size();

        // score-greedy one-to-one matching for the landmark metrics
        std::vector<Box> pred_boxes;
        for (const auto& f : faces) pred_boxes.push_back(f.det.box);
        const std::vector<std::size_t> order = detail::score_order(det_boxes[im]);
        const std::vector<std::int32_t> match =
            greedy_match_predictions(pred_boxes, order, gt_boxes[im], ecfg.iou_match_thresh);
        std::vector<double> per_gt(scene.faces.size(), std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < match.size(); ++i) {
            if (match[i] < 0 || faces[i].landmarks.empty()) continue;
            const FaceAnnotation& gt = scene.faces[match[i]];
            const double norm = (ecfg.nme_normalizer == NmeNormalizer::bbox_sqrt_area)
                                    ? nme_normalizer_bbox(gt.box)
                                    : nme_normalizer_inter_ocular(gt.landmarks);
            const double err = nme(faces[i].landmarks, gt.landmarks, norm, &gt.visible);
            per_gt[match[i]] = err;
            nme_acc += err;
            ++s.n_matched;
        }
        face_nmes.insert(face_nmes.end(), per_gt.begin(), per_gt.end());
        if (all_dets) all_dets->push_back(faces);
    }

    s.pr = pr_curve_ap(det_boxes, gt_boxes, ecfg);
    s.ap = s.pr.ap;
    if (s.n_matched > 0) s.mean_nme = nme_acc / static_cast<double>(s.n_matched);
    if (!face_nmes.empty()) s.ced = ced_curve(face_nmes);
    return s;
}

inline nlohmann::ordered_json summary_to_json(const EvalSummary& s) {
    nlohmann::ordered_json j;
    j["ap"] = s.ap;
    j["mean_nme"] = std::isfinite(s.mean_nme) ? nlohmann::ordered_json(s.mean_nme)
                                              : nlohmann::ordered_json(nullptr);
    j["ced_at_0.95"] = [&]() -> nlohmann::ordered_json {
        if (s.n_faces == 0) return nullptr;
        const double v = s.ced.at(0.95);
        return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
    }();
    j["n_images"] = s.n_images;
    j["n_faces"] = s.n_faces;
    j["n_detections"] = s.n_detections;
    j["n_matched"] = s.n_matched;
    return j;
}

/// One JSONL record per detection: {image, box, score, landmarks}.
inline nlohmann::ordered_json detection_to_json(const std::string& image_id,
                                                const DetectedFace& face) {
    nlohmann::ordered_json j;
    j["image"] = image_id;
    j["box"] = {face.det.box.x1, face.det.box.y1, face.det.box.x2, face.det.box.y2};
    j["score"] = face.det.score;
    j["landmarks"] = nlohmann::ordered_json::array();
    for (const auto& p : face.landmarks) j["landmarks"].push_back({p.x, p.y});
    return j;
}

inline std::string pr_curve_csv(const PrCurve& pr) {
    std::vector<std::pair<double, double>> pts;
    pts.reserve(pr.points.size());
    for (const auto& p : pr.points) pts.emplace_back(p.recall, p.precision);
    return curve_to_csv("recall", "precision", pts);
}

inline std::string ced_curve_csv(const CedCurve& ced) {
    std::vector<std::pair<double, double>> pts;
    pts.reserve(ced.points.size());
    for (const auto& p : ced.points) pts.emplace_back(p.nme, p.fraction);
    return curve_to_csv("nme", "fraction", pts);
}

} // namespace maskkit
