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
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "maskkit/geometry.hpp"

namespace maskkit {

struct Detection {
    Box box;
    double score = 0.0;
    int source = 0; // scale/flip tag for test-time fusion

    Detection() = default;
    Detection(const Box& b, double s, int src = 0) : box(b), score(s), source(src) {
        if (!(score >= 0.0 && score <= 1.0))
            throw std::invalid_argument("Detection: score must be in [0,1]");
    }
};

namespace detail {

// Indices sorted by descending score, ties by ascending index.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    return order;
}

} // namespace detail

/// Greedy NMS: keep by descending score, drop anything overlapping a kept
/// detection with IoU > iou_thresh. Output is in score order.
inline std::vector<Detection> nms_greedy(const std::vector<Detection>& dets, double iou_thresh) {
    const auto order = detail::score_order(dets);
    std::vector<Detection> kept;
    std::vector<char> dead(dets.size(), 0);
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const std::size_t i = order[oi];
        if (dead[i]) continue;
        kept.push_back(dets[i]);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            const std::size_t j = order[oj];
            if (!dead[j] && iou(dets[i].box, dets[j].box) > iou_thresh) dead[j] = 1;
        }
    }
    return kept;
}

/// Gaussian Soft-NMS: each selection rescales remaining scores by
/// exp(-IoU^2 / sigma); detections dropping below score_floor are removed.
/// Returns the rescored detections in selection order.
inline std::vector<Detection> soft_nms(const std::vector<Detection>& dets, double sigma = 0.5,
                                       double score_floor = 0.001) {
    if (!(sigma > 0.0)) throw std::invalid_argument("soft_nms: sigma must be > 0");
    struct Item {
        Detection det;
        std::size_t idx;
    };
    std::vector<Item> pool;
    pool.reserve(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) pool.push_back({dets[i], i});

    std::vector<Detection> out;
    out.reserve(dets.size());
    while (!pool.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < pool.size(); ++i) {
            if (pool[i].det.score > pool[best].det.score ||
                (pool[i].det.score == pool[best].det.score && pool[i].idx < pool[best].idx))
                best = i;
        }
        const Detection sel = pool[best].det;
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
        out.push_back(sel);
        std::vector<Item> next;
        next.reserve(pool.size());
        for (auto& item : pool) {
            const double v = iou(sel.box, item.det.box);
            item.det.score *= std::exp(-(v * v) / sigma);
            if (item.det.score >= score_floor) next.push_back(item);
        }
        pool.swap(next);
    }
    return out;
}

/// Box voting: each kept box's coordinates become the score-weighted average
/// of all pool boxes overlapping it with IoU >= iou_thresh; scores unchanged.
inline std::vector<Detection> box_vote(const std::vector<Detection>& kept,
                                       const std::vector<Detection>& pool,
                                       double iou_thresh = 0.5) {
    std::vector<Detection> out = kept;
    for (auto& k : out) {
        double sw = 0.0, x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
        for (const auto& p : pool) {
            if (iou(k.box, p.box) < iou_thresh) continue;
            sw += p.score;
            x1 += p.score * p.box.x1;
            y1 += p.score * p.box.y1;
            x2 += p.score * p.box.x2;
            y2 += p.score * p.box.y2;
        }
        if (sw > 0.0) k.box = Box(x1 / sw, y1 / sw, x2 / sw, y2 / sw);
    }
    return out;
}

/// RoI proposal for the keypoint head; gt_index is -1 in inference mode.
struct Proposal {
    Detection det;
    std::int32_t gt_index = -1;
};

/// Confidence filter + greedy NMS; in training mode (gts non-null) only
/// proposals with best-IoU > iou_keep survive, matched to their argmax gt.
inline std::vector<Proposal> filter_proposals(const std::vector<Detection>& dets,
                                              double conf_floor = 0.02, double nms_thresh = 0.6,
                                              const std::vector<Box>* gts = nullptr,
                                              double iou_keep = 0.6) {
    std::vector<Detection> scored;
    scored.reserve(dets.size());
    for (const auto& d : dets)
        if (d.score >= conf_floor) scored.push_back(d);
    const std::vector<Detection> kept = nms_greedy(scored, nms_thresh);

    std::vector<Proposal> out;
    out.reserve(kept.size());
    for (const auto& d : kept) {
        if (gts == nullptr) {
            out.push_back({d, -1});
            continue;
        }
        double best = 0.0;
        std::int32_t best_g = -1;
        for (std::size_t g = 0; g < gts->size(); ++g) {
            const double v = iou(d.box, (*gts)[g]);
            if (v > best) {
                best = v;
                best_g = static_cast<std::int32_t>(g);
            }
        }
        if (best > iou_keep) out.push_back({d, best_g});
    }
    return out;
}

} // namespace maskkit
