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

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "maskkit/geometry.hpp"

namespace maskkit {

enum class AnchorLabel : std::int8_t { negative = 0, positive = 1, ignore = 2 };

/// Per-anchor labels plus the matched ground-truth index (defined iff positive).
struct MatchResult {
    std::vector<AnchorLabel> label;
    std::vector<std::int32_t> matched_gt; // -1 unless positive
    int n_pos = 0;

    std::size_t size() const { return label.size(); }
};

/// Threshold matching with the optional low-quality strategy.
///
/// Anchors whose best IoU exceeds t_pos become positive (matched to the
/// argmax ground truth, ties to the lowest gt index), below t_neg negative,
/// in between ignore. With low_quality, every anchor achieving a ground
/// truth's maximum IoU (> 0) and not already positive is promoted to positive
/// and matched to its own highest-IoU ground truth.
inline MatchResult match_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gts,
                                 double t_pos = 0.5, double t_neg = 0.3, bool low_quality = true) {
    if (t_neg > t_pos) throw std::invalid_argument("match_anchors: t_neg must be <= t_pos");
    const std::size_t n = anchors.size();
    const std::size_t m = gts.size();
    MatchResult res;
    res.label.assign(n, AnchorLabel::negative);
    res.matched_gt.assign(n, -1);
    if (m == 0) return res;

    std::vector<double> best_iou(n, 0.0);
    std::vector<std::int32_t> best_gt(n, -1);
    std::vector<double> gt_best_iou(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t g = 0; g < m; ++g) {
            const double v = iou(anchors[i], gts[g]);
            if (v > best_iou[i]) {
                best_iou[i] = v;
                best_gt[i] = static_cast<std::int32_t>(g);
            }
            if (v > gt_best_iou[g]) gt_best_iou[g] = v;
        }
        if (best_iou[i] > t_pos) {
            res.label[i] = AnchorLabel::positive;
            res.matched_gt[i] = best_gt[i];
        } else if (best_iou[i] < t_neg) {
            res.label[i] = AnchorLabel::negative;
        } else {
            res.label[i] = AnchorLabel::ignore;
        }
    }

    if (low_quality) {
        for (std::size_t g = 0; g < m; ++g) {
            if (gt_best_iou[g] <= 0.0) continue;
            for (std::size_t i = 0; i < n; ++i) {
                if (res.label[i] == AnchorLabel::positive) continue;
                if (iou(anchors[i], gts[g]) == gt_best_iou[g]) {
                    res.label[i] = AnchorLabel::positive;
                    res.matched_gt[i] = best_gt[i];
                }
            }
        }
    }

    for (std::size_t i = 0; i < n; ++i)
        if (res.label[i] == AnchorLabel::positive) ++res.n_pos;
    return res;
}

/// Greedy one-to-one prediction-to-gt matching for evaluation.
///
/// Predictions are visited in `order` (callers pass descending score, ties by
/// index); each takes the unmatched ground truth of highest IoU >= thresh.
/// Returns the matched gt index per prediction, -1 for unmatched.
inline std::vector<std::int32_t> greedy_match_predictions(const std::vector<Box>& preds,
                                                          const std::vector<std::size_t>& order,
                                                          const std::vector<Box>& gts,
                                                          double iou_thresh) {
    std::vector<std::int32_t> match(preds.size(), -1);
    std::vector<char> gt_taken(gts.size(), 0);
    for (std::size_t idx : order) {
        double best = -1.0;
        std::int32_t best_g = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gt_taken[g]) continue;
            const double v = iou(preds[idx], gts[g]);
            if (v >= iou_thresh && v > best) {
                best = v;
                best_g = static_cast<std::int32_t>(g);
            }
        }
        if (best_g >= 0) {
            match[idx] = best_g;
            gt_taken[best_g] = 1;
        }
    }
    return match;
}

} // namespace maskkit
