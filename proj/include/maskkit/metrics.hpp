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
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "maskkit/matching.hpp"
#include "maskkit/roialign.hpp"
#include "maskkit/suppression.hpp"

namespace maskkit {

enum class NmeNormalizer { bbox_sqrt_area, inter_ocular };

struct EvalConfig {
    double iou_match_thresh = 0.5;
    NmeNormalizer nme_normalizer = NmeNormalizer::bbox_sqrt_area;

    void validate() const {
        if (!(iou_match_thresh > 0.0 && iou_match_thresh < 1.0))
            throw std::invalid_argument("EvalConfig: iou_match_thresh must be in (0,1)");
    }
};

struct PrPoint {
    double recall = 0.0, precision = 0.0;
};

struct PrCurve {
    std::vector<PrPoint> points; // one per rank of the global score sweep
    double ap = 0.0;
};

/// Average precision over a multi-image detection problem.
///
/// Detections are swept globally by descending score (ties by image, then
/// input index); each is a TP if it greedily claims an unmatched ground truth
/// of its image with IoU >= thresh. AP integrates the right-max interpolated
/// precision over recall.
inline PrCurve pr_curve_ap(const std::vector<std::vector<Detection>>& dets_per_image,
                           const std::vector<std::vector<Box>>& gts_per_image,
                           const EvalConfig& cfg) {
    cfg.validate();
    if (dets_per_image.size() != gts_per_image.size())
        throw std::invalid_argument("pr_curve_ap: image count mismatch");
    std::size_t n_gt = 0;
    for (const auto& g : gts_per_image) n_gt += g.size();
    if (n_gt == 0) throw std::invalid_argument("pr_curve_ap: AP undefined with zero ground truths");

    struct Entry {
        double score;
        std::size_t image, index;
    };
    std::vector<Entry> entries;
    for (std::size_t im = 0; im < dets_per_image.size(); ++im)
        for (std::size_t i = 0; i < dets_per_image[im].size(); ++i)
            entries.push_back({dets_per_image[im][i].score, im, i});
    std::stable_sort(entries.begin(), entries.end(),
                     [](const Entry& a, const Entry& b) { return a.score > b.score; });

    std::vector<std::vector<char>> gt_taken(gts_per_image.size());
    for (std::size_t im = 0; im < gts_per_image.size(); ++im)
        gt_taken[im].assign(gts_per_image[im].size(), 0);

    PrCurve out;
    out.points.reserve(entries.size());
    std::size_t tp = 0;
    for (std::size_t r = 0; r < entries.size(); ++r) {
        const Entry& e = entries[r];
        const Box& pb = dets_per_image[e.image][e.index].box;
        double best = -1.0;
        int best_g = -1;
        const auto& gts = gts_per_image[e.image];
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gt_taken[e.image][g]) continue;
            const double v = iou(pb, gts[g]);
            if (v >= cfg.iou_match_thresh && v > best) {
                best = v;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0) {
            gt_taken[e.image][best_g] = 1;
            ++tp;
        }
        out.points.push_back({static_cast<double>(tp) / n_gt,
                              static_cast<double>(tp) / static_cast<double>(r + 1)});
    }

    // right-max interpolation, then stepwise integral over recall
    std::vector<double> p_interp(out.points.size());
    double running = 0.0;
    for (std::size_t i = out.points.size(); i-- > 0;) {
        running = std::max(running, out.points[i].precision);
        p_interp[i] = running;
    }
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < out.points.size(); ++i) {
        ap += (out.points[i].recall - prev_recall) * p_interp[i];
        prev_recall = out.points[i].recall;
    }
    out.ap = ap;
    return out;
}

/// Mean landmark error divided by the normalizer. Entries with a false valid
/// flag are skipped (pass nullptr to use all keypoints).
inline double nme(const std::vector<Point>& pred, const std::vector<Point>& gt, double normalizer,
                  const std::vector<bool>* valid = nullptr) {
    if (!(normalizer > 0.0)) throw std::invalid_argument("nme: normalizer must be > 0");
    if (pred.size() != gt.size() || pred.empty())
        throw std::invalid_argument("nme: need K >= 1 matching landmark lists");
    double acc = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
        if (valid && !(*valid)[k]) continue;
        acc += std::hypot(pred[k].x - gt[k].x, pred[k].y - gt[k].y);
        ++n;
    }
    if (n == 0) throw std::invalid_argument("nme: no valid keypoints");
    return acc / (n * normalizer);
}

inline double nme_normalizer_bbox(const Box& gt_box) { return std::sqrt(gt_box.area()); }

/// Distance between the outer eye-corner ground-truth points (first two
/// landmarks of the 5-point layout).
inline double nme_normalizer_inter_ocular(const std::vector<Point>& gt_landmarks) {
    if (gt_landmarks.size() < 2)
        throw std::invalid_argument("inter-ocular normalizer needs >= 2 landmarks");
    return std::hypot(gt_landmarks[0].x - gt_landmarks[1].x, gt_landmarks[0].y - gt_landmarks[1].y);
}

struct CedPoint {
    double nme = 0.0, fraction = 0.0;
};

struct CedCurve {
    std::vector<CedPoint> points; // step function over the finite NMEs
    std::size_t n_faces = 0;
    std::size_t n_undetected = 0; // entries with NME = +inf

    /// Smallest t with CED(t) >= q: the ceil(q*n)-th order statistic.
    double at(double q) const {
        if (points.empty() && n_undetected == n_faces) return std::numeric_limits<double>::infinity();
        const std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n_faces)));
        std::size_t seen = 0;
        for (const auto& p : points) {
            seen = static_cast<std::size_t>(std::llround(p.fraction * static_cast<double>(n_faces)));
            if (seen >= rank) return p.nme;
        }
        return std::numeric_limits<double>::infinity();
    }
};

/// Cumulative error distribution of per-face NMEs. Undetected faces enter as
/// +inf: they count in the denominator but cap the curve below 1.
inline CedCurve ced_curve(const std::vector<double>& nmes) {
    if (nmes.empty()) throw std::invalid_argument("ced_curve: empty input");
    CedCurve out;
    out.n_faces = nmes.size();
    std::vector<double> finite;
    finite.reserve(nmes.size());
    for (double v : nmes) {
        if (std::isinf(v)) {
            ++out.n_undetected;
        } else {
            if (!(v >= 0.0)) throw std::invalid_argument("ced_curve: NME must be >= 0 or +inf");
            finite.push_back(v);
        }
    }
    std::sort(finite.begin(), finite.end());
    const double n = static_cast<double>(out.n_faces);
    for (std::size_t i = 0; i < finite.size(); ++i) {
        if (i + 1 < finite.size() && finite[i + 1] == finite[i]) continue;
        out.points.push_back({finite[i], static_cast<double>(i + 1) / n});
    }
    return out;
}

/// Two-column CSV with a one-line header.
inline std::string curve_to_csv(const std::string& x_name, const std::string& y_name,
                                const std::vector<std::pair<double, double>>& points) {
    std::ostringstream os;
    os.precision(17);
    os << x_name << ',' << y_name << '\n';
    for (const auto& [x, y] : points) os << x << ',' << y << '\n';
    return os.str();
}

} // namespace maskkit
