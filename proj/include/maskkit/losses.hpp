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
#include <span>
#include <stdexcept>
#include <vector>

#include "maskkit/matching.hpp"
#include "maskkit/roialign.hpp"

namespace maskkit {

struct LossConfig {
    double alpha = 0.25;         // focal positive/negative balance
    double gamma = 2.0;          // focal focusing exponent
    double lambda_kp = 0.25;     // keypoint term weight
    double smooth_l1_beta = 1.0; // quadratic-to-linear transition
    double epsilon = 1e-12;      // probability clamp before logs

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("LossConfig: alpha must be in (0,1)");
        if (gamma < 0.0) throw std::invalid_argument("LossConfig: gamma must be >= 0");
        if (lambda_kp < 0.0) throw std::invalid_argument("LossConfig: lambda_kp must be >= 0");
        if (!(smooth_l1_beta > 0.0)) throw std::invalid_argument("LossConfig: beta must be > 0");
    }
};

struct LossReport {
    double l_cls = 0.0, l_box = 0.0, l_kp = 0.0, l_total = 0.0;
    int n_pos = 0;
};

/// Scalar loss with its analytic gradient; layout of `grad` is the caller's
/// input layout. `n_pos_was_zero` reports the max(N_pos, 1) fallback.
struct ScalarLoss {
    double value = 0.0;
    std::vector<double> grad;
    int n_pos_used = 1;
    bool n_pos_was_zero = false;
};

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Focal binary classification loss over anchor scores; gradient is with
/// respect to the logits that produced `probs` via the logistic map.
inline ScalarLoss focal_loss(std::span<const double> probs, const MatchResult& match,
                             const LossConfig& cfg) {
    cfg.validate();
    if (probs.size() != match.size())
        throw std::invalid_argument("focal_loss: probs/match size mismatch");
    ScalarLoss out;
    out.grad.assign(probs.size(), 0.0);
    out.n_pos_was_zero = match.n_pos == 0;
    out.n_pos_used = std::max(match.n_pos, 1);
    const double inv_n = 1.0 / out.n_pos_used;
    const double a = cfg.alpha, g = cfg.gamma;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (match.label[i] == AnchorLabel::ignore) continue;
        const double p = std::clamp(probs[i], cfg.epsilon, 1.0 - cfg.epsilon);
        if (match.label[i] == AnchorLabel::positive) {
            const double q = 1.0 - p;
            acc -= a * std::pow(q, g) * std::log(p);
            out.grad[i] = a * inv_n * std::pow(q, g) * (g * p * std::log(p) - q);
        } else {
            acc -= (1.0 - a) * std::pow(p, g) * std::log(1.0 - p);
            out.grad[i] = (1.0 - a) * inv_n * std::pow(p, g) * (p - g * (1.0 - p) * std::log(1.0 - p));
        }
    }
    out.value = acc * inv_n;
    return out;
}

/// Smooth-L1 box regression over positive anchors' deltas. `preds` and
/// `targets` hold one BoxDelta per positive anchor; gradient layout is
/// [i][dx,dy,dw,dh].
inline ScalarLoss smooth_l1_loss(std::span<const BoxDelta> preds, std::span<const BoxDelta> targets,
                                 const MatchResult& match, const LossConfig& cfg) {
    cfg.validate();
    if (preds.size() != targets.size())
        throw std::invalid_argument("smooth_l1_loss: preds/targets size mismatch");
    if (static_cast<int>(preds.size()) != match.n_pos)
        throw std::invalid_argument("smooth_l1_loss: expected one delta per positive anchor");
    ScalarLoss out;
    out.grad.assign(preds.size() * 4, 0.0);
    out.n_pos_was_zero = match.n_pos == 0;
    out.n_pos_used = std::max(match.n_pos, 1);
    const double inv_n = 1.0 / out.n_pos_used;
    const double beta = cfg.smooth_l1_beta;
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double diffs[4] = {preds[i].dx - targets[i].dx, preds[i].dy - targets[i].dy,
                                 preds[i].dw - targets[i].dw, preds[i].dh - targets[i].dh};
        for (int c = 0; c < 4; ++c) {
            const double x = diffs[c];
            if (std::abs(x) < beta) {
                acc += 0.5 * x * x / beta;
                out.grad[i * 4 + c] = inv_n * x / beta;
            } else {
                acc += std::abs(x) - 0.5 * beta;
                out.grad[i * 4 + c] = inv_n * (x > 0.0 ? 1.0 : -1.0);
            }
        }
    }
    out.value = acc * inv_n;
    return out;
}

/// Spatial cross-entropy over one-hot keypoint masks (softmax across all m^2
/// positions per keypoint). Invalid keypoints are excluded and the per-sample
/// keypoint count adjusted. Gradient layout: [sample][k][row][col].
inline ScalarLoss keypoint_ce_loss(const std::vector<KeypointMask>& logits,
                                   const std::vector<std::vector<KeypointTarget>>& targets,
                                   const LossConfig& cfg) {
    cfg.validate();
    if (logits.size() != targets.size())
        throw std::invalid_argument("keypoint_ce_loss: logits/targets size mismatch");
    ScalarLoss out;
    std::size_t total = 0;
    for (const auto& s : logits) total += s.logits.size();
    out.grad.assign(total, 0.0);
    out.n_pos_was_zero = logits.empty();
    out.n_pos_used = std::max<int>(static_cast<int>(logits.size()), 1);
    const double inv_n = 1.0 / out.n_pos_used;

    double acc = 0.0;
    std::size_t offset = 0;
    std::vector<double> soft;
    for (std::size_t s = 0; s < logits.size(); ++s) {
        const KeypointMask& mask = logits[s];
        const int K = mask.num_keypoints, mm = mask.mask_size * mask.mask_size;
        if (static_cast<int>(targets[s].size()) != K)
            throw std::invalid_argument("keypoint_ce_loss: target count != K");
        int k_valid = 0;
        for (const auto& t : targets[s])
            if (t.valid) ++k_valid;
        if (k_valid > 0) {
            const double inv_k = 1.0 / k_valid;
            for (int k = 0; k < K; ++k) {
                const KeypointTarget& t = targets[s][k];
                if (!t.valid) continue;
                if (t.row < 0 || t.row >= mask.mask_size || t.col < 0 || t.col >= mask.mask_size)
                    throw std::invalid_argument("keypoint_ce_loss: target index out of mask");
                const double* lk = mask.logits.data() + static_cast<std::size_t>(k) * mm;
                double mx = lk[0];
                for (int i = 1; i < mm; ++i) mx = std::max(mx, lk[i]);
                double denom = 0.0;
                soft.resize(mm);
                for (int i = 0; i < mm; ++i) {
                    soft[i] = std::exp(lk[i] - mx);
                    denom += soft[i];
                }
                const int gt = t.row * mask.mask_size + t.col;
                acc += inv_k * (std::log(denom) - (lk[gt] - mx));
                double* gk = out.grad.data() + offset + static_cast<std::size_t>(k) * mm;
                const double scale = inv_k * inv_n;
                for (int i = 0; i < mm; ++i) gk[i] = scale * soft[i] / denom;
                gk[gt] -= scale;
            }
        }
        offset += mask.logits.size();
    }
    out.value = acc * inv_n;
    return out;
}

/// Weighted sum of the three loss terms.
inline LossReport total_loss(double l_cls, double l_box, double l_kp, int n_pos,
                             const LossConfig& cfg) {
    cfg.validate();
    if (!(std::isfinite(l_cls) && std::isfinite(l_box) && std::isfinite(l_kp)))
        throw std::invalid_argument("total_loss: non-finite loss term");
    LossReport r;
    r.l_cls = l_cls;
    r.l_box = l_box;
    r.l_kp = l_kp;
    r.l_total = l_cls + l_box + cfg.lambda_kp * l_kp;
    r.n_pos = n_pos;
    return r;
}

} // namespace maskkit
