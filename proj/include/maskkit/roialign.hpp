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
#include <stdexcept>
#include <vector>

#include "maskkit/geometry.hpp"
#include "maskkit/tensor.hpp"

namespace maskkit {

struct Point {
    double x = 0.0, y = 0.0;
};

/// CHW feature grid plus its stride relative to the image.
struct FeatureMap {
    Tensor data; // [C, H, W]
    int stride = 1;

    int channels() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }
};

/// One-hot keypoint training target: mask cell indices of one landmark.
struct KeypointTarget {
    int row = -1, col = -1;
    bool valid = false;
};

/// K x m x m keypoint logits tied to one RoI.
struct KeypointMask {
    int num_keypoints = 0;
    int mask_size = 0;
    std::vector<double> logits; // [k][row][col]

    KeypointMask() = default;
    KeypointMask(int k, int m)
        : num_keypoints(k), mask_size(m),
          logits(static_cast<std::size_t>(k) * m * m, 0.0) {}

    double& at(int k, int j, int l) {
        return logits[(static_cast<std::size_t>(k) * mask_size + j) * mask_size + l];
    }
    double at(int k, int j, int l) const {
        return logits[(static_cast<std::size_t>(k) * mask_size + j) * mask_size + l];
    }
};

namespace detail {

// Bilinear sample of one channel plane at continuous feature coordinates
// under the half-pixel-center convention; out-of-map neighbors read as zero.
// Weights are reported against flattened plane offsets so forward and
// backward share the exact arithmetic.
struct BilinearTaps {
    int n = 0;
    int pos[4];
    double w[4];
};

inline BilinearTaps bilinear_taps(int height, int width, double y, double x) {
    BilinearTaps t;
    const double u = x - 0.5;
    const double v = y - 0.5;
    const int x0 = static_cast<int>(std::floor(u));
    const int y0 = static_cast<int>(std::floor(v));
    const double fx = u - x0;
    const double fy = v - y0;
    const int xs[2] = {x0, x0 + 1};
    const int ys[2] = {y0, y0 + 1};
    const double wx[2] = {1.0 - fx, fx};
    const double wy[2] = {1.0 - fy, fy};
    for (int iy = 0; iy < 2; ++iy) {
        if (ys[iy] < 0 || ys[iy] >= height) continue;
        for (int ix = 0; ix < 2; ++ix) {
            if (xs[ix] < 0 || xs[ix] >= width) continue;
            t.pos[t.n] = ys[iy] * width + xs[ix];
            t.w[t.n] = wy[iy] * wx[ix];
            ++t.n;
        }
    }
    return t;
}

inline void check_roi_for_align(const Box& roi, int stride) {
    const double w = roi.width() / stride;
    const double h = roi.height() / stride;
    if (w < 1e-6 || h < 1e-6)
        throw std::invalid_argument("roi_align: degenerate RoI after stride conversion");
}

} // namespace detail

/// Average-pooled bilinear RoI features.
///
/// The RoI is given in image coordinates and mapped to feature coordinates by
/// dividing by the stride. Each output bin averages sampling_ratio^2 bilinear
/// samples placed on a regular grid inside the bin.
inline Tensor roi_align(const FeatureMap& map, const Box& roi, int out_size, int sampling_ratio) {
    if (out_size <= 0 || sampling_ratio <= 0)
        throw std::invalid_argument("roi_align: out_size and sampling_ratio must be positive");
    detail::check_roi_for_align(roi, map.stride);
    const int C = map.channels(), H = map.height(), W = map.width();
    const double x1 = roi.x1 / map.stride, y1 = roi.y1 / map.stride;
    const double bin_w = (roi.x2 / map.stride - x1) / out_size;
    const double bin_h = (roi.y2 / map.stride - y1) / out_size;
    const double inv_count = 1.0 / (sampling_ratio * sampling_ratio);

    Tensor out({C, out_size, out_size});
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int by = 0; by < out_size; ++by) {
        for (int bx = 0; bx < out_size; ++bx) {
            for (int sy = 0; sy < sampling_ratio; ++sy) {
                const double y = y1 + by * bin_h + (sy + 0.5) * bin_h / sampling_ratio;
                for (int sx = 0; sx < sampling_ratio; ++sx) {
                    const double x = x1 + bx * bin_w + (sx + 0.5) * bin_w / sampling_ratio;
                    const auto taps = detail::bilinear_taps(H, W, y, x);
                    for (int c = 0; c < C; ++c) {
                        const double* src = map.data.data() + c * plane;
                        double v = 0.0;
                        for (int t = 0; t < taps.n; ++t) v += taps.w[t] * src[taps.pos[t]];
                        out.at(c, by, bx) += v * inv_count;
                    }
                }
            }
        }
    }
    return out;
}

/// Accumulates d(loss)/d(features) for one RoI given d(loss)/d(output).
inline void roi_align_backward(const Tensor& grad_out, const Box& roi, int stride,
                               int sampling_ratio, Tensor& grad_map) {
    const int C = grad_map.dim(0), H = grad_map.dim(1), W = grad_map.dim(2);
    const int out_size = grad_out.dim(1);
    detail::check_roi_for_align(roi, stride);
    const double x1 = roi.x1 / stride, y1 = roi.y1 / stride;
    const double bin_w = (roi.x2 / stride - x1) / out_size;
    const double bin_h = (roi.y2 / stride - y1) / out_size;
    const double inv_count = 1.0 / (sampling_ratio * sampling_ratio);
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    for (int by = 0; by < out_size; ++by) {
        for (int bx = 0; bx < out_size; ++bx) {
            for (int sy = 0; sy < sampling_ratio; ++sy) {
                const double y = y1 + by * bin_h + (sy + 0.5) * bin_h / sampling_ratio;
                for (int sx = 0; sx < sampling_ratio; ++sx) {
                    const double x = x1 + bx * bin_w + (sx + 0.5) * bin_w / sampling_ratio;
                    const auto taps = detail::bilinear_taps(H, W, y, x);
                    for (int c = 0; c < C; ++c) {
                        const double g = grad_out.at(c, by, bx) * inv_count;
                        double* dst = grad_map.data() + c * plane;
                        for (int t = 0; t < taps.n; ++t) dst[taps.pos[t]] += g * taps.w[t];
                    }
                }
            }
        }
    }
}

/// One-hot mask indices for landmarks inside a RoI; landmarks outside the
/// closed RoI are marked invalid.
inline std::vector<KeypointTarget> encode_keypoint_target(const Box& roi,
                                                          const std::vector<Point>& landmarks,
                                                          int m) {
    if (m < 2) throw std::invalid_argument("encode_keypoint_target: m must be >= 2");
    std::vector<KeypointTarget> out(landmarks.size());
    const double w = roi.width(), h = roi.height();
    for (std::size_t k = 0; k < landmarks.size(); ++k) {
        const Point& p = landmarks[k];
        if (p.x < roi.x1 || p.x > roi.x2 || p.y < roi.y1 || p.y > roi.y2) continue;
        const int col = std::clamp(static_cast<int>(std::floor((p.x - roi.x1) / w * m)), 0, m - 1);
        const int row = std::clamp(static_cast<int>(std::floor((p.y - roi.y1) / h * m)), 0, m - 1);
        out[k] = KeypointTarget{row, col, true};
    }
    return out;
}

/// Argmax-cell decode back to image coordinates (cell centers, ties to the
/// lowest row-major index).
inline std::vector<Point> decode_keypoint_mask(const KeypointMask& mask, const Box& roi) {
    const int K = mask.num_keypoints, m = mask.mask_size;
    std::vector<Point> out(K);
    for (int k = 0; k < K; ++k) {
        int best = 0;
        double best_v = mask.at(k, 0, 0);
        for (int i = 1; i < m * m; ++i) {
            const double v = mask.logits[(static_cast<std::size_t>(k) * m * m) + i];
            if (v > best_v) {
                best_v = v;
                best = i;
            }
        }
        const int row = best / m, col = best % m;
        out[k].x = roi.x1 + (col + 0.5) * roi.width() / m;
        out[k].y = roi.y1 + (row + 0.5) * roi.height() / m;
    }
    return out;
}

} // namespace maskkit
