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
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace maskkit {

/// Axis-aligned rectangle in continuous image coordinates, x2 > x1, y2 > y1.
struct Box {
    double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

    Box() = default;
    Box(double x1_, double y1_, double x2_, double y2_) : x1(x1_), y1(y1_), x2(x2_), y2(y2_) {
        if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2)))
            throw std::invalid_argument("Box: non-finite coordinate");
        if (!(x2 > x1 && y2 > y1))
            throw std::invalid_argument("Box: requires x2 > x1 and y2 > y1");
    }

    static Box from_center(double cx, double cy, double w, double h) {
        return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
    }

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
};

/// Dimensionless box offsets; dw, dh are log-space size ratios.
struct BoxDelta {
    double dx = 0.0, dy = 0.0, dw = 0.0, dh = 0.0;
};

inline double iou(const Box& a, const Box& b) {
    const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    if (ix <= 0.0) return 0.0;
    const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

inline BoxDelta encode_deltas(const Box& anchor, const Box& gt) {
    BoxDelta d;
    d.dx = (gt.cx() - anchor.cx()) / anchor.width();
    d.dy = (gt.cy() - anchor.cy()) / anchor.height();
    d.dw = std::log(gt.width() / anchor.width());
    d.dh = std::log(gt.height() / anchor.height());
    return d;
}

// Growth cap for decoded sizes: exp(|dw|) <= 1000/16.
inline constexpr double kDeltaLogClamp = 4.135166556742356; // ln(1000/16)

struct DecodedBox {
    Box box;
    bool clamped = false;
};

inline DecodedBox decode_deltas(const Box& anchor, const BoxDelta& d) {
    DecodedBox out;
    double dw = d.dw, dh = d.dh;
    if (std::abs(dw) > kDeltaLogClamp) {
        dw = std::clamp(dw, -kDeltaLogClamp, kDeltaLogClamp);
        out.clamped = true;
    }
    if (std::abs(dh) > kDeltaLogClamp) {
        dh = std::clamp(dh, -kDeltaLogClamp, kDeltaLogClamp);
        out.clamped = true;
    }
    const double cx = anchor.cx() + d.dx * anchor.width();
    const double cy = anchor.cy() + d.dy * anchor.height();
    const double w = anchor.width() * std::exp(dw);
    const double h = anchor.height() * std::exp(dh);
    out.box = Box::from_center(cx, cy, w, h);
    return out;
}

/// Anchor layout: 5 pyramid levels, 3 square anchors per cell.
struct AnchorConfig {
    std::vector<double> base_areas = {16.0 * 16.0, 32.0 * 32.0, 64.0 * 64.0, 128.0 * 128.0, 256.0 * 256.0};
    std::vector<double> scales = {1.0, std::pow(2.0, 1.0 / 3.0), std::pow(2.0, 2.0 / 3.0)};
    std::vector<int> strides = {4, 8, 16, 32, 64};
    std::vector<double> aspect_ratios = {1.0};

    int levels() const { return static_cast<int>(strides.size()); }
    int anchors_per_cell() const { return static_cast<int>(scales.size() * aspect_ratios.size()); }
    /// Pyramid level index of entry i (levels are numbered 2..6).
    int level_of(int i) const { return 2 + i; }

    double smallest_side() const { return std::sqrt(base_areas.front()) * scales.front(); }
    double largest_side() const { return std::sqrt(base_areas.back()) * scales.back(); }

    void validate() const {
        if (base_areas.size() != strides.size())
            throw std::invalid_argument("AnchorConfig: base_areas and strides must pair up");
        if (base_areas.empty() || scales.empty() || aspect_ratios.empty())
            throw std::invalid_argument("AnchorConfig: empty field");
        for (double a : base_areas)
            if (!(a > 0.0)) throw std::invalid_argument("AnchorConfig: base area must be positive");
        for (int s : strides)
            if (s <= 0) throw std::invalid_argument("AnchorConfig: stride must be positive");
    }
};

inline void to_json(nlohmann::ordered_json& j, const AnchorConfig& c) {
    j = nlohmann::ordered_json{{"base_areas", c.base_areas},
                               {"scales", c.scales},
                               {"strides", c.strides},
                               {"aspect_ratios", c.aspect_ratios}};
}

inline void from_json(const nlohmann::ordered_json& j, AnchorConfig& c) {
    j.at("base_areas").get_to(c.base_areas);
    j.at("scales").get_to(c.scales);
    j.at("strides").get_to(c.strides);
    j.at("aspect_ratios").get_to(c.aspect_ratios);
    c.validate();
}

/// Dense anchor set over all pyramid levels.
///
/// Order: level-major, then row, then column, then scale index. Within a
/// level every anchor has the same width/height at every cell; centers sit at
/// ((col + 0.5) * stride, (row + 0.5) * stride).
struct AnchorGrid {
    std::vector<Box> boxes;
    std::vector<std::int8_t> level;  // pyramid level (2..6) per box
    std::vector<int> cell_row;
    std::vector<int> cell_col;
    std::vector<int> level_first;    // start index of each level's block
    std::vector<int> grid_h, grid_w; // cells per level

    std::size_t size() const { return boxes.size(); }
};

inline AnchorGrid generate_anchors(const AnchorConfig& cfg, int image_w, int image_h) {
    cfg.validate();
    if (image_w <= 0 || image_h <= 0)
        throw std::invalid_argument("generate_anchors: image dims must be positive");
    AnchorGrid grid;
    std::size_t total = 0;
    std::vector<int> gh(cfg.levels()), gw(cfg.levels());
    for (int l = 0; l < cfg.levels(); ++l) {
        gh[l] = (image_h + cfg.strides[l] - 1) / cfg.strides[l];
        gw[l] = (image_w + cfg.strides[l] - 1) / cfg.strides[l];
        total += static_cast<std::size_t>(gh[l]) * gw[l] * cfg.anchors_per_cell();
    }
    grid.boxes.reserve(total);
    grid.level.reserve(total);
    grid.cell_row.reserve(total);
    grid.cell_col.reserve(total);
    grid.grid_h = gh;
    grid.grid_w = gw;
    for (int l = 0; l < cfg.levels(); ++l) {
        grid.level_first.push_back(static_cast<int>(grid.boxes.size()));
        const double stride = cfg.strides[l];
        std::vector<double> sides;
        for (double ar : cfg.aspect_ratios) {
            (void)ar; // square anchors only
            for (double s : cfg.scales) sides.push_back(std::sqrt(cfg.base_areas[l]) * s);
        }
        for (int r = 0; r < gh[l]; ++r) {
            for (int c = 0; c < gw[l]; ++c) {
                const double cx = (c + 0.5) * stride;
                const double cy = (r + 0.5) * stride;
                for (double side : sides) {
                    grid.boxes.push_back(Box::from_center(cx, cy, side, side));
                    grid.level.push_back(static_cast<std::int8_t>(cfg.level_of(l)));
                    grid.cell_row.push_back(r);
                    grid.cell_col.push_back(c);
                }
            }
        }
    }
    return grid;
}

/// Pyramid level for a RoI: k = max(2, floor(k0 + log2(sqrt(w*h)/224))),
/// clamped above at 6.
inline int assign_level(const Box& roi, int k0 = 3) {
    const double scale = std::sqrt(roi.area()) / 224.0;
    const int k = static_cast<int>(std::floor(k0 + std::log2(scale)));
    return std::clamp(k, 2, 6);
}

} // namespace maskkit
