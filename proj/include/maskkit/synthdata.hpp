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
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "maskkit/geometry.hpp"
#include "maskkit/rng.hpp"
#include "maskkit/roialign.hpp"
#include "maskkit/tensor.hpp"

namespace maskkit {

inline constexpr int kNumLandmarks = 5;

// Fractional template offsets inside a face box: left eye, right eye, nose,
// left mouth corner, right mouth corner.
inline constexpr std::array<Point, kNumLandmarks> kLandmarkOffsets = {
    {{0.30, 0.35}, {0.70, 0.35}, {0.50, 0.55}, {0.35, 0.75}, {0.65, 0.75}}};

// Left/right identity swap applied on horizontal flips.
inline constexpr std::array<int, kNumLandmarks> kLandmarkFlipSwap = {1, 0, 2, 4, 3};

struct FaceAnnotation {
    Box box;
    std::vector<Point> landmarks;
    std::vector<bool> visible;
};

/// Synthetic image with exact ground truth.
struct Scene {
    int width = 0, height = 0;
    Tensor image; // [3, H, W], values in [0, 1]
    std::vector<FaceAnnotation> faces;
    std::uint64_t seed = 0;
    int faces_requested = 0;
};

struct AugmentConfig {
    enum class Mode { detection, landmark };
    Mode mode = Mode::detection;

    // detection pipeline
    double scale_min = 0.5, scale_max = 2.5;
    int crop_size = 640;
    double bbox_crop_prob = 0.5;
    double hflip_prob = 0.5;
    double color_gain_min = 0.8, color_gain_max = 1.2;
    double color_bias_min = -0.1, color_bias_max = 0.1;

    // landmark pipeline
    double box_size_min = 150.0, box_size_max = 450.0;
    int landmark_crop_size = 480;
    double rotation_max_deg = 30.0;

    // annotation filter bounds, recomputed from the default AnchorConfig
    double area_small = 16.0 * 16.0;
    double area_large = AnchorConfig{}.largest_side() * AnchorConfig{}.largest_side();

    void validate() const {
        if (scale_min > scale_max || box_size_min > box_size_max)
            throw std::invalid_argument("AugmentConfig: range out of order");
        if (bbox_crop_prob < 0.0 || bbox_crop_prob > 1.0 || hflip_prob < 0.0 || hflip_prob > 1.0)
            throw std::invalid_argument("AugmentConfig: probability out of [0,1]");
        if (crop_size <= 0 || landmark_crop_size <= 0)
            throw std::invalid_argument("AugmentConfig: crop size must be positive");
        if (!(area_small > 0.0 && area_large > 0.0))
            throw std::invalid_argument("AugmentConfig: areas must be positive");
    }
};

namespace detail {

inline void draw_disk(Tensor& img, double cx, double cy, double radius, const std::array<double, 3>& color) {
    const int H = img.dim(1), W = img.dim(2);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + radius)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + radius)));
    const double r2 = radius * radius;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            if (dx * dx + dy * dy <= r2)
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
        }
    }
}

inline void draw_face(Tensor& img, const Box& box, const std::array<double, 3>& base,
                      const std::vector<Point>& landmarks) {
    const int H = img.dim(1), W = img.dim(2);
    const double cx = box.cx(), cy = box.cy();
    const double rx = 0.47 * box.width(), ry = 0.47 * box.height();
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y1)));
    const int y1 = std::min(H - 1, static_cast<int>(std::ceil(box.y2)));
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x1)));
    const int x1 = std::min(W - 1, static_cast<int>(std::ceil(box.x2)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double ex = (x + 0.5 - cx) / rx, ey = (y + 0.5 - cy) / ry;
            const double d2 = ex * ex + ey * ey;
            if (d2 <= 1.0) {
                const double shade = 1.0 - 0.3 * d2;
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = base[c] * shade;
            }
        }
    }
    static constexpr std::array<std::array<double, 3>, kNumLandmarks> kBlobColors = {{
        {0.05, 0.10, 0.35}, // left eye
        {0.05, 0.10, 0.35}, // right eye (same color: template stays mirror-symmetric)
        {0.10, 0.40, 0.15}, // nose
        {0.50, 0.10, 0.12}, // mouth corners
        {0.50, 0.10, 0.12},
    }};
    const double blob_r = 0.07 * std::min(box.width(), box.height());
    for (int k = 0; k < kNumLandmarks; ++k)
        draw_disk(img, landmarks[k].x, landmarks[k].y, blob_r, kBlobColors[k]);
}

} // namespace detail

inline std::vector<Point> landmarks_for_box(const Box& box) {
    std::vector<Point> out(kNumLandmarks);
    for (int k = 0; k < kNumLandmarks; ++k)
        out[k] = Point{box.x1 + kLandmarkOffsets[k].x * box.width(),
                       box.y1 + kLandmarkOffsets[k].y * box.height()};
    return out;
}

/// Procedural scene: seeded noise background plus frontal face templates
/// (filled shaded ellipse, contrasting landmark blobs). Identical seeds give
/// bit-identical scenes; pixels are quantized to 1/255 steps so disk
/// round-trips are exact.
inline Scene generate_scene(std::uint64_t seed, int w, int h, int n_faces, double side_min,
                            double side_max) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("generate_scene: bad dims");
    if (side_min > side_max || side_min <= 4.0)
        throw std::invalid_argument("generate_scene: bad side range");
    Scene scene;
    scene.width = w;
    scene.height = h;
    scene.seed = seed;
    scene.faces_requested = n_faces;
    scene.image = Tensor({3, h, w});
    Rng rng(mix_seed(seed));

    for (std::size_t i = 0; i < scene.image.size(); ++i) scene.image[i] = rng.uniform(0.0, 0.5);

    const double max_side = std::min({side_max, static_cast<double>(w) - 2.0, static_cast<double>(h) - 2.0});
    int attempts_left = 40 * std::max(1, n_faces);
    for (int f = 0; f < n_faces && attempts_left > 0; ++f) {
        bool placed = false;
        while (attempts_left-- > 0) {
            const double side = rng.uniform(std::min(side_min, max_side), max_side);
            const double x1 = rng.uniform(1.0, w - side - 1.0);
            const double y1 = rng.uniform(1.0, h - side - 1.0);
            Box box(x1, y1, x1 + side, y1 + side);
            bool clashes = false;
            for (const auto& other : scene.faces)
                if (iou(box, other.box) > 0.1) clashes = true;
            if (clashes) continue;
            FaceAnnotation face;
            face.box = box;
            face.landmarks = landmarks_for_box(box);
            face.visible.assign(kNumLandmarks, true);
            const std::array<double, 3> base = {rng.uniform(0.70, 0.95), rng.uniform(0.50, 0.75),
                                                rng.uniform(0.35, 0.60)};
            detail::draw_face(scene.image, box, base, face.landmarks);
            scene.faces.push_back(std::move(face));
            placed = true;
            break;
        }
        if (!placed) break;
    }

    for (std::size_t i = 0; i < scene.image.size(); ++i)
        scene.image[i] = std::round(scene.image[i] * 255.0) / 255.0;
    return scene;
}

/// Keep faces whose box area lies in [0.4 * area_small, 2.5 * area_large].
inline std::vector<FaceAnnotation> filter_annotations(
    const std::vector<FaceAnnotation>& faces, double area_small = 16.0 * 16.0,
    double area_large = AnchorConfig{}.largest_side() * AnchorConfig{}.largest_side()) {
    if (!(area_small > 0.0 && area_large > 0.0))
        throw std::invalid_argument("filter_annotations: areas must be positive");
    const double lo = 0.4 * area_small, hi = 2.5 * area_large;
    std::vector<FaceAnnotation> kept;
    for (const auto& f : faces) {
        const double a = f.box.area();
        if (a >= lo && a <= hi) kept.push_back(f);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// image resampling helpers (half-pixel-center conventions throughout)

inline Tensor resize_bilinear(const Tensor& img, int out_h, int out_w) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out({C, out_h, out_w});
    const double sy = static_cast<double>(H) / out_h;
    const double sx = static_cast<double>(W) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double v = (y + 0.5) * sy - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(v)), 0, H - 1);
        const int y1 = std::min(y0 + 1, H - 1);
        const double fy = std::clamp(v - y0, 0.0, 1.0);
        for (int x = 0; x < out_w; ++x) {
            const double u = (x + 0.5) * sx - 0.5;
            const int x0 = std::clamp(static_cast<int>(std::floor(u)), 0, W - 1);
            const int x1 = std::min(x0 + 1, W - 1);
            const double fx = std::clamp(u - x0, 0.0, 1.0);
            for (int c = 0; c < 3; ++c) {
                const double top = img.at(c, y0, x0) * (1 - fx) + img.at(c, y0, x1) * fx;
                const double bot = img.at(c, y1, x0) * (1 - fx) + img.at(c, y1, x1) * fx;
                out.at(c, y, x) = top * (1 - fy) + bot * fy;
            }
        }
    }
    return out;
}

inline Tensor crop_pad(const Tensor& img, int off_x, int off_y, int size) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out({C, size, size});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < size; ++y) {
            const int sy = y + off_y;
            if (sy < 0 || sy >= H) continue;
            for (int x = 0; x < size; ++x) {
                const int sx = x + off_x;
                if (sx < 0 || sx >= W) continue;
                out.at(c, y, x) = img.at(c, sy, sx);
            }
        }
    return out;
}

inline Tensor hflip_image(const Tensor& img) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out({C, H, W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) out.at(c, y, x) = img.at(c, y, W - 1 - x);
    return out;
}

inline Tensor rotate_image(const Tensor& img, double theta_rad, double cx, double cy) {
    const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out({C, H, W});
    const double cs = std::cos(theta_rad), sn = std::sin(theta_rad);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            // inverse rotation of the destination pixel center
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            const double sx_c = cs * dx + sn * dy + cx;
            const double sy_c = -sn * dx + cs * dy + cy;
            const double u = sx_c - 0.5, v = sy_c - 0.5;
            const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
            const double fx = u - x0, fy = v - y0;
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int iy = 0; iy < 2; ++iy) {
                    const int yy = y0 + iy;
                    if (yy < 0 || yy >= H) continue;
                    const double wy = iy ? fy : 1.0 - fy;
                    for (int ix = 0; ix < 2; ++ix) {
                        const int xx = x0 + ix;
                        if (xx < 0 || xx >= W) continue;
                        acc += wy * (ix ? fx : 1.0 - fx) * img.at(c, yy, xx);
                    }
                }
                out.at(c, y, x) = acc;
            }
        }
    }
    return out;
}

inline Point rotate_point(const Point& p, double theta_rad, double cx, double cy) {
    const double cs = std::cos(theta_rad), sn = std::sin(theta_rad);
    const double dx = p.x - cx, dy = p.y - cy;
    return Point{cs * dx - sn * dy + cx, sn * dx + cs * dy + cy};
}

namespace detail {

inline void apply_color_jitter(Tensor& img, const std::array<double, 3>& gain,
                               const std::array<double, 3>& bias) {
    const int H = img.dim(1), W = img.dim(2);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                img.at(c, y, x) = std::clamp(img.at(c, y, x) * gain[c] + bias[c], 0.0, 1.0);
}

inline void scale_annotations(std::vector<FaceAnnotation>& faces, double fx, double fy) {
    for (auto& f : faces) {
        f.box = Box(f.box.x1 * fx, f.box.y1 * fy, f.box.x2 * fx, f.box.y2 * fy);
        for (auto& p : f.landmarks) {
            p.x *= fx;
            p.y *= fy;
        }
    }
}

// Keeps faces whose box center lies inside the crop; boxes are clipped to the
// crop and landmarks outside it are marked invisible.
inline std::vector<FaceAnnotation> crop_annotations(const std::vector<FaceAnnotation>& faces,
                                                    int off_x, int off_y, int size) {
    std::vector<FaceAnnotation> out;
    for (const auto& f : faces) {
        const double cx = f.box.cx() - off_x, cy = f.box.cy() - off_y;
        if (cx < 0.0 || cx >= size || cy < 0.0 || cy >= size) continue;
        FaceAnnotation g = f;
        g.box = Box(std::max(0.0, f.box.x1 - off_x), std::max(0.0, f.box.y1 - off_y),
                    std::min<double>(size, f.box.x2 - off_x), std::min<double>(size, f.box.y2 - off_y));
        for (std::size_t k = 0; k < g.landmarks.size(); ++k) {
            g.landmarks[k].x -= off_x;
            g.landmarks[k].y -= off_y;
            if (g.landmarks[k].x < 0.0 || g.landmarks[k].x > size || g.landmarks[k].y < 0.0 ||
                g.landmarks[k].y > size)
                g.visible[k] = false;
        }
        out.push_back(std::move(g));
    }
    return out;
}

inline void hflip_annotations(std::vector<FaceAnnotation>& faces, int width) {
    for (auto& f : faces) {
        f.box = Box(width - f.box.x2, f.box.y1, width - f.box.x1, f.box.y2);
        std::vector<Point> lm(f.landmarks.size());
        std::vector<bool> vis(f.visible.size());
        for (std::size_t k = 0; k < f.landmarks.size(); ++k) {
            const int src = (f.landmarks.size() == kNumLandmarks) ? kLandmarkFlipSwap[k]
                                                                  : static_cast<int>(k);
            lm[k] = Point{width - f.landmarks[src].x, f.landmarks[src].y};
            vis[k] = f.visible[src];
        }
        f.landmarks = std::move(lm);
        f.visible = std::move(vis);
    }
}

} // namespace detail

/// Detection-mode augmentation: scale jitter -> annotation filter -> square
/// crop (bbox-centered with probability bbox_crop_prob when faces exist) ->
/// horizontal flip -> per-channel color jitter.
inline Scene augment_detection(const Scene& scene, const AugmentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed));
    // fixed draw order, independent of branches taken
    const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
    const bool bbox_crop = rng.bernoulli(cfg.bbox_crop_prob);
    const double face_pick = rng.uniform();
    const double jx = rng.uniform(), jy = rng.uniform();
    const bool flip = rng.bernoulli(cfg.hflip_prob);
    std::array<double, 3> gain, bias;
    for (int c = 0; c < 3; ++c) gain[c] = rng.uniform(cfg.color_gain_min, cfg.color_gain_max);
    for (int c = 0; c < 3; ++c) bias[c] = rng.uniform(cfg.color_bias_min, cfg.color_bias_max);

    const int new_w = std::max(1, static_cast<int>(std::lround(scene.width * scale)));
    const int new_h = std::max(1, static_cast<int>(std::lround(scene.height * scale)));
    Tensor img = resize_bilinear(scene.image, new_h, new_w);
    std::vector<FaceAnnotation> faces = scene.faces;
    detail::scale_annotations(faces, static_cast<double>(new_w) / scene.width,
                              static_cast<double>(new_h) / scene.height);
    faces = filter_annotations(faces, cfg.area_small, cfg.area_large);

    const int crop = cfg.crop_size;
    const int lo_x = std::min(0, new_w - crop), hi_x = std::max(0, new_w - crop);
    const int lo_y = std::min(0, new_h - crop), hi_y = std::max(0, new_h - crop);
    int off_x, off_y;
    if (bbox_crop && !faces.empty()) {
        const auto& b = faces[static_cast<std::size_t>(face_pick * static_cast<double>(faces.size())) %
                              faces.size()].box;
        off_x = static_cast<int>(std::lround(b.cx() - crop / 2.0 + (jx - 0.5) * crop / 2.0));
        off_y = static_cast<int>(std::lround(b.cy() - crop / 2.0 + (jy - 0.5) * crop / 2.0));
        off_x = std::clamp(off_x, lo_x, hi_x);
        off_y = std::clamp(off_y, lo_y, hi_y);
    } else {
        off_x = lo_x + static_cast<int>(jx * (hi_x - lo_x + 1));
        off_y = lo_y + static_cast<int>(jy * (hi_y - lo_y + 1));
    }

    Scene out;
    out.width = crop;
    out.height = crop;
    out.seed = seed;
    out.faces_requested = scene.faces_requested;
    out.image = crop_pad(img, off_x, off_y, crop);
    out.faces = detail::crop_annotations(faces, off_x, off_y, crop);

    if (flip) {
        out.image = hflip_image(out.image);
        detail::hflip_annotations(out.faces, crop);
    }
    detail::apply_color_jitter(out.image, gain, bias);
    return out;
}

/// Landmark-mode augmentation: rescale a chosen face into the target box-size
/// range -> crop around it -> in-plane rotation (boxes become hulls of the
/// rotated corners) -> flip -> color jitter.
inline Scene augment_landmark(const Scene& scene, const AugmentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (scene.faces.empty()) throw std::invalid_argument("augment_landmark: scene has no faces");
    Rng rng(mix_seed(seed));
    const int face_idx = rng.uniform_int(static_cast<int>(scene.faces.size()));
    const double target = rng.uniform(cfg.box_size_min, cfg.box_size_max);
    const double jx = rng.uniform(), jy = rng.uniform();
    const double theta = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg) * M_PI / 180.0;
    const bool flip = rng.bernoulli(cfg.hflip_prob);
    std::array<double, 3> gain, bias;
    for (int c = 0; c < 3; ++c) gain[c] = rng.uniform(cfg.color_gain_min, cfg.color_gain_max);
    for (int c = 0; c < 3; ++c) bias[c] = rng.uniform(cfg.color_bias_min, cfg.color_bias_max);

    const Box& fb = scene.faces[face_idx].box;
    const double side = std::sqrt(fb.area());
    const double scale = target / side;
    const int new_w = std::max(1, static_cast<int>(std::lround(scene.width * scale)));
    const int new_h = std::max(1, static_cast<int>(std::lround(scene.height * scale)));
    Tensor img = resize_bilinear(scene.image, new_h, new_w);
    std::vector<FaceAnnotation> faces = scene.faces;
    detail::scale_annotations(faces, static_cast<double>(new_w) / scene.width,
                              static_cast<double>(new_h) / scene.height);

    const int crop = cfg.landmark_crop_size;
    const Box scaled_face = faces[face_idx].box;
    const double slack = std::max(0.0, (crop - scaled_face.width()) / 2.0 - 1.0);
    const double jitter = std::min(crop / 8.0, slack);
    int off_x = static_cast<int>(std::lround(scaled_face.cx() - crop / 2.0 + (jx - 0.5) * 2.0 * jitter));
    int off_y = static_cast<int>(std::lround(scaled_face.cy() - crop / 2.0 + (jy - 0.5) * 2.0 * jitter));

    Scene out;
    out.width = crop;
    out.height = crop;
    out.seed = seed;
    out.faces_requested = scene.faces_requested;
    out.image = crop_pad(img, off_x, off_y, crop);
    out.faces = detail::crop_annotations(faces, off_x, off_y, crop);

    if (theta != 0.0) {
        const double c = crop / 2.0;
        out.image = rotate_image(out.image, theta, c, c);
        for (auto& f : out.faces) {
            const Point corners[4] = {{f.box.x1, f.box.y1}, {f.box.x2, f.box.y1},
                                      {f.box.x1, f.box.y2}, {f.box.x2, f.box.y2}};
            double x1 = 1e30, y1 = 1e30, x2 = -1e30, y2 = -1e30;
            for (const auto& p : corners) {
                const Point q = rotate_point(p, theta, c, c);
                x1 = std::min(x1, q.x);
                y1 = std::min(y1, q.y);
                x2 = std::max(x2, q.x);
                y2 = std::max(y2, q.y);
            }
            f.box = Box(std::max(0.0, x1), std::max(0.0, y1), std::min<double>(crop, x2),
                        std::min<double>(crop, y2));
            for (std::size_t k = 0; k < f.landmarks.size(); ++k) {
                f.landmarks[k] = rotate_point(f.landmarks[k], theta, c, c);
                if (f.landmarks[k].x < 0.0 || f.landmarks[k].x > crop || f.landmarks[k].y < 0.0 ||
                    f.landmarks[k].y > crop)
                    f.visible[k] = false;
            }
        }
    }
    if (flip) {
        out.image = hflip_image(out.image);
        detail::hflip_annotations(out.faces, crop);
    }
    detail::apply_color_jitter(out.image, gain, bias);
    return out;
}

} // namespace maskkit
