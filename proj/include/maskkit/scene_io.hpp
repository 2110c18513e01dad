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
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskkit/synthdata.hpp"

namespace maskkit {

/// Binary PPM (P6, maxval 255). Values are clamped to [0,1] and rounded.
inline void save_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw std::invalid_argument("save_ppm: expected [3,H,W]");
    const int H = img.dim(1), W = img.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_ppm: cannot open " + path);
    out << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(W) * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("save_ppm: write failed for " + path);
}

inline Tensor load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_ppm: cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("load_ppm: unsupported header in " + path);
    in.get(); // single whitespace after maxval
    Tensor img({3, h, w});
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!in) throw std::runtime_error("load_ppm: truncated file " + path);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
    }
    return img;
}

inline nlohmann::ordered_json annotations_to_json(const Scene& scene) {
    nlohmann::ordered_json j;
    j["width"] = scene.width;
    j["height"] = scene.height;
    j["seed"] = scene.seed;
    j["faces"] = nlohmann::ordered_json::array();
    for (const auto& f : scene.faces) {
        nlohmann::ordered_json jf;
        jf["box"] = {f.box.x1, f.box.y1, f.box.x2, f.box.y2};
        jf["landmarks"] = nlohmann::ordered_json::array();
        for (std::size_t k = 0; k < f.landmarks.size(); ++k)
            jf["landmarks"].push_back({f.landmarks[k].x, f.landmarks[k].y, f.visible[k] ? 1 : 0});
        j["faces"].push_back(std::move(jf));
    }
    return j;
}

inline void save_annotations(const std::string& path, const Scene& scene) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_annotations: cannot open " + path);
    out << annotations_to_json(scene).dump(2) << "\n";
    if (!out) throw std::runtime_error("save_annotations: write failed for " + path);
}

inline Scene load_scene(const std::string& ppm_path, const std::string& json_path) {
    Scene scene;
    scene.image = load_ppm(ppm_path);
    scene.height = scene.image.dim(1);
    scene.width = scene.image.dim(2);

    std::ifstream in(json_path);
    if (!in) throw std::runtime_error("load_scene: cannot open " + json_path);
    nlohmann::json j;
    in >> j;
    if (j.contains("seed")) scene.seed = j["seed"].get<std::uint64_t>();
    for (const auto& jf : j.at("faces")) {
        FaceAnnotation f;
        const auto& b = jf.at("box");
        f.box = Box(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                    b.at(3).get<double>());
        for (const auto& lm : jf.at("landmarks")) {
            f.landmarks.push_back(Point{lm.at(0).get<double>(), lm.at(1).get<double>()});
            f.visible.push_back(lm.at(2).get<int>() != 0);
        }
        scene.faces.push_back(std::move(f));
    }
    scene.faces_requested = static_cast<int>(scene.faces.size());
    return scene;
}

} // namespace maskkit
