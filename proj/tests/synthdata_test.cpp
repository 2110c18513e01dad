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
#include <cmath>
#include <cstdio>
#include <filesystem>

#include <gtest/gtest.h>

#include "maskkit/scene_io.hpp"
#include "maskkit/synthdata.hpp"

using namespace maskkit;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "maskkit_synthdata_test";
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST(GenerateSceneTest, DeterministicPerSeed) {
    const Scene a = generate_scene(99, 128, 96, 2, 24, 48);
    const Scene b = generate_scene(99, 128, 96, 2, 24, 48);
    ASSERT_EQ(a.image.size(), b.image.size());
    for (std::size_t i = 0; i < a.image.size(); ++i) ASSERT_EQ(a.image[i], b.image[i]);
    ASSERT_EQ(a.faces.size(), b.faces.size());
    for (std::size_t f = 0; f < a.faces.size(); ++f) {
        EXPECT_EQ(a.faces[f].box.x1, b.faces[f].box.x1);
        EXPECT_EQ(a.faces[f].box.y2, b.faces[f].box.y2);
    }

    const Scene c = generate_scene(100, 128, 96, 2, 24, 48);
    bool differs = false;
    for (std::size_t i = 0; i < a.image.size() && !differs; ++i)
        differs = a.image[i] != c.image[i];
    EXPECT_TRUE(differs);
}

TEST(GenerateSceneTest, PixelsQuantizedTo255Steps) {
    const Scene s = generate_scene(7, 96, 96, 1, 30, 50);
    for (std::size_t i = 0; i < s.image.size(); ++i) {
        const double v = s.image[i];
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
        ASSERT_EQ(v, std::round(v * 255.0) / 255.0);
    }
}

TEST(GenerateSceneTest, FacesInsideBoundsWithBoundedOverlap) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Scene s = generate_scene(seed, 160, 160, 3, 30, 70);
        for (const auto& f : s.faces) {
            EXPECT_GE(f.box.x1, 0.0);
            EXPECT_GE(f.box.y1, 0.0);
            EXPECT_LE(f.box.x2, 160.0);
            EXPECT_LE(f.box.y2, 160.0);
            ASSERT_EQ(f.landmarks.size(), static_cast<std::size_t>(kNumLandmarks));
            for (int k = 0; k < kNumLandmarks; ++k) EXPECT_TRUE(f.visible[k]);
        }
        for (std::size_t i = 0; i < s.faces.size(); ++i)
            for (std::size_t j = i + 1; j < s.faces.size(); ++j)
                EXPECT_LE(iou(s.faces[i].box, s.faces[j].box), 0.1);
    }
}

TEST(GenerateSceneTest, LandmarksAtCanonicalOffsets) {
    const Scene s = generate_scene(5, 128, 128, 1, 40, 60);
    ASSERT_EQ(s.faces.size(), 1u);
    const FaceAnnotation& f = s.faces[0];
    for (int k = 0; k < kNumLandmarks; ++k) {
        EXPECT_NEAR(f.landmarks[k].x, f.box.x1 + kLandmarkOffsets[k].x * f.box.width(), 1e-12);
        EXPECT_NEAR(f.landmarks[k].y, f.box.y1 + kLandmarkOffsets[k].y * f.box.height(), 1e-12);
    }
}

TEST(FilterAnnotationsTest, KeepsAreaBand) {
    auto face_with_area = [](double area) {
        FaceAnnotation f;
        const double side = std::sqrt(area);
        f.box = Box(0, 0, side, side);
        return f;
    };
    const double small = 256.0, large = 406.3747 * 406.3747;
    std::vector<FaceAnnotation> faces = {
        face_with_area(0.4 * small - 1.0),  // just below the lower bound
        face_with_area(0.4 * small + 1.0),
        face_with_area(10000.0),
        face_with_area(2.5 * large - 1.0),
        face_with_area(2.5 * large + 1.0),  // just above the upper bound
    };
    const std::vector<FaceAnnotation> kept = filter_annotations(faces, small, large);
    ASSERT_EQ(kept.size(), 3u);
    EXPECT_NEAR(kept.front().box.area(), 0.4 * small + 1.0, 1e-6);
    EXPECT_NEAR(kept.back().box.area(), 2.5 * large - 1.0, 1e-3);
}

TEST(ResizeTest, IdentityAndConstant) {
    const Scene s = generate_scene(3, 64, 48, 1, 20, 30);
    const Tensor same = resize_bilinear(s.image, 48, 64);
    for (std::size_t i = 0; i < same.size(); ++i) EXPECT_NEAR(same[i], s.image[i], 1e-12);

    Tensor flat({3, 20, 20});
    flat.fill(0.6);
    const Tensor up = resize_bilinear(flat, 33, 47);
    for (std::size_t i = 0; i < up.size(); ++i) EXPECT_NEAR(up[i], 0.6, 1e-12);
}

TEST(CropPadTest, InteriorAndZeroPadding) {
    Tensor img({1, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) img.at(0, y, x) = y * 4 + x;

    const Tensor inner = crop_pad(img, 1, 2, 2);
    EXPECT_DOUBLE_EQ(inner.at(0, 0, 0), 9.0);  // (y=2, x=1)
    EXPECT_DOUBLE_EQ(inner.at(0, 1, 1), 14.0); // (y=3, x=2)

    const Tensor hang = crop_pad(img, 3, 3, 3);
    EXPECT_DOUBLE_EQ(hang.at(0, 0, 0), 15.0);
    EXPECT_DOUBLE_EQ(hang.at(0, 0, 1), 0.0); // off the right edge
    EXPECT_DOUBLE_EQ(hang.at(0, 2, 2), 0.0);
}

TEST(FlipTest, ImageFlipIsInvolution) {
    const Scene s = generate_scene(21, 40, 30, 1, 12, 16);
    const Tensor twice = hflip_image(hflip_image(s.image));
    for (std::size_t i = 0; i < twice.size(); ++i) ASSERT_EQ(twice[i], s.image[i]);

    const Tensor once = hflip_image(s.image);
    EXPECT_DOUBLE_EQ(once.at(0, 5, 0), s.image.at(0, 5, 39));
}

TEST(FlipTest, AnnotationsMirrorAndSwapIdentities) {
    FaceAnnotation f;
    f.box = Box(10, 20, 30, 60);
    f.landmarks = landmarks_for_box(f.box);
    f.visible = {true, false, true, true, true};
    std::vector<FaceAnnotation> faces = {f};
    detail::hflip_annotations(faces, 100);

    EXPECT_DOUBLE_EQ(faces[0].box.x1, 70.0);
    EXPECT_DOUBLE_EQ(faces[0].box.x2, 90.0);
    EXPECT_DOUBLE_EQ(faces[0].box.y1, 20.0);

    // left eye is now the mirror of the old right eye, and keeps its flag
    EXPECT_NEAR(faces[0].landmarks[0].x, 100.0 - f.landmarks[1].x, 1e-12);
    EXPECT_NEAR(faces[0].landmarks[0].y, f.landmarks[1].y, 1e-12);
    EXPECT_FALSE(faces[0].visible[0]);
    EXPECT_TRUE(faces[0].visible[1]);
    // mouth corners swap too; the nose stays put
    EXPECT_NEAR(faces[0].landmarks[3].x, 100.0 - f.landmarks[4].x, 1e-12);
    EXPECT_NEAR(faces[0].landmarks[2].x, 100.0 - f.landmarks[2].x, 1e-12);
}

TEST(RotateTest, PointRoundTripAndImageIdentity) {
    const Point p{13.5, 27.25};
    const Point q = rotate_point(rotate_point(p, 0.7, 50, 40), -0.7, 50, 40);
    EXPECT_NEAR(q.x, p.x, 1e-9);
    EXPECT_NEAR(q.y, p.y, 1e-9);

    const Scene s = generate_scene(33, 32, 32, 1, 12, 20);
    const Tensor same = rotate_image(s.image, 0.0, 16, 16);
    for (std::size_t i = 0; i < same.size(); ++i) EXPECT_NEAR(same[i], s.image[i], 1e-12);
}

TEST(AugmentDetectionTest, DeterministicAndInBounds) {
    AugmentConfig cfg;
    cfg.crop_size = 96;
    cfg.scale_min = 0.7;
    cfg.scale_max = 1.3;
    const Scene s = generate_scene(55, 160, 160, 2, 40, 80);

    const Scene a = augment_detection(s, cfg, 1234);
    const Scene b = augment_detection(s, cfg, 1234);
    ASSERT_EQ(a.image.size(), b.image.size());
    for (std::size_t i = 0; i < a.image.size(); ++i) ASSERT_EQ(a.image[i], b.image[i]);
    ASSERT_EQ(a.faces.size(), b.faces.size());

    EXPECT_EQ(a.width, 96);
    EXPECT_EQ(a.height, 96);
    EXPECT_EQ(a.image.dim(1), 96);
    EXPECT_EQ(a.image.dim(2), 96);
    for (const auto& f : a.faces) {
        EXPECT_GE(f.box.x1, 0.0);
        EXPECT_GE(f.box.y1, 0.0);
        EXPECT_LE(f.box.x2, 96.0);
        EXPECT_LE(f.box.y2, 96.0);
        for (int k = 0; k < kNumLandmarks; ++k)
            if (f.visible[k]) {
                EXPECT_GE(f.landmarks[k].x, 0.0);
                EXPECT_LE(f.landmarks[k].x, 96.0);
                EXPECT_GE(f.landmarks[k].y, 0.0);
                EXPECT_LE(f.landmarks[k].y, 96.0);
            }
    }

    const Scene c = augment_detection(s, cfg, 1235);
    bool differs = false;
    for (std::size_t i = 0; i < a.image.size() && !differs; ++i)
        differs = a.image[i] != c.image[i];
    EXPECT_TRUE(differs);
}

TEST(AugmentDetectionTest, PixelValuesStayInRange) {
    AugmentConfig cfg;
    cfg.crop_size = 64;
    const Scene s = generate_scene(77, 128, 128, 2, 30, 60);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Scene a = augment_detection(s, cfg, seed);
        for (std::size_t i = 0; i < a.image.size(); ++i) {
            ASSERT_GE(a.image[i], 0.0);
            ASSERT_LE(a.image[i], 1.0);
        }
    }
}

TEST(AugmentLandmarkTest, DeterministicWithTargetSize) {
    AugmentConfig cfg;
    cfg.mode = AugmentConfig::Mode::landmark;
    cfg.landmark_crop_size = 96;
    cfg.box_size_min = 40.0;
    cfg.box_size_max = 70.0;
    const Scene s = generate_scene(60, 160, 160, 2, 40, 80);

    const Scene a = augment_landmark(s, cfg, 42);
    const Scene b = augment_landmark(s, cfg, 42);
    for (std::size_t i = 0; i < a.image.size(); ++i) ASSERT_EQ(a.image[i], b.image[i]);
    EXPECT_EQ(a.width, 96);
    EXPECT_EQ(a.height, 96);
    ASSERT_GE(a.faces.size(), 1u);
}

TEST(SceneIoTest, PpmRoundTripIsExact) {
    const auto dir = temp_dir();
    const Scene s = generate_scene(91, 80, 64, 2, 20, 40);
    const std::string path = (dir / "scene.ppm").string();
    save_ppm(path, s.image);
    const Tensor back = load_ppm(path);
    ASSERT_TRUE(back.same_shape(s.image));
    for (std::size_t i = 0; i < back.size(); ++i)
        ASSERT_EQ(back[i], s.image[i]) << "pixel " << i;
    std::filesystem::remove(path);
}

TEST(SceneIoTest, AnnotationJsonRoundTrip) {
    const auto dir = temp_dir();
    const Scene s = generate_scene(92, 96, 96, 2, 24, 40);
    const std::string ppm = (dir / "rt.ppm").string();
    const std::string json = (dir / "rt.json").string();
    save_ppm(ppm, s.image);
    save_annotations(json, s);
    const Scene back = load_scene(ppm, json);

    EXPECT_EQ(back.width, s.width);
    EXPECT_EQ(back.height, s.height);
    EXPECT_EQ(back.seed, s.seed);
    ASSERT_EQ(back.faces.size(), s.faces.size());
    for (std::size_t f = 0; f < s.faces.size(); ++f) {
        EXPECT_EQ(back.faces[f].box.x1, s.faces[f].box.x1);
        EXPECT_EQ(back.faces[f].box.y2, s.faces[f].box.y2);
        for (int k = 0; k < kNumLandmarks; ++k) {
            EXPECT_EQ(back.faces[f].landmarks[k].x, s.faces[f].landmarks[k].x);
            EXPECT_EQ(back.faces[f].visible[k], s.faces[f].visible[k]);
        }
    }
    std::filesystem::remove(ppm);
    std::filesystem::remove(json);
}

TEST(SceneIoTest, LoadRejectsBadPpm) {
    const auto dir = temp_dir();
    const std::string path = (dir / "bad.ppm").string();
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("P5\n2 2\n255\n", f);
    std::fclose(f);
    EXPECT_THROW(load_ppm(path), std::runtime_error);
    EXPECT_THROW(load_ppm((dir / "missing.ppm").string()), std::runtime_error);
    std::filesystem::remove(path);
}
