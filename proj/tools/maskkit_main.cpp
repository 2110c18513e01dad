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
#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "maskkit/checkpoint.hpp"
#include "maskkit/gradcheck.hpp"
#include "maskkit/pipeline.hpp"
#include "maskkit/scene_io.hpp"
#include "maskkit/train.hpp"

namespace fs = std::filesystem;
using namespace maskkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDivergence = 4;

std::string scene_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04d", index);
    return buf;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<Scene> load_corpus(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "corpus.json");
    if (!in) throw std::runtime_error("load_corpus: missing corpus.json in " + dir);
    nlohmann::json manifest;
    in >> manifest;
    const int n = manifest.at("scenes").get<int>();
    std::vector<Scene> scenes;
    scenes.reserve(n);
    for (int i = 0; i < n; ++i) {
        const std::string stem = (fs::path(dir) / scene_stem(i)).string();
        scenes.push_back(load_scene(stem + ".ppm", stem + ".json"));
    }
    return scenes;
}

int cmd_gen(std::uint64_t seed, int n_scenes, int image_size, const std::string& out_dir) {
    if (n_scenes <= 0 || image_size < 32)
        throw std::invalid_argument("gen: need --scenes > 0 and --image-size >= 32");
    fs::create_directories(out_dir);
    Rng master(mix_seed(seed));
    for (int i = 0; i < n_scenes; ++i) {
        const int n_faces = 1 + master.uniform_int(2);
        const std::uint64_t scene_seed = master.bits();
        const Scene scene = generate_scene(scene_seed, image_size, image_size, n_faces,
                                           0.25 * image_size, 0.6 * image_size);
        const std::string stem = (fs::path(out_dir) / scene_stem(i)).string();
        save_ppm(stem + ".ppm", scene.image);
        save_annotations(stem + ".json", scene);
    }
    nlohmann::ordered_json manifest;
    manifest["seed"] = seed;
    manifest["scenes"] = n_scenes;
    manifest["image_size"] = image_size;
    std::ofstream out(fs::path(out_dir) / "corpus.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("gen: cannot write manifest in " + out_dir);
    std::cout << "wrote " << n_scenes << " scenes to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(std::uint64_t seed, const std::string& data_dir, int steps, double lambda_kp,
              int k0, int image_size, const std::string& out_dir) {
    const std::vector<Scene> scenes = load_corpus(data_dir);
    ToyModelConfig mcfg;
    mcfg.k0 = k0;
    ToyModel model(mcfg, seed);

    TrainConfig tcfg = default_train_config(image_size);
    tcfg.steps = steps;
    tcfg.seed = seed;
    tcfg.loss.lambda_kp = lambda_kp;
    const TrainResult result = train_toy(model, scenes, tcfg, &std::cout);

    fs::create_directories(out_dir);
    std::ofstream trace(fs::path(out_dir) / "trace.csv", std::ios::binary);
    trace << "step,l_cls,l_box,l_kp,l_total,n_pos,n_rois,lr\n";
    for (const auto& s : result.trace)
        trace << s.step << ',' << fmt17(s.l_cls) << ',' << fmt17(s.l_box) << ',' << fmt17(s.l_kp)
              << ',' << fmt17(s.l_total) << ',' << s.n_pos << ',' << s.n_rois << ','
              << fmt17(s.lr) << "\n";
    if (!trace) throw std::runtime_error("train: cannot write trace in " + out_dir);
    trace.close();
    save_checkpoint((fs::path(out_dir) / "model.ckpt").string(), model);

    if (result.diverged) {
        std::cerr << "training diverged after " << result.steps_run << " steps\n";
        return kExitDivergence;
    }
    std::cout << "trained " << result.steps_run << " steps; final loss "
              << result.trace.back().l_total << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir,
             const std::string& out_dir, bool multi_scale, bool flip) {
    if (model_path.empty() || !fs::exists(model_path))
        throw std::invalid_argument("eval: --model must point to a trained checkpoint");
    const ToyModel model = load_checkpoint(model_path);
    const std::vector<Scene> scenes = load_corpus(data_dir);

    DetectConfig dcfg;
    dcfg.multi_scale = multi_scale;
    dcfg.flip = flip;
    EvalConfig ecfg;
    std::vector<std::vector<DetectedFace>> all_dets;
    const EvalSummary summary = evaluate_scenes(model, scenes, dcfg, ecfg, &all_dets);

    fs::create_directories(out_dir);
    std::ofstream jsonl(fs::path(out_dir) / "detections.jsonl", std::ios::binary);
    for (std::size_t im = 0; im < all_dets.size(); ++im)
        for (const auto& f : all_dets[im])
            jsonl << detection_to_json(scene_stem(static_cast<int>(im)), f).dump() << "\n";
    if (!jsonl) throw std::runtime_error("eval: cannot write detections in " + out_dir);

    std::ofstream sj(fs::path(out_dir) / "summary.json", std::ios::binary);
    sj << summary_to_json(summary).dump(2) << "\n";
    std::ofstream pr(fs::path(out_dir) / "pr_curve.csv", std::ios::binary);
    pr << pr_curve_csv(summary.pr);
    std::ofstream ced(fs::path(out_dir) / "ced_curve.csv", std::ios::binary);
    ced << ced_curve_csv(summary.ced);
    if (!sj || !pr || !ced) throw std::runtime_error("eval: cannot write artifacts in " + out_dir);

    std::cout << summary_to_json(summary).dump(2) << "\n";
    return kExitOk;
}

int cmd_bench(int image_size) {
    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };

    ToyModelConfig mcfg;
    ToyModel model(mcfg, 7);
    const Scene scene = generate_scene(11, image_size, image_size, 2, 0.25 * image_size,
                                       0.6 * image_size);
    const MacBreakdown mac = count_macs(mcfg, image_size, image_size);
    std::printf("MACs @%dx%d: backbone %" PRIu64 "  fpn %" PRIu64 "  context %" PRIu64
                "  heads %" PRIu64 "  detection %" PRIu64 "  keypoint/roi %" PRIu64 "\n",
                image_size, image_size, mac.backbone, mac.fpn, mac.context, mac.heads,
                mac.detection(), mac.keypoint_per_roi);
    std::printf("keypoint/detection MAC ratio per RoI: %.6f\n",
                static_cast<double>(mac.keypoint_per_roi) / mac.detection());

    // detection forward
    const int det_reps = 5;
    ModelForward fwd = model.forward(scene.image, false);
    auto t0 = clock::now();
    for (int r = 0; r < det_reps; ++r) fwd = model.forward(scene.image, false);
    const double det_ms = ms_since(t0) / det_reps;
    std::printf("detection forward: %.2f ms\n", det_ms);

    // keypoint head per RoI
    const Box roi(0.3 * image_size, 0.3 * image_size, 0.6 * image_size, 0.6 * image_size);
    const int kp_reps = 50;
    t0 = clock::now();
    for (int r = 0; r < kp_reps; ++r) (void)model.keypoint_head(fwd, roi);
    const double kp_ms = ms_since(t0) / kp_reps;
    std::printf("keypoint head per RoI: %.3f ms  (measured/forward ratio %.6f)\n", kp_ms,
                kp_ms / det_ms);

    // micro kernels
    Rng rng(3);
    Tensor x({16, 40, 40}), w({16, 16, 3, 3}), b({16});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal() * 0.05;
    t0 = clock::now();
    for (int r = 0; r < 20; ++r) (void)conv2d(x, w, b);
    std::printf("conv2d 16x40x40 3x3: %.3f ms\n", ms_since(t0) / 20);

    std::vector<Detection> dets;
    for (int i = 0; i < 1000; ++i) {
        const double x1 = rng.uniform(0.0, 500.0), y1 = rng.uniform(0.0, 500.0);
        dets.push_back({Box(x1, y1, x1 + rng.uniform(5.0, 100.0), y1 + rng.uniform(5.0, 100.0)),
                        rng.uniform(), 0});
    }
    t0 = clock::now();
    for (int r = 0; r < 20; ++r) (void)nms_greedy(dets, 0.5);
    std::printf("greedy NMS 1000 boxes: %.3f ms\n", ms_since(t0) / 20);
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
    const std::vector<GradCheckReport> reports = run_gradient_checks(seed);
    bool ok = true;
    std::printf("%-24s %9s %8s %14s  %s\n", "op", "instances", "coords", "max_rel_err", "status");
    for (const auto& r : reports) {
        const bool pass = r.max_rel_err < gc::kTolerance;
        ok = ok && pass;
        std::printf("%-24s %9d %8zu %14.3e  %s\n", r.name.c_str(), r.instances, r.coords,
                    r.max_rel_err, pass ? "ok" : "FAIL");
    }
    return ok ? kExitOk : kExitFail;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"maskkit: multi-task face and landmark detection pipeline"};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    int scenes = 64, image_size = 160, steps = 2500, k0 = 3;
    double lambda_kp = 0.25;
    std::string out_dir, data_dir, model_path;
    bool multi_scale = false, flip = false;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic scene corpus");
    gen->add_option("--seed", seed, "corpus seed");
    gen->add_option("--scenes", scenes, "number of scenes");
    gen->add_option("--image-size", image_size, "square scene size in pixels");
    gen->add_option("--out-dir", out_dir, "output directory")->required();

    CLI::App* train = app.add_subcommand("train", "train the toy model");
    train->add_option("--seed", seed, "model and schedule seed");
    train->add_option("--data", data_dir, "corpus directory from gen")->required();
    train->add_option("--steps", steps, "SGD steps");
    train->add_option("--lambda-kp", lambda_kp, "keypoint loss weight");
    train->add_option("--k0", k0, "RoI level assignment constant");
    train->add_option("--image-size", image_size, "training crop size");
    train->add_option("--out-dir", out_dir, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate a trained model on a corpus");
    eval->add_option("--model", model_path, "checkpoint path")->required();
    eval->add_option("--data", data_dir, "corpus directory from gen")->required();
    eval->add_option("--out-dir", out_dir, "output directory")->required();
    eval->add_flag("--multi-scale", multi_scale, "add 0.5x and 2x pyramid passes");
    eval->add_flag("--flip", flip, "add horizontally flipped passes");

    CLI::App* bench = app.add_subcommand("bench", "op timings and head-cost report");
    bench->add_option("--image-size", image_size, "input size for the forward benchmarks");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--seed", seed, "probe seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*gen) return cmd_gen(seed, scenes, image_size, out_dir);
        if (*train) return cmd_train(seed, data_dir, steps, lambda_kp, k0, image_size, out_dir);
        if (*eval) return cmd_eval(model_path, data_dir, out_dir, multi_scale, flip);
        if (*bench) return cmd_bench(image_size);
        if (*gradcheck) return cmd_gradcheck(seed);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitConfig;
}
