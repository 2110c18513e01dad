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
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

const char* cli_path() { return MASKKIT_CLI_PATH; }

int run(const std::string& args) {
    const std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    EXPECT_TRUE(in.good()) << p;
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "maskkit_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

void expect_dirs_identical(const fs::path& a, const fs::path& b) {
    const auto fa = sorted_files(a), fb = sorted_files(b);
    ASSERT_EQ(fa.size(), fb.size());
    for (std::size_t i = 0; i < fa.size(); ++i) {
        EXPECT_EQ(fa[i].filename(), fb[i].filename());
        EXPECT_EQ(read_file(fa[i]), read_file(fb[i])) << fa[i].filename();
    }
}

TEST(CliTest, GenIsByteDeterministic) {
    const fs::path a = fresh_dir("gen_a"), b = fresh_dir("gen_b");
    const std::string flags = "gen --seed 7 --scenes 3 --image-size 96 --out-dir ";
    ASSERT_EQ(run(flags + a.string()), 0);
    ASSERT_EQ(run(flags + b.string()), 0);
    expect_dirs_identical(a, b);
    EXPECT_TRUE(fs::exists(a / "corpus.json"));
    EXPECT_TRUE(fs::exists(a / "scene_0000.ppm"));
    EXPECT_TRUE(fs::exists(a / "scene_0002.json"));
}

TEST(CliTest, GenIndependentOfThreadCount) {
    const fs::path a = fresh_dir("thr_a"), b = fresh_dir("thr_b");
    const std::string base = std::string(cli_path()) +
                             " gen --seed 9 --scenes 2 --image-size 96 --out-dir ";
    ASSERT_EQ(WEXITSTATUS(std::system(
                  ("MASKKIT_THREADS=1 " + base + a.string() + " > /dev/null 2>&1").c_str())),
              0);
    ASSERT_EQ(WEXITSTATUS(std::system(
                  ("MASKKIT_THREADS=3 " + base + b.string() + " > /dev/null 2>&1").c_str())),
              0);
    expect_dirs_identical(a, b);
}

TEST(CliTest, PipelineProducesDocumentedArtifacts) {
    const fs::path data = fresh_dir("pipe_data");
    const fs::path runa = fresh_dir("pipe_run_a");
    const fs::path runb = fresh_dir("pipe_run_b");
    const fs::path eva = fresh_dir("pipe_eval_a");
    const fs::path evb = fresh_dir("pipe_eval_b");

    ASSERT_EQ(run("gen --seed 11 --scenes 4 --image-size 96 --out-dir " + data.string()), 0);
    const std::string train_flags =
        "train --seed 11 --steps 12 --image-size 96 --data " + data.string() + " --out-dir ";
    ASSERT_EQ(run(train_flags + runa.string()), 0);
    ASSERT_EQ(run(train_flags + runb.string()), 0);
    expect_dirs_identical(runa, runb);

    const std::string trace = read_file(runa / "trace.csv");
    EXPECT_EQ(trace.rfind("step,l_cls,l_box,l_kp,l_total,n_pos,n_rois,lr\n", 0), 0u);
    EXPECT_TRUE(fs::exists(runa / "model.ckpt"));

    const std::string eval_flags = "eval --model " + (runa / "model.ckpt").string() + " --data " +
                                   data.string() + " --out-dir ";
    ASSERT_EQ(run(eval_flags + eva.string()), 0);
    ASSERT_EQ(run(eval_flags + evb.string()), 0);
    expect_dirs_identical(eva, evb);

    for (const char* name : {"detections.jsonl", "summary.json", "pr_curve.csv", "ced_curve.csv"})
        EXPECT_TRUE(fs::exists(eva / name)) << name;

    // Every JSONL line is a standalone record with the documented keys.
    std::ifstream dets(eva / "detections.jsonl");
    std::string line;
    while (std::getline(dets, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("image"));
        EXPECT_TRUE(j.contains("box"));
        EXPECT_TRUE(j.contains("score"));
        EXPECT_TRUE(j.contains("landmarks"));
        EXPECT_EQ(j.at("box").size(), 4u);
    }

    const auto summary = nlohmann::json::parse(read_file(eva / "summary.json"));
    EXPECT_TRUE(summary.contains("ap"));
    EXPECT_TRUE(summary.contains("mean_nme"));
    EXPECT_TRUE(summary.contains("ced_at_0.95"));
    EXPECT_GE(summary.at("ap").get<double>(), 0.0);
}

TEST(CliTest, FusionFlagsAreAccepted) {
    const fs::path data = fresh_dir("fuse_data");
    const fs::path runa = fresh_dir("fuse_run");
    const fs::path ev = fresh_dir("fuse_eval");
    ASSERT_EQ(run("gen --seed 13 --scenes 2 --image-size 96 --out-dir " + data.string()), 0);
    ASSERT_EQ(run("train --seed 13 --steps 6 --image-size 96 --data " + data.string() +
                  " --out-dir " + runa.string()),
              0);
    EXPECT_EQ(run("eval --model " + (runa / "model.ckpt").string() + " --data " + data.string() +
                  " --multi-scale --flip --out-dir " + ev.string()),
              0);
    EXPECT_TRUE(fs::exists(ev / "summary.json"));
}

TEST(CliTest, ExitCodesDistinguishFailureModes) {
    const fs::path out = fresh_dir("codes");
    // Config failures: missing model file, unknown flag, missing subcommand.
    EXPECT_EQ(run("eval --model " + (out / "nope.ckpt").string() + " --data " + out.string() +
                  " --out-dir " + out.string()),
              2);
    EXPECT_EQ(run("train --bogus-flag 3"), 2);
    EXPECT_EQ(run(""), 2);
    // I/O failure: corpus directory without a manifest.
    EXPECT_EQ(run("train --seed 1 --steps 2 --image-size 96 --data " + (out / "nodata").string() +
                  " --out-dir " + out.string()),
              3);
}

TEST(CliTest, BenchRunsAtSmallSize) {
    EXPECT_EQ(run("bench --image-size 64"), 0);
}

} // namespace
