#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "ttsn/ttsn.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string(TTSN_CLI_PATH) + " " + args + " 2>&1";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("popen failed");
    std::array<char, 4096> buf{};
    while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path work_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "ttsn_test_cli" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Small dataset pair shared by the train/eval/attn tests.
std::string small_generate(const fs::path& d) {
    return "generate --per-class 5 --frames 4 --size 16 --seed 3 --out " + q(d / "d.ttsd") + " --test-out " +
           q(d / "t.ttsd") + " --test-per-class 3";
}

} // namespace

TEST(Cli, GenerateDefaultCountAndDeterminism) {
    const fs::path d = work_dir("generate");
    const auto a = run("generate --classes 4 --per-class 100 --frames 8 --size 32 --seed 7 --out " + q(d / "a.ttsd"));
    ASSERT_EQ(a.code, 0) << a.out;
    const auto b = run("generate --classes 4 --per-class 100 --frames 8 --size 32 --seed 7 --out " + q(d / "b.ttsd"));
    ASSERT_EQ(b.code, 0) << b.out;
    EXPECT_EQ(ttsn::data::read_clips((d / "a.ttsd").string()).size(), 400u);
    EXPECT_EQ(ttsn::io::file_hash((d / "a.ttsd").string()), ttsn::io::file_hash((d / "b.ttsd").string()));
    EXPECT_NE(a.out.find("400 clips"), std::string::npos);
    EXPECT_NE(a.out.find("class 3 (right): 100"), std::string::npos);
}

TEST(Cli, GenerateRejectsTooFewFrames) {
    const fs::path d = work_dir("frames1");
    const auto r = run("generate --frames 1 --out " + q(d / "x.ttsd"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("N >= 4"), std::string::npos) << r.out;
    EXPECT_FALSE(fs::exists(d / "x.ttsd"));
}

TEST(Cli, TrainValidatesThetaBeforeReadingData) {
    const fs::path d = work_dir("theta");
    // The dataset does not exist: a validation error must win over the I/O error.
    auto r = run("train --data " + q(d / "missing.ttsd") + " --out-dir " + q(d / "run") + " --theta1 1.0 --theta2 0.5");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("outside [10, 100]"), std::string::npos) << r.out;
    EXPECT_FALSE(fs::exists(d / "run" / "manifest.json"));

    r = run("train --data " + q(d / "missing.ttsd") + " --out-dir " + q(d / "run") + " --tss sideways");
    EXPECT_NE(r.code, 0);
    r = run("train --data " + q(d / "missing.ttsd") + " --out-dir " + q(d / "run"));
    EXPECT_EQ(r.code, 1) << r.out;
}

TEST(Cli, TrainEvalAttnRoundTrip) {
    const fs::path d = work_dir("pipeline");
    ASSERT_EQ(run(small_generate(d)).code, 0);
    const std::string train = "train --data " + q(d / "d.ttsd") + " --test-data " + q(d / "t.ttsd") +
                              " --epochs 2 --lr-steps 1 --hidden-dim 16 --tss rr --theta1 1.0 --theta2 0.1 --quiet";
    auto r = run(train + " --out-dir " + q(d / "run"));
    ASSERT_EQ(r.code, 0) << r.out;
    for (const char* f : {"manifest.json", "metrics.jsonl", "model.ttsn"}) EXPECT_TRUE(fs::exists(d / "run" / f)) << f;

    std::ifstream mf(d / "run" / "manifest.json");
    const auto manifest = nlohmann::json::parse(mf);
    EXPECT_EQ(manifest.at("version"), std::string(ttsn::kVersion));
    EXPECT_EQ(manifest.at("dataset").at("hash"), ttsn::io::hex64(ttsn::io::file_hash((d / "d.ttsd").string())));
    EXPECT_EQ(manifest.at("config").at("tss"), "rr");

    // Same manifest, same metrics; the checkpoint matches byte for byte.
    r = run("train --from-manifest " + q(d / "run" / "manifest.json") + " --out-dir " + q(d / "run2") + " --quiet");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(ttsn::io::file_hash((d / "run" / "metrics.jsonl").string()),
              ttsn::io::file_hash((d / "run2" / "metrics.jsonl").string()));
    EXPECT_EQ(ttsn::io::file_hash((d / "run" / "model.ttsn").string()),
              ttsn::io::file_hash((d / "run2" / "model.ttsn").string()));

    // Every metrics line parses; the first is the header.
    std::ifstream ml(d / "run" / "metrics.jsonl");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(ml, line)) {
        const auto j = nlohmann::json::parse(line);
        if (lines++ == 0) EXPECT_EQ(j.at("type"), "header");
        else EXPECT_FALSE(j.contains("wall_seconds"));
    }
    EXPECT_EQ(lines, 1u + 2u * (5u + 1u));

    r = run("eval --checkpoint " + q(d / "run" / "model.ttsn") + " --data " + q(d / "t.ttsd"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("top-1"), std::string::npos);
    EXPECT_NE(r.out.find("confusion"), std::string::npos);
    EXPECT_NE(r.out.find("partner confusions"), std::string::npos);
    EXPECT_NE(r.out.find("     3     "), std::string::npos); // 4x4 table header

    r = run("attn --checkpoint " + q(d / "run" / "model.ttsn") + " --data " + q(d / "t.ttsd") + " --clip 1 --out-dir " +
            q(d / "attn"));
    ASSERT_EQ(r.code, 0) << r.out;
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(d / "attn")) files += e.path().extension() == ".pgm";
    EXPECT_EQ(files, 4u);
    const auto img = ttsn::pgm::read_pgm((d / "attn" / "attn_b0_f0.pgm").string());
    EXPECT_EQ(*std::max_element(img.pixels.begin(), img.pixels.end()), 255);
    EXPECT_EQ(*std::min_element(img.pixels.begin(), img.pixels.end()), 0);
}

TEST(Cli, TssOffAndNoEttBaselines) {
    const fs::path d = work_dir("ablation");
    ASSERT_EQ(run(small_generate(d)).code, 0);
    const std::string base = "train --data " + q(d / "d.ttsd") + " --epochs 1 --hidden-dim 16 --lr-steps '' --quiet";
    auto r = run(base + " --tss off --out-dir " + q(d / "off"));
    ASSERT_EQ(r.code, 0) << r.out;
    r = run(base + " --tss off --no-ett --out-dir " + q(d / "baseline"));
    ASSERT_EQ(r.code, 0) << r.out;
    std::ifstream mf(d / "baseline" / "manifest.json");
    const auto manifest = nlohmann::json::parse(mf);
    EXPECT_FALSE(manifest.at("config").at("use_ett").get<bool>());
    EXPECT_EQ(manifest.at("config").at("tss"), "off");
}

TEST(Cli, EvalErrors) {
    const fs::path d = work_dir("evalerr");
    ASSERT_EQ(run(small_generate(d)).code, 0);
    auto r = run("eval --checkpoint " + q(d / "none.ttsn") + " --data " + q(d / "t.ttsd"));
    EXPECT_NE(r.code, 0);

    r = run("train --data " + q(d / "d.ttsd") + " --epochs 1 --hidden-dim 16 --lr-steps '' --quiet --out-dir " +
            q(d / "run"));
    ASSERT_EQ(r.code, 0) << r.out;
    std::ofstream(d / "run" / "model.ttsn", std::ios::trunc) << "JUNKJUNK";
    r = run("eval --checkpoint " + q(d / "run" / "model.ttsn") + " --data " + q(d / "t.ttsd"));
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.out.find("TTSN"), std::string::npos) << r.out;
}
