#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ttsn/ttsn.hpp"

using namespace ttsn;
using namespace ttsn::pgm;
namespace fs = std::filesystem;

namespace {

fs::path out_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "ttsn_test_pgm" / name;
    fs::remove_all(d);
    return d;
}

} // namespace

TEST(Pgm, WriteReadRoundTrip) {
    const fs::path d = out_dir("rt");
    fs::create_directories(d);
    GrayImage img{3, 2, {0, 10, 20, 30, 40, 255}};
    write_pgm((d / "a.pgm").string(), img);
    const GrayImage back = read_pgm((d / "a.pgm").string());
    EXPECT_EQ(back.width, 3u);
    EXPECT_EQ(back.height, 2u);
    EXPECT_EQ(back.pixels, img.pixels);
    EXPECT_EQ(fs::file_size(d / "a.pgm"), std::string("P5\n3 2\n255\n").size() + 6);

    std::ofstream(d / "bad.pgm") << "P2\n1 1\n255\n0";
    EXPECT_THROW(read_pgm((d / "bad.pgm").string()), FormatError);
}

TEST(Pgm, MinMaxNormalisation) {
    EXPECT_EQ(normalize_min_max(std::vector<double>{-1.0, 0.0, 1.0}), (std::vector<std::uint8_t>{0, 128, 255}));
    EXPECT_EQ(normalize_min_max(std::vector<double>{2.0, 2.0}), (std::vector<std::uint8_t>{0, 0}));
    EXPECT_TRUE(normalize_min_max(std::vector<double>{}).empty());
}

TEST(Pgm, ResizeNearest) {
    const std::vector<double> src{1, 2, 3, 4};
    EXPECT_EQ(resize_nearest(src, 2, 2, 4, 4),
              (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Pgm, ExportAttentionFilesSpanFullRange) {
    Rng rng(1);
    const Tensor att = rng.normal_tensor({2, 8, 3, 4, 4}, 1.0);
    const fs::path d = out_dir("export");
    const auto paths = export_attention(att, d.string());
    ASSERT_EQ(paths.size(), 16u);
    EXPECT_TRUE(fs::exists(d / "attn_b1_f7.pgm"));
    for (const auto& p : paths) {
        const GrayImage img = read_pgm(p);
        EXPECT_EQ(img.width, 4u);
        const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
        EXPECT_EQ(*lo, 0);
        EXPECT_EQ(*hi, 255);
    }
}

TEST(Pgm, BlendOverInputFrames) {
    Tensor att = Tensor::zeros({1, 2, 1, 2, 2});
    att[1] = 1.0; // frame 0: one hot pixel at (0, 1)
    att[4 + 3] = 1.0;
    const Tensor frames = Tensor::full({1, 2, 3, 4, 4}, 0.2);
    const fs::path d = out_dir("blend");
    const auto paths = export_attention(att, d.string(), &frames);
    ASSERT_EQ(paths.size(), 2u);
    const GrayImage img = read_pgm(paths[0]);
    EXPECT_EQ(img.width, 4u);
    EXPECT_EQ(img.height, 4u);
    const auto grey = std::uint8_t(std::lround(0.5 * 0.2 * 255.0));
    const auto hot = std::uint8_t(std::lround(0.5 * 255.0 + 0.5 * 0.2 * 255.0));
    EXPECT_EQ(img.pixels[0], grey);
    EXPECT_EQ(img.pixels[2], hot); // upsampled (0, 1) covers columns 2-3 of rows 0-1
    EXPECT_EQ(img.pixels[7], hot);
    EXPECT_EQ(img.pixels[15], grey);

    const Tensor wrong = Tensor::zeros({2, 2, 3, 4, 4});
    EXPECT_THROW(export_attention(att, d.string(), &wrong), DimensionError);
    EXPECT_THROW(export_attention(Tensor::zeros({2, 2}), d.string()), DimensionError);
}
