#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "ttsn/ttsn.hpp"

using namespace ttsn;
using namespace ttsn::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "ttsn_test_data";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const fs::path& p, const std::vector<char>& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

std::vector<double> frame_means(const Tensor& clip) {
    const std::size_t n = clip.shape()[0], per = clip.numel() / n;
    std::vector<double> out(n, 0.0);
    for (std::size_t f = 0; f < n; ++f) {
        for (std::size_t i = 0; i < per; ++i) out[f] += clip[f * per + i];
        out[f] /= double(per);
    }
    return out;
}

GenerateOptions small(std::size_t per_class = 5) {
    GenerateOptions o;
    o.per_class = per_class;
    o.frames = 4;
    o.height = 16;
    o.width = 16;
    return o;
}

} // namespace

TEST(MotionClasses, PartnersAreSymmetric) {
    for (std::size_t n : {2u, 4u}) {
        for (const auto& c : motion_classes(n)) {
            EXPECT_EQ(partner_of(partner_of(c.id, n), n), c.id);
            EXPECT_NE(c.partner, c.id);
        }
    }
    EXPECT_EQ(partner_of(0, 4), 1u);
    EXPECT_EQ(partner_of(2, 4), 3u);
    EXPECT_THROW(motion_classes(3), ConfigError);
    EXPECT_THROW(partner_of(4, 4), IndexError);
}

TEST(Generate, CountsBalanceAndUniqueIds) {
    GenerateOptions o;
    o.per_class = 50;
    const auto clips = generate(o);
    ASSERT_EQ(clips.size(), 200u);
    std::map<std::uint32_t, int> counts;
    std::set<std::uint64_t> ids;
    for (const auto& c : clips) {
        ++counts[c.label];
        ids.insert(c.clip_id);
        EXPECT_EQ(c.frames.shape(), (Shape{8, 3, 32, 32}));
        for (double v : c.frames.data()) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
        }
    }
    for (std::uint32_t k = 0; k < 4; ++k) EXPECT_EQ(counts[k], 50);
    EXPECT_EQ(ids.size(), 200u);
}

TEST(Generate, NoiseFreePartnersAreExactReversals) {
    GenerateOptions o;
    o.per_class = 10;
    o.noise_std = 0.0;
    const auto clips = generate(o);
    for (std::size_t i = 0; i + 1 < clips.size(); i += 2) {
        const auto& fwd = clips[i];
        const auto& bwd = clips[i + 1];
        ASSERT_EQ(bwd.label, partner_of(fwd.label, 4));
        EXPECT_EQ(reverse_axis(Node(fwd.frames), 0).value(), bwd.frames);
    }
}

TEST(Generate, PartnerPerFrameMeansMatch) {
    // The per-frame mean intensity profile over the pair is identical; a single frame cannot separate them.
    GenerateOptions o;
    o.per_class = 10;
    o.noise_std = 0.0;
    const auto clips = generate(o);
    for (std::size_t i = 0; i + 1 < clips.size(); i += 2) {
        auto a = frame_means(clips[i].frames);
        auto b = frame_means(clips[i + 1].frames);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        for (std::size_t f = 0; f < a.size(); ++f) EXPECT_NEAR(a[f], b[f], 1e-12);
    }
    // Position by position as well: the square never leaves the frame, so every frame has the same mean.
    for (std::size_t i = 0; i + 1 < clips.size(); i += 2) {
        const auto a = frame_means(clips[i].frames), b = frame_means(clips[i + 1].frames);
        for (std::size_t f = 0; f < a.size(); ++f) EXPECT_NEAR(a[f], b[f], 1e-12);
    }
}

TEST(Generate, FrameShuffleDestroysPartnerSeparability) {
    // Negative control: for noise-free pairs, any frame-order-invariant statistic (the temporal mean
    // image, the sorted multiset of frames) is identical for the two partners, so no such classifier
    // can beat chance on a pair. Shuffling frames leaves these statistics unchanged as well.
    GenerateOptions o;
    o.per_class = 5;
    o.noise_std = 0.0;
    const auto clips = generate(o);
    Rng rng(3);
    for (std::size_t i = 0; i + 1 < clips.size(); i += 2) {
        const Tensor ma = mean_axis(Node(clips[i].frames), 0).value();
        const Tensor mb = mean_axis(Node(clips[i + 1].frames), 0).value();
        for (std::size_t k = 0; k < ma.numel(); ++k) EXPECT_NEAR(ma[k], mb[k], 1e-12);

        std::vector<std::size_t> perm(8);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        const Tensor shuffled = index_select(Node(clips[i].frames), 0, perm).value();
        const Tensor ms = mean_axis(Node(shuffled), 0).value();
        for (std::size_t k = 0; k < ma.numel(); ++k) EXPECT_NEAR(ms[k], ma[k], 1e-12);
    }
}

TEST(Generate, DeterministicPerSeed) {
    EXPECT_EQ(generate(small()), generate(small()));
    auto other = small();
    other.seed = 8;
    EXPECT_NE(generate(small()), generate(other));
}

TEST(Generate, SplitUsesIndependentStreamsAndDisjointIds) {
    const Split s = generate_split(small(), 6, 3);
    EXPECT_EQ(s.train.size(), 24u);
    EXPECT_EQ(s.test.size(), 12u);
    EXPECT_EQ(s.test.front().clip_id, 24u);
    EXPECT_NE(s.train.front().frames, s.test.front().frames);
}

TEST(Generate, Validation) {
    auto o = small();
    o.frames = 1;
    try {
        generate(o);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("N >= 4"), std::string::npos);
    }
    o = small();
    o.height = 15;
    EXPECT_THROW(generate(o), ConfigError);
    o = small();
    o.classes = 3;
    EXPECT_THROW(generate(o), ConfigError);
    o = small();
    o.noise_std = -1.0;
    EXPECT_THROW(generate(o), ConfigError);
}

TEST(ClipFile, RoundTripIsBitExact) {
    const auto clips = generate(small());
    const fs::path p = temp_file("round.ttsd");
    write_clips(p.string(), clips);
    const auto back = read_clips(p.string());
    ASSERT_EQ(back.size(), clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) {
        EXPECT_EQ(back[i].clip_id, clips[i].clip_id);
        EXPECT_EQ(back[i].label, clips[i].label);
        EXPECT_EQ(std::memcmp(back[i].frames.data().data(), clips[i].frames.data().data(),
                              clips[i].frames.numel() * sizeof(double)),
                  0);
    }
    // Re-encoding the decoded records reproduces the file byte for byte.
    EXPECT_EQ(encode_clips(back), slurp(p));
}

TEST(ClipFile, HeaderLayout) {
    const auto bytes = encode_clips(generate(small(1)));
    ASSERT_GE(bytes.size(), 12u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TTSD");
    EXPECT_EQ(bytes[4], 1);  // version, little-endian
    EXPECT_EQ(bytes[8], 4);  // count
    EXPECT_EQ(bytes.size(), 12u + 4u * (8 + 4 + 16 + 4 * 3 * 16 * 16 * 8));
}

TEST(ClipFile, EmptyList) {
    const fs::path p = temp_file("empty.ttsd");
    write_clips(p.string(), {});
    EXPECT_EQ(fs::file_size(p), 12u);
    EXPECT_TRUE(read_clips(p.string()).empty());
}

TEST(ClipFile, CorruptionErrorsAreDistinct) {
    const auto good = encode_clips(generate(small(1)));
    const fs::path p = temp_file("bad.ttsd");

    auto bad_magic = good;
    bad_magic[0] = 'X';
    dump(p, bad_magic);
    try {
        read_clips(p.string());
        FAIL() << "expected BadMagicError";
    } catch (const BadMagicError& e) {
        EXPECT_NE(std::string(e.what()).find("TTSD"), std::string::npos);
    }

    auto bad_version = good;
    bad_version[4] = 9;
    dump(p, bad_version);
    EXPECT_THROW(read_clips(p.string()), VersionMismatchError);

    dump(p, std::vector<char>(good.begin(), good.end() - 5));
    EXPECT_THROW(read_clips(p.string()), TruncatedFileError);

    auto trailing = good;
    trailing.push_back(0);
    dump(p, trailing);
    EXPECT_THROW(read_clips(p.string()), FormatError);

    EXPECT_THROW(read_clips((fs::temp_directory_path() / "ttsn_no_such_file.ttsd").string()), IoError);
}
