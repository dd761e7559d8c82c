#pragma once

// Synthetic directed-motion clips. A bright square translates across the frame; "down" and
// "right" clips are exact frame reversals of paired "up" and "left" clips (before noise), so
// partner classes share every individual frame and differ only in temporal order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ttsn/binary_io.hpp"
#include "ttsn/rng.hpp"
#include "ttsn/tensor.hpp"

namespace ttsn::data {

enum class Direction { Up, Down, Left, Right };

struct MotionClass {
    std::uint32_t id;
    Direction direction;
    std::uint32_t partner;
};

inline const char* to_string(Direction d) {
    switch (d) {
    case Direction::Up: return "up";
    case Direction::Down: return "down";
    case Direction::Left: return "left";
    case Direction::Right: return "right";
    }
    return "?";
}

/// Class table for 2 (up/down) or 4 (up/down/left/right) classes.
inline std::vector<MotionClass> motion_classes(std::size_t count) {
    if (count == 2) return {{0, Direction::Up, 1}, {1, Direction::Down, 0}};
    if (count == 4) {
        return {{0, Direction::Up, 1}, {1, Direction::Down, 0}, {2, Direction::Left, 3}, {3, Direction::Right, 2}};
    }
    throw ConfigError("motion classes: count must be 2 or 4, got " + std::to_string(count));
}

inline std::uint32_t partner_of(std::uint32_t label, std::size_t num_classes) {
    const auto classes = motion_classes(num_classes);
    if (label >= classes.size()) throw IndexError("partner_of: label " + std::to_string(label) + " out of range");
    return classes[label].partner;
}

struct ClipRecord {
    Tensor frames; // [N, 3, H, W], values in [0, 1]
    std::uint32_t label = 0;
    std::uint64_t clip_id = 0;

    friend bool operator==(const ClipRecord&, const ClipRecord&) = default;
};

struct GenerateOptions {
    std::size_t classes = 4;
    std::size_t per_class = 100;
    std::size_t frames = 8;
    std::size_t height = 32;
    std::size_t width = 32;
    double noise_std = 0.05;
    std::uint64_t seed = 7;
    std::uint64_t first_clip_id = 0;
    Stream stream = Stream::Generate;

    void validate() const {
        if (frames < 4) {
            throw ConfigError("reversal-pair dataset requires N >= 4 frames, got " + std::to_string(frames));
        }
        if (height < 16 || width < 16) {
            throw ConfigError("clip size must be at least 16x16, got " + std::to_string(height) + "x" +
                              std::to_string(width));
        }
        if (per_class == 0) throw ConfigError("per-class clip count must be positive");
        if (noise_std < 0.0 || !std::isfinite(noise_std)) throw ConfigError("noise std must be finite and >= 0");
        motion_classes(classes);
    }
};

inline constexpr std::size_t kSquare = 4;
inline constexpr double kBackground = 0.1;
inline constexpr double kForeground = 0.9;
inline constexpr std::size_t kChannels = 3;

namespace detail {

// Noise-free clip moving toward smaller coordinates along one axis ("up" or "left").
// The square travels 3/4 of the free range; the start offset takes up the remaining quarter.
inline Tensor base_clip(bool vertical, const GenerateOptions& opt, Rng& rng) {
    const std::size_t n = opt.frames, h = opt.height, w = opt.width;
    const std::size_t along_extent = vertical ? h : w;
    const std::size_t across_extent = vertical ? w : h;
    const std::size_t free_along = along_extent - kSquare;
    const std::size_t travel = free_along * 3 / 4;
    const std::size_t start = travel + rng.index(free_along - travel + 1); // in [travel, free_along]
    const std::size_t across = rng.index(across_extent - kSquare + 1);

    Tensor t = Tensor::full({n, kChannels, h, w}, kBackground);
    for (std::size_t f = 0; f < n; ++f) {
        const double frac = static_cast<double>(f) / static_cast<double>(n - 1);
        const auto along = static_cast<std::size_t>(
            static_cast<double>(start) - std::round(frac * static_cast<double>(travel)));
        const std::size_t y0 = vertical ? along : across;
        const std::size_t x0 = vertical ? across : along;
        for (std::size_t c = 0; c < kChannels; ++c)
            for (std::size_t y = y0; y < y0 + kSquare; ++y)
                for (std::size_t x = x0; x < x0 + kSquare; ++x) t[((f * kChannels + c) * h + y) * w + x] = kForeground;
    }
    return t;
}

inline Tensor reverse_frames(const Tensor& clip) {
    const std::size_t n = clip.shape()[0];
    const std::size_t per = clip.numel() / n;
    Tensor out = clip;
    for (std::size_t f = 0; f < n; ++f)
        std::copy_n(clip.data().begin() + static_cast<std::ptrdiff_t>((n - 1 - f) * per), per,
                    out.data().begin() + static_cast<std::ptrdiff_t>(f * per));
    return out;
}

inline void add_noise(Tensor& clip, double stddev, Rng& rng) {
    if (stddev == 0.0) return;
    for (auto& v : clip.data()) v = std::clamp(v + rng.normal(0.0, stddev), 0.0, 1.0);
}

} // namespace detail

/// Clips ordered by pair: for each pair index i, (up_i, down_i[, left_i, right_i]).
/// Labels are balanced and clip ids consecutive from first_clip_id.
inline std::vector<ClipRecord> generate(const GenerateOptions& opt) {
    opt.validate();
    Rng rng(opt.seed, opt.stream);
    const auto classes = motion_classes(opt.classes);
    std::vector<ClipRecord> clips;
    clips.reserve(opt.classes * opt.per_class);
    std::uint64_t next_id = opt.first_clip_id;
    for (std::size_t i = 0; i < opt.per_class; ++i) {
        for (std::size_t pair = 0; pair < opt.classes / 2; ++pair) {
            const MotionClass& primary = classes[2 * pair];
            Tensor forward = detail::base_clip(primary.direction == Direction::Up, opt, rng);
            Tensor backward = detail::reverse_frames(forward);
            detail::add_noise(forward, opt.noise_std, rng);
            detail::add_noise(backward, opt.noise_std, rng);
            clips.push_back({std::move(forward), primary.id, next_id++});
            clips.push_back({std::move(backward), primary.partner, next_id++});
        }
    }
    return clips;
}

struct Split {
    std::vector<ClipRecord> train;
    std::vector<ClipRecord> test;
};

/// Train and test sets from independent generator streams; test clip ids follow train ids.
inline Split generate_split(GenerateOptions opt, std::size_t train_per_class, std::size_t test_per_class) {
    Split s;
    opt.per_class = train_per_class;
    opt.stream = Stream::Generate;
    s.train = generate(opt);
    opt.per_class = test_per_class;
    opt.stream = Stream::GenerateTest;
    opt.first_clip_id += s.train.size();
    s.test = generate(opt);
    return s;
}

// ---------------------------------------------------------------------------
// Clip container: "TTSD", u32 version, u32 count, then per clip
// u64 id, u32 label, u32 N, C, H, W, N*C*H*W little-endian f64.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kClipMagic = "TTSD";
inline constexpr std::uint32_t kClipVersion = 1;

inline std::vector<char> encode_clips(std::span<const ClipRecord> clips) {
    io::Writer w;
    w.magic(kClipMagic);
    w.u32(kClipVersion);
    w.u32(static_cast<std::uint32_t>(clips.size()));
    for (const auto& c : clips) {
        if (c.frames.rank() != 4) throw DimensionError("clip frames must be rank 4 [N,C,H,W]");
        w.u64(c.clip_id);
        w.u32(c.label);
        for (auto d : c.frames.shape()) w.u32(static_cast<std::uint32_t>(d));
        w.f64s(c.frames.data());
    }
    return w.buffer();
}

inline void write_clips(const std::string& path, std::span<const ClipRecord> clips) {
    io::Writer w;
    w.bytes(encode_clips(clips));
    w.save(path);
}

inline std::vector<ClipRecord> decode_clips(io::Reader& r) {
    r.expect_magic(kClipMagic);
    r.expect_version(kClipVersion);
    const std::uint32_t count = r.u32();
    std::vector<ClipRecord> clips;
    clips.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ClipRecord c;
        c.clip_id = r.u64();
        c.label = r.u32();
        Shape shape(4);
        for (auto& d : shape) {
            d = r.u32();
            if (d == 0) throw FormatError("clip " + std::to_string(i) + " has a zero-length axis");
        }
        std::vector<double> values(shape_numel(shape));
        r.f64s(values);
        c.frames = Tensor(std::move(shape), std::move(values));
        clips.push_back(std::move(c));
    }
    if (!r.at_end()) throw FormatError("clip container has " + std::to_string(r.remaining()) + " trailing bytes");
    return clips;
}

inline std::vector<ClipRecord> read_clips(const std::string& path) {
    auto r = io::Reader::load(path);
    return decode_clips(r);
}

} // namespace ttsn::data
