#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ttsn/error.hpp"
#include "ttsn/tensor.hpp"

namespace ttsn::pgm {

struct GrayImage {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> pixels; // row-major
};

/// Binary (P5) 8-bit PGM.
inline void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

inline GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string magic;
    int maxval = 0;
    GrayImage img;
    in >> magic >> img.width >> img.height >> maxval;
    if (magic != "P5" || maxval != 255) throw FormatError("'" + path + "' is not an 8-bit P5 PGM");
    in.get();
    img.pixels.resize(img.width * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw TruncatedFileError("'" + path + "' truncated");
    return img;
}

/// Linear map of [min, max] onto [0, 255]; a constant input maps to 0.
inline std::vector<std::uint8_t> normalize_min_max(std::span<const double> values) {
    std::vector<std::uint8_t> out(values.size(), 0);
    if (values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = *hi - *lo;
    if (range <= 0.0) return out;
    for (std::size_t i = 0; i < values.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::lround((values[i] - *lo) / range * 255.0));
    return out;
}

/// Mean over the channel axis of a [C, H, W] slice starting at `offset` in `data`.
inline std::vector<double> channel_mean(std::span<const double> data, std::size_t offset, std::size_t c,
                                        std::size_t h, std::size_t w) {
    std::vector<double> out(h * w, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h * w; ++i) out[i] += data[offset + ch * h * w + i];
    for (auto& v : out) v /= static_cast<double>(c);
    return out;
}

/// Nearest-neighbour resize.
inline std::vector<double> resize_nearest(std::span<const double> src, std::size_t sh, std::size_t sw,
                                          std::size_t dh, std::size_t dw) {
    std::vector<double> out(dh * dw);
    for (std::size_t y = 0; y < dh; ++y)
        for (std::size_t x = 0; x < dw; ++x) out[y * dw + x] = src[(y * sh / dh) * sw + (x * sw / dw)];
    return out;
}

inline std::string attention_filename(std::size_t b, std::size_t f) {
    return "attn_b" + std::to_string(b) + "_f" + std::to_string(f) + ".pgm";
}

/// Writes one PGM per (clip, frame) of an attention map [B, N, C, H, W]. Each frame is
/// channel-averaged and min-max normalised on its own. With `frames` ([B, N, C', H', W'] input
/// clips) the map is upsampled to the input resolution and blended 50/50 over the grey frame.
inline std::vector<std::string> export_attention(const Tensor& attention, const std::string& out_dir,
                                                 const Tensor* frames = nullptr) {
    const auto& s = attention.shape();
    if (s.size() != 5) throw DimensionError("export_attention: expected [B,N,C,H,W], got " + shape_str(s));
    if (frames && (frames->rank() != 5 || frames->shape()[0] != s[0] || frames->shape()[1] != s[1])) {
        throw DimensionError("export_attention: frames " + shape_str(frames->shape()) + " do not match attention " +
                             shape_str(s));
    }
    std::filesystem::create_directories(out_dir);
    const std::size_t b_count = s[0], n = s[1], c = s[2], h = s[3], w = s[4];
    std::vector<std::string> paths;
    for (std::size_t b = 0; b < b_count; ++b)
        for (std::size_t f = 0; f < n; ++f) {
            const auto att = channel_mean(attention.data(), ((b * n + f) * c) * h * w, c, h, w);
            GrayImage img;
            if (frames) {
                const auto& fs = frames->shape();
                const std::size_t fc = fs[2], fh = fs[3], fw = fs[4];
                const auto up = normalize_min_max(resize_nearest(att, h, w, fh, fw));
                const auto grey = channel_mean(frames->data(), ((b * n + f) * fc) * fh * fw, fc, fh, fw);
                img.width = fw;
                img.height = fh;
                img.pixels.resize(fh * fw);
                for (std::size_t i = 0; i < fh * fw; ++i) {
                    const double g = std::clamp(grey[i], 0.0, 1.0) * 255.0;
                    img.pixels[i] = static_cast<std::uint8_t>(std::lround(0.5 * up[i] + 0.5 * g));
                }
            } else {
                img.width = w;
                img.height = h;
                img.pixels = normalize_min_max(att);
            }
            const auto path = (std::filesystem::path(out_dir) / attention_filename(b, f)).string();
            write_pgm(path, img);
            paths.push_back(path);
        }
    return paths;
}

} // namespace ttsn::pgm
