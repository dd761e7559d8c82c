#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttsn/error.hpp"

namespace ttsn::io {

/// Little-endian encoder into an in-memory buffer.
class Writer {
public:
    void bytes(std::span<const char> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void magic(std::string_view m) { bytes({m.data(), m.size()}); }

    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }
    void f64s(std::span<const double> vs) {
        for (double v : vs) f64(v);
    }

    const std::vector<char>& buffer() const noexcept { return buf_; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + path + "' for writing");
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("write failed for '" + path + "'");
    }

private:
    template <typename U>
    void put_le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    std::vector<char> buf_;
};

/// Little-endian decoder over a loaded file; running past the end throws TruncatedFileError.
class Reader {
public:
    Reader(std::vector<char> data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

    static Reader load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open '" + path + "' for reading");
        std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return Reader(std::move(data), path);
    }

    /// Throws BadMagicError naming the expected tag when the first bytes differ.
    void expect_magic(std::string_view magic) {
        if (data_.size() < magic.size() || std::memcmp(data_.data(), magic.data(), magic.size()) != 0) {
            throw BadMagicError("'" + what_ + "': bad magic, expected \"" + std::string(magic) + "\"");
        }
        pos_ += magic.size();
    }

    void expect_version(std::uint32_t expected) {
        const auto v = u32();
        if (v != expected) {
            throw VersionMismatchError("'" + what_ + "': version " + std::to_string(v) + ", expected " +
                                       std::to_string(expected));
        }
    }

    std::uint32_t u32() { return get_le<std::uint32_t>(); }
    std::uint64_t u64() { return get_le<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

    std::string str(std::size_t n) {
        need(n);
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    void f64s(std::span<double> out) {
        need(out.size() * 8);
        for (auto& v : out) v = f64();
    }

    bool at_end() const noexcept { return pos_ == data_.size(); }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw TruncatedFileError("'" + what_ + "': truncated at byte " + std::to_string(pos_) + " (needed " +
                                     std::to_string(n) + " more)");
        }
    }

    template <typename U>
    U get_le() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }

    std::vector<char> data_;
    std::string what_;
    std::size_t pos_ = 0;
};

/// 64-bit FNV-1a, used for stable content and config hashes.
inline std::uint64_t fnv1a(std::span<const char> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a_str(std::string_view s) { return fnv1a(std::span<const char>(s.data(), s.size())); }

inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

inline std::uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for hashing");
    std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a(data);
}

} // namespace ttsn::io
