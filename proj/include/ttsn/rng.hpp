#pragma once

#include <cstdint>
#include <random>

#include "ttsn/tensor.hpp"

namespace ttsn {

/// Named substreams derived from one run seed. Each consumer owns its own engine so that
/// enabling or disabling one component never shifts another component's draws.
enum class Stream : std::uint32_t {
    Init = 1,
    Shuffle = 2,
    TssBatch = 3,
    TssChannel = 4,
    Generate = 5,
    GenerateTest = 6,
};

class Rng {
public:
    explicit Rng(std::uint64_t seed, Stream stream = Stream::Init) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), 0x7453u};
        engine_.seed(seq);
    }

    std::mt19937_64& engine() noexcept { return engine_; }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    bool coin() { return std::bernoulli_distribution(0.5)(engine_); }

    Tensor normal_tensor(const Shape& shape, double stddev) {
        Tensor t = Tensor::zeros(shape);
        for (auto& v : t.data()) v = normal(0.0, stddev);
        return t;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace ttsn
