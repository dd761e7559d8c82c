#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace ttsn {

/// Kernel thread cap from TTSN_THREADS (default 1). Read once per process.
inline std::size_t kernel_threads() {
    static const std::size_t n = [] {
        const char* env = std::getenv("TTSN_THREADS");
        if (!env) return std::size_t{1};
        try {
            long v = std::stol(env);
            return v > 0 ? static_cast<std::size_t>(v) : std::size_t{1};
        } catch (...) {
            return std::size_t{1};
        }
    }();
    return n;
}

/// Runs fn(i) for i in [0, n). Each index must write disjoint outputs, so results do not
/// depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t threads = std::min(kernel_threads(), n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
}

} // namespace ttsn
