#pragma once

// Deterministic seed splitting and a fixed-partition parallel loop. Results
// are written by index, so any reduction done afterwards in index order is
// independent of the thread count.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

namespace wlab {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for stream `index` of a run seeded with `seed` (counter-based split).
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t index = 0) {
    return Rng(stream_seed(seed, index));
}

/// Global cap on worker threads. LAB_THREADS overrides the value set by the CLI.
inline unsigned& thread_cap() {
    static unsigned cap = [] {
        if (const char* env = std::getenv("LAB_THREADS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v > 0) return static_cast<unsigned>(v);
        }
        return std::max(1u, std::thread::hardware_concurrency());
    }();
    return cap;
}

inline void set_thread_cap(unsigned n) {
    if (std::getenv("LAB_THREADS") == nullptr) thread_cap() = std::max(1u, n);
}

namespace detail {
inline bool& in_worker() {
    thread_local bool flag = false;
    return flag;
}
}  // namespace detail

/// Runs fn(i) for i in [0, n). Exceptions are rethrown (lowest index first).
/// Nested calls run serially on the calling worker.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const unsigned workers =
        detail::in_worker() ? 1u : static_cast<unsigned>(std::min<std::size_t>(thread_cap(), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            detail::in_worker() = true;
            for (std::size_t i = w; i < n; i += workers) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace wlab
