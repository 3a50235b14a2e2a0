#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace divreg {

// Number of worker threads to use when the caller passes 0: DIVREG_THREADS if set,
// otherwise the hardware concurrency.
inline int resolve_thread_count(int requested) {
    if (requested > 0) return requested;
    if (const char *env = std::getenv("DIVREG_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// Splits [0, n) into `chunks` fixed ranges and runs fn(begin, end, chunk) over them.
// The partition depends only on n and chunks, never on the thread count, so per-chunk
// partial results reduced in chunk order are bitwise reproducible.
template <class Fn>
void parallel_chunks(std::size_t n, std::size_t chunks, int threads, Fn &&fn) {
    chunks = std::max<std::size_t>(1, std::min(chunks, n == 0 ? 1 : n));
    auto range = [&](std::size_t c) {
        const std::size_t b = n * c / chunks;
        const std::size_t e = n * (c + 1) / chunks;
        fn(b, e, c);
    };
    threads = std::max(1, std::min<int>(threads, static_cast<int>(chunks)));
    if (threads == 1) {
        for (std::size_t c = 0; c < chunks; ++c) range(c);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t c = static_cast<std::size_t>(t); c < chunks; c += static_cast<std::size_t>(threads)) {
                try {
                    range(c);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto &th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace divreg
