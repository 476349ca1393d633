#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace bohmflow {

// Worker cap: --threads flag > BOHMFLOW_THREADS env > hardware concurrency.
inline int default_threads() {
    if (const char* env = std::getenv("BOHMFLOW_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

// Runs fn(chunk_index, begin, end) over fixed-size chunks of [0, n).
// Chunk boundaries depend only on n and chunk_size, never on the thread
// count, so per-chunk partial results can be reduced in chunk order to give
// results that are bitwise independent of the number of workers.
inline void parallel_chunks(int n, int chunk_size, int threads,
                            const std::function<void(int, int, int)>& fn) {
    if (n <= 0) return;
    const int nchunks = (n + chunk_size - 1) / chunk_size;
    threads = std::max(1, std::min(threads, nchunks));
    if (threads == 1) {
        for (int c = 0; c < nchunks; ++c)
            fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            try {
                for (;;) {
                    const int c = next.fetch_add(1);
                    if (c >= nchunks) break;
                    fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

inline int num_chunks(int n, int chunk_size) { return n <= 0 ? 0 : (n + chunk_size - 1) / chunk_size; }

}  // namespace bohmflow
