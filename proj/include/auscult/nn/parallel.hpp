#pragma once

// Deterministic fan-out over independent work chunks. Each chunk runs on
// its own tape / private buffers (no shared mutable state), and callers
// combine per-chunk results afterwards in chunk-index order, so the final
// numbers never depend on how many threads actually executed.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace auscult::nn {

// Largest worker count that run_chunks will use; 0 means "ask the OS".
inline unsigned resolved_thread_count(unsigned max_threads) {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (max_threads == 0 || max_threads > hw) return hw;
    return max_threads;
}

// Runs fn(chunk_index) for every chunk in [0, n_chunks). Work is pulled
// from an atomic counter, so scheduling varies, but chunks must be
// independent and the caller must merge outputs in index order. The first
// exception thrown by any chunk is rethrown after all workers join.
inline void run_chunks(std::int64_t n_chunks,
                       const std::function<void(std::int64_t)>& fn,
                       unsigned max_threads = 0) {
    if (n_chunks <= 0) return;
    const unsigned workers = std::min<std::int64_t>(
        resolved_thread_count(max_threads), n_chunks);
    if (workers <= 1) {
        for (std::int64_t c = 0; c < n_chunks; ++c) fn(c);
        return;
    }

    std::atomic<std::int64_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mu;

    auto worker = [&]() {
        while (!failed.load(std::memory_order_relaxed)) {
            const std::int64_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            try {
                fn(c);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                failed.store(true, std::memory_order_relaxed);
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Balanced contiguous split of [0, n) into n_chunks spans; span c is
// [chunk_begin(c), chunk_begin(c+1)). Pure function of (n, n_chunks).
inline std::int64_t chunk_begin(std::int64_t n, std::int64_t n_chunks,
                                std::int64_t c) {
    const std::int64_t q = n / n_chunks, r = n % n_chunks;
    return c * q + std::min<std::int64_t>(c, r);
}

}  // namespace auscult::nn
