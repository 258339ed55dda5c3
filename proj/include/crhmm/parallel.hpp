#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace crhmm {

/// Resolves the worker count: explicit request, then the CRHMM_WORKERS
/// environment variable, then hardware concurrency. Always at least 1.
inline int resolve_worker_count(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("CRHMM_WORKERS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

namespace detail {

// Pairwise tree reduction over per-chunk partials. The tree shape depends
// only on the chunk count, so the result is bit-identical for any worker
// count and any chunk completion order.
inline double pairwise_sum(std::vector<double>& v) {
    std::size_t n = v.size();
    if (n == 0) return 0.0;
    while (n > 1) {
        std::size_t half = (n + 1) / 2;
        for (std::size_t i = 0; i < n / 2; ++i) v[i] = v[2 * i] + v[2 * i + 1];
        if (n % 2 == 1) v[n / 2] = v[n - 1];
        n = half;
    }
    return v[0];
}

} // namespace detail

inline constexpr std::size_t kReductionChunk = 256;

/// Sums fn(i) for i in [0, n). Work is split into fixed-size chunks; each
/// chunk is summed left to right and the chunk partials are combined with a
/// pairwise tree, so the floating point result does not depend on the number
/// of workers.
template <typename Fn>
double parallel_chunked_sum(std::size_t n, int workers, Fn&& fn) {
    if (n == 0) return 0.0;
    const std::size_t chunks = (n + kReductionChunk - 1) / kReductionChunk;
    std::vector<double> partial(chunks, 0.0);
    workers = resolve_worker_count(workers);
    auto run_chunk = [&](std::size_t c) {
        const std::size_t lo = c * kReductionChunk;
        const std::size_t hi = std::min(n, lo + kReductionChunk);
        double acc = 0.0;
        for (std::size_t i = lo; i < hi; ++i) acc += fn(i);
        partial[c] = acc;
    };
    if (workers <= 1 || chunks == 1) {
        for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                std::size_t c = next.fetch_add(1);
                if (c >= chunks) return;
                run_chunk(c);
            }
        };
        std::vector<std::thread> pool;
        int spawn = std::min<std::size_t>(workers, chunks) - 1;
        pool.reserve(spawn);
        for (int w = 0; w < spawn; ++w) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
    }
    return detail::pairwise_sum(partial);
}

/// Runs fn(i) for i in [0, n) across the pool with no return value.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    workers = resolve_worker_count(workers);
    if (n == 0) return;
    if (workers <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    int spawn = std::min<std::size_t>(workers, n) - 1;
    pool.reserve(spawn);
    for (int w = 0; w < spawn; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
}

} // namespace crhmm
