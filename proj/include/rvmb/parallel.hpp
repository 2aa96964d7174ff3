// SPDX-License-Identifier: Apache-2.0
/**
 * Deterministic work splitting.
 *
 * parallel_for carves [0, n) into fixed contiguous blocks, one per worker.
 * Reductions collect per-block partials and combine them in block order, so
 * the result is bit-identical for any worker count.
 */
#pragma once

#include <cstdint>
#include <thread>
#include <vector>

namespace rvmb {

struct run_options {
    int workers = 1;
    bool deterministic = true; // reductions are always block-ordered; recorded for the manifest
    std::uint64_t seed = 0;
};

inline int effective_workers(int requested) {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (requested < 1) return 1;
    return requested > static_cast<int>(hw) ? static_cast<int>(hw) : requested;
}

/// body(i) for i in [begin, end), split across `workers` threads.
template <class Body>
void parallel_for(std::int64_t begin, std::int64_t end, int workers, Body&& body) {
    std::int64_t n = end - begin;
    if (n <= 0) return;
    int w = effective_workers(workers);
    if (w == 1 || n == 1) {
        for (std::int64_t i = begin; i < end; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(w);
    std::int64_t chunk = (n + w - 1) / w;
    for (int t = 0; t < w; ++t) {
        std::int64_t lo = begin + t * chunk;
        std::int64_t hi = lo + chunk < end ? lo + chunk : end;
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::int64_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

/// Sum of body(i) over [0, n); per-block partials combined in block order.
template <class Body>
double parallel_sum(std::int64_t n, int workers, Body&& body) {
    int w = effective_workers(workers);
    if (n <= 0) return 0.0;
    if (w == 1) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i) acc += body(i);
        return acc;
    }
    std::int64_t chunk = (n + w - 1) / w;
    std::vector<double> partial(static_cast<std::size_t>(w), 0.0);
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t) {
        std::int64_t lo = t * chunk;
        std::int64_t hi = lo + chunk < n ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, t, &partial, &body] {
            double acc = 0.0;
            for (std::int64_t i = lo; i < hi; ++i) acc += body(i);
            partial[static_cast<std::size_t>(t)] = acc;
        });
    }
    for (auto& th : pool) th.join();
    double acc = 0.0;
    for (double v : partial) acc += v;
    return acc;
}

} // namespace rvmb
