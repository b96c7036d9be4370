// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace fmx {

// Worker cap: FMX_THREADS if set, otherwise available parallelism.
inline int worker_count() {
    if (const char* env = std::getenv("FMX_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

// Runs f(i) for i in [0, n). Each index writes only its own output slots, so
// results are identical for any worker count; callers reduce afterwards in
// index order.
template <typename F>
void parallel_for(size_t n, F&& f) {
    const size_t workers = std::min<size_t>(worker_count(), n);
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        const size_t lo = n * w / workers, hi = n * (w + 1) / workers;
        pool.emplace_back([lo, hi, &f] {
            for (size_t i = lo; i < hi; ++i) f(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace fmx
