#pragma once

#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace plt {

// Worker cap: PLT_THREADS environment variable; 0 or unset means auto.
inline int max_threads() {
    static const int cached = [] {
        int n = 0;
        if (const char* env = std::getenv("PLT_THREADS")) n = std::atoi(env);
        if (n <= 0) n = int(std::thread::hardware_concurrency());
        return n > 0 ? n : 1;
    }();
    return cached;
}

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks, one per
// worker. Caller guarantees fn(i) touches only per-i state, so results are
// identical for any worker count.
template <class F>
void parallel_for(int64_t n, F&& fn) {
    const int nw = int(std::min<int64_t>(max_threads(), n));
    if (nw <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(nw - 1);
    const int64_t chunk = (n + nw - 1) / nw;
    auto run = [&fn](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) fn(i);
    };
    for (int w = 1; w < nw; ++w) {
        const int64_t lo = std::min<int64_t>(w * chunk, n);
        const int64_t hi = std::min<int64_t>(lo + chunk, n);
        workers.emplace_back(run, lo, hi);
    }
    run(0, std::min<int64_t>(chunk, n));
    for (auto& t : workers) t.join();
}

}  // namespace plt
