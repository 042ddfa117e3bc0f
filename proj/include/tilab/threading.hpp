#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace tilab {

// Worker count: TI_LAB_THREADS if set and positive, else hardware concurrency.
inline unsigned thread_count() {
    if (const char* env = std::getenv("TI_LAB_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// Runs body(i) for i in [0, n). Each index owns its output slot, so results
// are identical for any thread count; only wall time changes.
template <typename F>
void parallel_for(size_t n, F&& body) {
    unsigned workers = thread_count();
    if (workers <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) body(i);
        return;
    }
    if (workers > n) workers = static_cast<unsigned>(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (size_t i = w; i < n; i += workers) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

// Deterministic sum reduction: per-index partials are accumulated in index
// order after the parallel phase, so floating-point results do not depend on
// the thread count.
template <typename F>
double parallel_sum(size_t n, F&& term) {
    std::vector<double> partial(n);
    parallel_for(n, [&](size_t i) { partial[i] = term(i); });
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += partial[i];
    return s;
}

}  // namespace tilab
