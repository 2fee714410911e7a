#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tdm {

// Static-partition parallel loop. Each index is processed exactly once and
// workers only write to per-index slots, so results do not depend on thread
// count or scheduling.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body,
                         int n_threads = 0) {
    if (n <= 0) return;
    if (n_threads <= 0) n_threads = static_cast<int>(std::thread::hardware_concurrency());
    n_threads = static_cast<int>(std::max<std::int64_t>(1, std::min<std::int64_t>(n_threads, n)));
    if (n_threads == 1) {
        for (std::int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex err_mu;
    const std::int64_t chunk = (n + n_threads - 1) / n_threads;
    for (int w = 0; w < n_threads; ++w) {
        const std::int64_t lo = w * chunk;
        const std::int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::int64_t i = lo; i < hi; ++i) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Process-wide default used by the library when callers do not specify.
int default_threads();
void set_default_threads(int n);

} // namespace tdm
