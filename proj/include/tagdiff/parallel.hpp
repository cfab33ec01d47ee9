#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tagdiff {

/// Run fn(i) for i in [0, n) on up to `workers` threads. Work items are claimed from a
/// shared counter; results must be written to per-index slots by fn. The first
/// exception thrown by any item is rethrown on the caller's thread.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn)
{
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(n);
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t k = workers < n ? workers : n;
    pool.reserve(k);
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

/// Worker count to use when the caller passes 0.
inline std::size_t default_workers()
{
    const unsigned h = std::thread::hardware_concurrency();
    return h == 0 ? 1 : h;
}

} // namespace tagdiff
