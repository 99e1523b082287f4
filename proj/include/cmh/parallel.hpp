// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cmh {

inline unsigned default_workers() {
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) on at most `workers` threads. The first
// exception stops handing out new indices and is rethrown on the caller.
template <class Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
    if (n == 0) return;
    workers = std::clamp<unsigned>(workers, 1u, static_cast<unsigned>(std::min<std::size_t>(n, 1024)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mu;
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    if (failed.load()) return;
                    std::size_t i = next.fetch_add(1);
                    if (i >= n) return;
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(error_mu);
                        if (!error) error = std::current_exception();
                        failed.store(true);
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

} // namespace cmh
