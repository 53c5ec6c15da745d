// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace urbansplat {

/// Process-wide default worker count; 0 means hardware concurrency.
void set_default_threads(int n);
int default_threads();

/// Resolves a requested thread count (0 -> default) to at least 1.
int resolve_threads(int requested);

/// Runs fn(i) for i in [0, n) on `threads` workers with dynamic scheduling.
/// Callers must make iterations write disjoint state; results are then
/// independent of the thread count.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn)
{
    const int workers = static_cast<int>(std::min<std::size_t>(
        static_cast<std::size_t>(resolve_threads(threads)), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        try {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                fn(i);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!error) {
                error = std::current_exception();
            }
            next.store(n);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    for (int w = 1; w < workers; ++w) {
        pool.emplace_back(body);
    }
    body();
    for (std::thread& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

} // namespace urbansplat
