// Copyright Contributors to the urbansplat project
// SPDX-License-Identifier: Apache-2.0

#include "urbansplat/parallel.hpp"

#include <algorithm>

namespace urbansplat {

namespace {
std::atomic<int> g_default_threads{0};
}

void set_default_threads(int n) { g_default_threads.store(std::max(0, n)); }

int default_threads()
{
    const int n = g_default_threads.load();
    if (n > 0) {
        return n;
    }
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

int resolve_threads(int requested) { return requested > 0 ? requested : default_threads(); }

} // namespace urbansplat
