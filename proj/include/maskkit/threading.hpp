/*
 Copyright 2026 maskkit contributors
 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      http://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace maskkit {

namespace detail {

inline int& thread_override() {
    static int v = 0;
    return v;
}

} // namespace detail

/// Worker count: MASKKIT_THREADS if set (>= 1), else hardware concurrency.
inline int thread_count() {
    if (detail::thread_override() > 0) return detail::thread_override();
    static const int n = [] {
        if (const char* env = std::getenv("MASKKIT_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc ? static_cast<int>(hc) : 1;
    }();
    return n;
}

/// Pins the worker count for the lifetime of the guard.
class ScopedThreadOverride {
  public:
    explicit ScopedThreadOverride(int n) : prev_(detail::thread_override()) {
        detail::thread_override() = n;
    }
    ~ScopedThreadOverride() { detail::thread_override() = prev_; }
    ScopedThreadOverride(const ScopedThreadOverride&) = delete;
    ScopedThreadOverride& operator=(const ScopedThreadOverride&) = delete;

  private:
    int prev_;
};

/// Runs fn(begin, end) over a fixed block partition of [0, n). The partition
/// depends only on n and the worker count, so any writes to disjoint outputs
/// land identically regardless of scheduling.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
    const int workers = static_cast<int>(std::min<std::int64_t>(thread_count(), n));
    if (workers <= 1) {
        if (n > 0) fn(std::int64_t{0}, n);
        return;
    }
    const std::int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) {
        const std::int64_t b = t * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& th : pool) th.join();
}

} // namespace maskkit
