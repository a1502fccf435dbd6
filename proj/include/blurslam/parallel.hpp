#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace blurslam {

/// Global worker-thread budget. 0 means "use hardware concurrency".
inline int& thread_count_ref() {
    static int n = 1;
    return n;
}

inline void set_thread_count(int n) { thread_count_ref() = std::max(0, n); }

inline int effective_thread_count() {
    int n = thread_count_ref();
    if (n == 0) n = static_cast<int>(std::thread::hardware_concurrency());
    return std::max(1, n);
}

/// Runs fn(chunk_index) for chunk_index in [0, n_chunks).
///
/// The chunk decomposition is part of the caller's contract: callers must
/// accumulate per-chunk partial results and reduce them in chunk order so the
/// result is bitwise independent of the worker count. With one worker this
/// degenerates to a plain loop.
inline void parallel_chunks(int n_chunks, const std::function<void(int)>& fn) {
    const int workers = std::min(effective_thread_count(), std::max(1, n_chunks));
    if (workers <= 1) {
        for (int c = 0; c < n_chunks; ++c) fn(c);
        return;
    }
    std::atomic<int> next{0};
    auto body = [&]() {
        for (;;) {
            const int c = next.fetch_add(1);
            if (c >= n_chunks) return;
            fn(c);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers) - 1);
    for (int i = 0; i + 1 < workers; ++i) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
}

}  // namespace blurslam
