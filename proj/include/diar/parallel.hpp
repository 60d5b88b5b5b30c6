#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace diar {

// Static contiguous partition of [0, n) over `threads` workers.
// fn(begin, end, worker_index). Chunk boundaries depend only on (n, threads),
// so any reduction done per worker and combined in worker order is
// deterministic for a fixed thread count.
template <class Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
    if (n == 0) return;
    int workers = std::max(1, threads);
    workers = static_cast<int>(std::min<size_t>(workers, n));
    if (workers == 1) {
        fn(size_t{0}, n, 0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    size_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        size_t begin = static_cast<size_t>(w) * chunk;
        size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end, w] { fn(begin, end, w); });
    }
    for (auto& t : pool) t.join();
}

inline int default_threads() {
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

} // namespace diar
