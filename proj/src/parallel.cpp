#include "endowave/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace endowave {

int thread_count() {
    static const int cached = [] {
        int n = static_cast<int>(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        if (const char* env = std::getenv("ENDOWAVE_THREADS")) {
            int cap = std::atoi(env);
            if (cap >= 1) n = std::min(n, cap);
        }
        return n;
    }();
    return cached;
}

namespace {
thread_local bool t_in_worker = false;
}

void parallel_for(size_t n, const std::function<void(size_t, size_t)>& fn) {
    if (n == 0) return;
    const int threads = thread_count();
    // Nested regions run inline on the calling worker.
    if (t_in_worker || threads <= 1 || n < 2) {
        fn(0, n);
        return;
    }
    const size_t workers = std::min<size_t>(threads, n);
    const size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t t = 0; t < workers; ++t) {
        const size_t begin = t * chunk;
        const size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] {
            t_in_worker = true;
            fn(begin, end);
        });
    }
    for (auto& th : pool) th.join();
}

void parallel_for_each(size_t n, const std::function<void(size_t)>& fn) {
    parallel_for(n, [&fn](size_t b, size_t e) {
        for (size_t i = b; i < e; ++i) fn(i);
    });
}

} // namespace endowave
