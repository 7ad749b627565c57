#pragma once

#include <cstddef>
#include <functional>

namespace endowave {

/// Worker-thread cap: min(hardware_concurrency, ENDOWAVE_THREADS if set).
int thread_count();

/// Splits [0,n) into contiguous chunks, one worker per chunk.
/// The callable must write only to disjoint state per index; results are then
/// independent of the thread count. Runs inline when n is small or one thread
/// is configured.
void parallel_for(size_t n, const std::function<void(size_t begin, size_t end)>& fn);

/// Convenience per-index form.
void parallel_for_each(size_t n, const std::function<void(size_t i)>& fn);

} // namespace endowave
