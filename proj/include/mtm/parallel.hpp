#pragma once

#include <cstddef>
#include <functional>

namespace mtm {

// Upper bound on worker threads: MULTITOPIC_THREADS if set (>= 1), otherwise
// the hardware concurrency.
std::size_t max_threads();

// Runs task(i) for i in [0, count). Tasks may run concurrently; callers write
// results into per-task slots and reduce them in index order afterwards, so
// the outcome never depends on scheduling.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& task);

}  // namespace mtm
