#pragma once

#include <cstddef>
#include <functional>

namespace lapref {

// Thread cap from REFINE_NUM_THREADS, else hardware concurrency (>= 1).
int default_thread_count();

// Calls fn(i) for i in [0, n) on up to `max_threads` threads (0 selects
// default_thread_count()). The first exception thrown by any task is
// rethrown after all threads finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  int max_threads = 0);

}  // namespace lapref
