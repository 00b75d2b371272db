#pragma once

#include <cstddef>
#include <functional>

namespace bmavg {

/// Worker count for parallel loops. Initialized from BMAVG_THREADS, else the
/// hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Calls body(i) for i in [0, n) across worker threads. Each index must write
/// only its own outputs; results are then independent of the schedule.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace bmavg
