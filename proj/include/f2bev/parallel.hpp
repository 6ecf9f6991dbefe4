#pragma once

#include <cstddef>
#include <functional>

namespace f2bev {

// Worker-thread cap: F2BEV_THREADS when set to a positive integer, otherwise
// the hardware concurrency (at least 1).
std::size_t worker_threads();

// Runs body(begin, end) over contiguous chunks of [0, n). Chunks are disjoint,
// so bodies that write only to their own indices produce output independent
// of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace f2bev
