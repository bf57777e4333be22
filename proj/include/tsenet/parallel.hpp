#pragma once

#include <cstddef>
#include <functional>

namespace tsenet {

/// Worker count from TSENET_WORKERS (default: hardware concurrency, at least 1).
std::size_t worker_count();

/// Runs body(i) for i in [0, n). Each index is visited exactly once; callers
/// write results to per-index slots so output never depends on worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace tsenet
