#pragma once

#include <cstddef>
#include <functional>

namespace sscope {

/// Number of worker threads used for batch-sharded evaluation. Results never
/// depend on this value: shard boundaries are fixed and partial sums are
/// reduced in shard order.
void set_worker_threads(unsigned threads);
unsigned worker_threads();

/// Runs task(i) for i in [0, count) on up to worker_threads() threads.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& task);

}  // namespace sscope
