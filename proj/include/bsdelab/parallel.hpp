#pragma once

#include <cstddef>
#include <functional>

namespace bsdelab {

/// Process-wide worker count used by `parallel_for` (default 1).
void set_thread_count(unsigned threads);
unsigned thread_count();

/// Runs `body(begin, end)` over a static partition of [0, count). Chunks are
/// write-disjoint by contract; results must not depend on the partition.
/// The first exception thrown by any chunk is rethrown on the caller.
void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace bsdelab
