#pragma once

#include <cstddef>
#include <functional>

namespace fcc {

/// Process-wide worker count used by the compute kernels. Every kernel assigns
/// each output element to exactly one task and accumulates in a fixed order,
/// so results do not depend on this value.
unsigned num_threads() noexcept;
void set_num_threads(unsigned threads) noexcept;

/// Threads requested through FCC_THREADS, or hardware concurrency.
unsigned default_num_threads() noexcept;

/// Runs body(begin, end) over contiguous chunks of [0, count). Chunks are
/// static and the call returns once all have finished; exceptions from any
/// chunk are rethrown on the calling thread.
void parallel_for(std::size_t count,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace fcc
