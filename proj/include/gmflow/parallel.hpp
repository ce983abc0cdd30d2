/*
 * parallel.hpp — deterministic index-space parallelism.
 *
 * parallel_for partitions [0, count) into fixed-size chunks that worker
 * threads claim from an atomic cursor. Results must be written to
 * index-addressed slots (no shared accumulators), so the output is
 * byte-identical for any thread count, including 1.
 */

#pragma once

#include <cstddef>
#include <functional>

namespace gmflow {

/// Worker count: the TOOL_THREADS environment variable when set to a positive
/// integer, otherwise the hardware concurrency, clamped to [1, 64].
std::size_t tool_thread_count();

/// Run body(i) for every i in [0, count). Exceptions thrown by any body
/// propagate to the caller (first one wins) after all workers stop.
void parallel_for(std::size_t count,
                  const std::function<void(std::size_t)>& body);

} // namespace gmflow
