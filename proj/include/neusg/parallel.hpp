// SPDX-License-Identifier: Apache-2.0
//
// Static-partition worker fan-out. Chunk boundaries depend only on the range
// and the thread count, so results are reproducible for a fixed count.

#pragma once

#include <cstddef>
#include <functional>

namespace neusg {

/// Process-wide worker count (default 1).
void set_thread_count(int n);
int thread_count();

/// Calls fn(begin, end) on contiguous chunks of [0, n), one per worker, and joins.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace neusg
