// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace qsam {

// Worker count from QSAM_THREADS (default 1, clamped to [1, 256]).
std::size_t worker_count();

// Runs fn(i) for i in [0, n), statically partitioned across worker_count()
// threads. Callers must write only to slot i so results do not depend on
// the thread count. The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Keeps freed memory in the heap instead of handing it back to the OS;
// training allocates and drops multi-megabyte tensors every step and would
// otherwise page-fault on each of them.
void tune_allocator();

}  // namespace qsam
