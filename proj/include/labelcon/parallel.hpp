// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace labelcon {

/// Upper bound on worker threads used by the loss and analysis kernels.
/// Defaults to LABELCON_THREADS from the environment, else 1.
std::size_t max_threads();
void set_max_threads(std::size_t n);

/// Calls fn(i) for i in [0, count). Work is split into contiguous chunks
/// across at most max_threads() threads; callers write into per-index slots
/// and reduce afterwards in index order, so results do not depend on the
/// thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn,
                  std::size_t min_per_thread = 1);

}  // namespace labelcon
