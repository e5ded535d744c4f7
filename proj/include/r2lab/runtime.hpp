// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace r2lab {

/// Worker count for data-parallel kernels. Initialized once from the
/// R2LAB_THREADS environment variable; 1 is the reference deterministic
/// mode. Parallel kernels partition output elements so every reduction
/// keeps a fixed order regardless of the thread count.
std::size_t runtime_threads();
void set_runtime_threads(std::size_t n);

/// Runs fn(begin, end) on contiguous chunks of [begin, end). With one
/// thread this is a plain inline call.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace r2lab
