// SPDX-License-Identifier: Apache-2.0
#include "r2lab/runtime.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace r2lab {

namespace {

std::size_t g_threads = 0;  // 0 = not initialized yet

std::size_t threads_from_env() {
  const char* env = std::getenv("R2LAB_THREADS");
  if (env == nullptr) return 1;
  const long v = std::strtol(env, nullptr, 10);
  if (v < 1) return 1;
  return static_cast<std::size_t>(v);
}

}  // namespace

std::size_t runtime_threads() {
  if (g_threads == 0) g_threads = threads_from_env();
  return g_threads;
}

void set_runtime_threads(std::size_t n) { g_threads = n < 1 ? 1 : n; }

void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (begin >= end) return;
  const std::size_t n = end - begin;
  const std::size_t workers = std::min(runtime_threads(), n);
  if (workers <= 1) {
    fn(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(fn, lo, hi);
  }
  for (auto& t : pool) t.join();
}

}  // namespace r2lab
