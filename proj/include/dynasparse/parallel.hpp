#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace dynasparse {

// Parallelism cap: DYNASPARSE_THREADS if set, hardware concurrency otherwise.
inline int thread_cap() {
  if (const char* env = std::getenv("DYNASPARSE_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs fn(i) for i in [0, count). Work items must be independent; results
// must be written to pre-sized slots so the output order is deterministic
// regardless of thread count.
inline void parallel_for_index(int count, const std::function<void(int)>& fn) {
  const int workers = std::min(thread_cap(), count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < count; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dynasparse
