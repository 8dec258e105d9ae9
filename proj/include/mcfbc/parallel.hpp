#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace mcfbc {

/// Worker cap from FBC_THREADS (0 or unset = hardware concurrency).
inline int thread_budget() {
  if (const char* env = std::getenv("FBC_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

/// Runs fn(i) for i in [0, n). Work is strided across workers; callers get
/// determinism by writing to preassigned slots and reducing in index order.
template <class Fn>
void parallel_for(int n, Fn&& fn) {
  const int workers = std::min(thread_budget(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([w, n, workers, &fn] {
      for (int i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace mcfbc
