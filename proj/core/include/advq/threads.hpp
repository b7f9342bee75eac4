#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace advq {

// Global worker cap (--threads). Work is always split into static contiguous
// chunks, so results for a fixed (seed, thread count) are bit-identical;
// thread count 1 is the plain sequential reference.
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{1};
  return cap;
}

inline void set_threads(int n) { thread_cap().store(n < 1 ? 1 : n); }
inline int get_threads() { return thread_cap().load(); }

// Runs fn(begin, end) over [0, n) split into at most get_threads() chunks.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  const int workers = static_cast<int>(std::min<int64_t>(get_threads(), n > 0 ? n : 1));
  if (workers <= 1 || n <= 1) {
    if (n > 0) fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const int64_t chunk = (n + workers - 1) / workers;
  for (int w = 1; w < workers; ++w) {
    const int64_t b = w * chunk, e = std::min<int64_t>(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min<int64_t>(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace advq
