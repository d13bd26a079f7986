#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace rankstack {

// Runs fn(thread_index, begin, end) over contiguous chunks of [0, n).
// Chunk boundaries depend only on n and num_threads, so any reduction the
// caller performs in thread-index order is deterministic.
inline void parallel_chunks(size_t n, int num_threads,
                            const std::function<void(int, size_t, size_t)>& fn) {
  if (n == 0) return;
  int t = std::max(1, num_threads);
  if (static_cast<size_t>(t) > n) t = static_cast<int>(n);
  if (t == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> threads;
  size_t per = n / static_cast<size_t>(t);
  size_t extra = n % static_cast<size_t>(t);
  size_t begin = 0;
  for (int i = 0; i < t; ++i) {
    size_t len = per + (static_cast<size_t>(i) < extra ? 1 : 0);
    size_t end = begin + len;
    threads.emplace_back([&fn, i, begin, end]() { fn(i, begin, end); });
    begin = end;
  }
  for (auto& th : threads) th.join();
}

inline int default_thread_count() {
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace rankstack
