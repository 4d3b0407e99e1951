#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <stdexcept>
#include <thread>
#include <vector>

namespace losc {

// Partitions [0, n) into `workers` contiguous chunks and runs them on separate
// threads; workers <= 1 runs inline. fn receives (chunk_index, begin, end).
// Chunks are contiguous so per-chunk results can be merged in index order.
inline void parallel_chunks(std::size_t n, int workers,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (workers < 0) throw std::invalid_argument("worker count must be non-negative");
  std::size_t w = workers <= 1 ? 1 : std::min<std::size_t>(workers, n ? n : 1);
  if (w <= 1) {
    if (n) fn(0, 0, n);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(w);
  std::size_t base = n / w, extra = n % w, begin = 0;
  for (std::size_t c = 0; c < w; ++c) {
    std::size_t end = begin + base + (c < extra ? 1 : 0);
    threads.emplace_back([&, c, begin, end] {
      try {
        fn(c, begin, end);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
    begin = end;
  }
  for (std::thread& t : threads) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  parallel_chunks(n, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace losc
