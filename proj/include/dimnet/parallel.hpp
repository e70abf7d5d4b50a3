#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace dimnet {

// Runs fn(begin, end) over a partition of [0, n) on up to `threads` workers.
// Callers keep determinism by writing into per-index slots and reducing
// serially afterwards. Exceptions are rethrown after join.
template <typename Fn>
void parallel_ranges(std::size_t n, int threads, Fn&& fn) {
  if (n == 0) return;
  const std::size_t n_workers =
      threads <= 1 ? 1 : std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  if (n_workers == 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + n_workers - 1) / n_workers;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, &errors, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace dimnet
