#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace epd {

namespace detail {
inline thread_local int intra_op_threads = 1;
}

/// Worker count used by batch-parallel kernels on the calling thread.
/// Kernels partition work per batch item and reduce partials in item order,
/// so results are bitwise identical for every thread count.
inline int intra_op_threads() noexcept { return detail::intra_op_threads; }

class ScopedIntraOpThreads {
 public:
  explicit ScopedIntraOpThreads(int n) : previous_(detail::intra_op_threads) {
    detail::intra_op_threads = std::max(1, n);
  }
  ~ScopedIntraOpThreads() { detail::intra_op_threads = previous_; }
  ScopedIntraOpThreads(const ScopedIntraOpThreads&) = delete;
  ScopedIntraOpThreads& operator=(const ScopedIntraOpThreads&) = delete;

 private:
  int previous_;
};

/// Calls fn(i) for i in [0, n). Items are dealt to workers in contiguous
/// chunks; fn must only write state owned by item i.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(intra_op_threads()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (std::size_t i = 0; i < std::min(n, chunk); ++i) fn(i);
}

}  // namespace epd
