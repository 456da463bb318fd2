#pragma once

// Index-parallel loops. Work item i always writes its own slot, so results
// do not depend on the thread count.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace adnorm {

inline unsigned& thread_limit() {
  static unsigned limit = std::max(1u, std::thread::hardware_concurrency());
  return limit;
}

inline void set_thread_limit(unsigned n) { thread_limit() = std::max(1u, n); }

/// Calls fn(i) for i in [0, n). The first exception thrown by any item is
/// rethrown after all workers stop.
template <class F>
void parallel_for(std::size_t n, F&& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_limit(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace adnorm
