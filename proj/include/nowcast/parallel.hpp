#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace nowcast {

/// Worker cap: NOWCAST_THREADS if set, otherwise the hardware concurrency.
inline int max_threads() {
  if (const char* env = std::getenv("NOWCAST_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(begin, end) over disjoint chunks of [0, n). Each index is handled
/// by exactly one invocation, so writes to per-index outputs stay
/// deterministic regardless of the worker count. Reductions must not be done
/// inside fn unless chunk results are merged in chunk order by the caller.
inline void parallel_for(long n, const std::function<void(long, long)>& fn, long min_grain = 1) {
  if (n <= 0) return;
  const int threads = std::min<long>(max_threads(), std::max<long>(1, n / std::max<long>(1, min_grain)));
  if (threads <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  const long chunk = (n + threads - 1) / threads;
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto run = [&](long b, long e) {
    try {
      fn(b, e);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  };
  for (int t = 1; t < threads; ++t) {
    const long b = std::min<long>(t * chunk, n);
    const long e = std::min<long>(b + chunk, n);
    if (b < e) pool.emplace_back(run, b, e);
  }
  run(0, std::min<long>(chunk, n));
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace nowcast
