#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace dgp::detail {

// Runs f(0..n-1) on up to hardware_concurrency threads. Results are whatever
// f writes into caller-owned slots; completion order does not matter.
template <typename F>
void parallel_for(int n, F&& f) {
  if (n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  const int workers = std::min<int>(n, std::max(1u, std::thread::hardware_concurrency()));
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) f(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace dgp::detail
