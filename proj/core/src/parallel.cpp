#include "dpgrad/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace dpgrad {

void parallel_for(size_t n, uint32_t threads, const std::function<void(size_t)>& fn) {
  if (n == 0) return;
  const uint32_t nw = std::min<uint64_t>(std::max<uint32_t>(threads, 1), n);
  if (nw == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(nw);
  for (uint32_t w = 0; w < nw; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const size_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dpgrad
