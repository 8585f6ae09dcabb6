#ifndef DPGRAD_PARALLEL_HPP_
#define DPGRAD_PARALLEL_HPP_

#include <cstddef>
#include <functional>
#include <cstdint>

namespace dpgrad {

// Runs fn(i) for i in [0, n) on up to `threads` workers. fn must write only
// to per-index state; reductions happen serially afterwards, so the result
// is byte-identical for any thread count.
void parallel_for(size_t n, uint32_t threads, const std::function<void(size_t)>& fn);

}  // namespace dpgrad

#endif  // DPGRAD_PARALLEL_HPP_
