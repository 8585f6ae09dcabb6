#ifndef DPGRAD_GRADIENT_HPP_
#define DPGRAD_GRADIENT_HPP_

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace dpgrad {

// Dense float64 gradient. Every operation below validates that entries are
// finite and d >= 1; NaN/Inf never propagate silently.
using DenseGradient = std::vector<double>;

// Sorted ascending, no duplicates, entries < d of the owning gradient.
using IndexSet = std::vector<uint32_t>;

// Throws ValidationError on empty or non-finite input.
void validate_gradient(const DenseGradient& g);

// Per-coordinate clamp to [-c, c]. c > 0. Idempotent.
DenseGradient clip_coordinates(const DenseGradient& g, double c);

// g / max(1, ||g||_2 / limit). Output norm <= limit; inputs already inside
// the ball are returned unchanged.
DenseGradient clip_l2(const DenseGradient& g, double limit);

// g / ||g||_inf. The zero vector maps to itself: a silent gradient is an
// abstention, not an error.
DenseGradient linf_normalize(const DenseGradient& g);

// Indices of the k largest |g_j|, ties broken toward the lowest index.
// Result is sorted ascending. Requires 1 <= k <= d.
IndexSet top_k_indices(const DenseGradient& g, uint32_t k);

double l2_norm(const DenseGradient& g);
double linf_norm(const DenseGradient& g);
double l1_norm(const DenseGradient& g);

// Binary dump: magic "DLG1", u8 version (=1), u32 dim, then dim float64
// values, all little-endian.
void dump_dense(const DenseGradient& g, std::ostream& out);
DenseGradient load_dense(std::istream& in);

}  // namespace dpgrad

#endif  // DPGRAD_GRADIENT_HPP_
