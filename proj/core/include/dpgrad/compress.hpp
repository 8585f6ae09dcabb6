#ifndef DPGRAD_COMPRESS_HPP_
#define DPGRAD_COMPRESS_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <variant>
#include <vector>

#include "dpgrad/gradient.hpp"
#include "dpgrad/rng.hpp"

namespace dpgrad {

// Sparse vector of sign votes. indices strictly increasing, signs in {-1,+1},
// entry count <= k (zero entries means the sender abstained).
struct SparseSignGradient {
  uint32_t dim = 0;
  std::vector<uint32_t> indices;
  std::vector<int8_t> signs;

  size_t count() const { return indices.size(); }
};

void validate_sparse(const SparseSignGradient& v);

// Dense vector whose entries live on the uniform grid of `levels` points
// spanning [-1, 1].
struct KLevelGradient {
  uint32_t dim = 0;
  uint32_t levels = 0;
  std::vector<double> values;
};

// Compressor selection for harnesses that are generic over the mechanism.
struct TopKStoSignSpec {
  uint32_t k = 1;
  double c = 1.0;
};

struct NormTopKSpec {
  double k = 1.0;    // energy fraction in (0, 1]
  double limit = 1.0;  // per-sample l2 clip applied before compression
};

struct KLevelSpec {
  uint32_t m = 2;  // quantization levels, >= 2
  double c = 1.0;
  // Rotation before quantization spreads energy across coordinates. Absent
  // seed disables rotation.
  std::optional<uint64_t> rotation_seed;
};

struct SketchSpec {
  uint32_t rows = 5;
  uint32_t width = 2048;
  uint32_t k = 1;
  double c = 1.0;
  uint64_t seed = 0;
};

using CompressionSpec = std::variant<TopKStoSignSpec, NormTopKSpec, KLevelSpec, SketchSpec>;

// Top-k support selection on the raw magnitudes, then one sign vote per
// selected coordinate: +1 with probability (1 + ghat_j) / 2 where ghat is
// the coordinate-clipped gradient scaled to [-1, 1] by its linf norm.
// The all-zero gradient abstains (empty output). Requires 1 <= k <= d, c > 0.
SparseSignGradient topk_sto_sign(const DenseGradient& g, uint32_t k, double c, Rng& rng);

// Expected value of topk_sto_sign restricted to its support: the
// clipped-normalized gradient on the selected indices, zero elsewhere.
DenseGradient topk_sto_sign_mean(const DenseGradient& g, uint32_t k, double c);

// Keeps the longest prefix of coordinates, visited by decreasing squared
// magnitude (ties toward the lowest index), whose cumulative energy stays
// <= k * ||g||^2; zeroes the rest. k = 1 is the identity. A first
// coordinate already above target yields the zero vector.
DenseGradient norm_top_k(const DenseGradient& g, double k);

// Randomized orthonormal rotation: seeded sign flips followed by a
// fast Walsh-Hadamard transform, input zero-padded to the next power of
// two and scaled by 1/sqrt(padded dim). Output has the padded dimension.
DenseGradient hadamard_rotate(const DenseGradient& g, uint64_t seed);

// Inverse of hadamard_rotate, truncated back to original_dim coordinates.
DenseGradient hadamard_rotate_inverse(const DenseGradient& g, uint64_t seed,
                                      uint32_t original_dim);

// Coordinate clip, optional seeded rotation, linf scaling to [-1, 1], then
// stochastic rounding onto the m-level grid (unbiased given the scaling).
// m = 2 reduces to the stochastic sign rule.
KLevelGradient sto_klevel(const DenseGradient& g, const KLevelSpec& spec, Rng& rng);

// Grid value r of m levels on [-1, 1]: -1 + 2r / (m - 1).
double klevel_grid_value(uint32_t r, uint32_t m);

// Binary dump: magic "DLS1", u32 dim, u32 count, then count (u32 index,
// i8 sign) pairs, little-endian.
void dump_sparse(const SparseSignGradient& v, std::ostream& out);
SparseSignGradient load_sparse(std::istream& in);

}  // namespace dpgrad

#endif  // DPGRAD_COMPRESS_HPP_
