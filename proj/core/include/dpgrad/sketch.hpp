#ifndef DPGRAD_SKETCH_HPP_
#define DPGRAD_SKETCH_HPP_

#include <cstdint>
#include <vector>

#include "dpgrad/compress.hpp"
#include "dpgrad/gradient.hpp"

namespace dpgrad {

// Count sketch: rows x width table of sums. Accumulation is linear, so
// sketch(sum of vectors) is bit-exact equal to the sum of sketches when the
// inputs are integer-valued (sign votes are).
//
// Per-row hashes are derived from the sketch seed with a splitmix-style
// avalanche; the sign hash uses an independent derived stream, so index and
// sign are uncorrelated.
class CountSketch {
 public:
  CountSketch(uint32_t rows, uint32_t width, uint64_t seed);

  void accumulate(const SparseSignGradient& v);
  void accumulate(const DenseGradient& v);
  void add(const CountSketch& other);  // same shape and seed required

  // Median-of-rows unbiased point estimate for coordinate j.
  double query(uint32_t j) const;

  // Dense estimate of all `dim` coordinates.
  DenseGradient unsketch(uint32_t dim) const;

  uint32_t rows() const { return rows_; }
  uint32_t width() const { return width_; }
  uint64_t seed() const { return seed_; }
  const std::vector<double>& table() const { return table_; }

  uint32_t index_hash(uint32_t row, uint32_t j) const;
  double sign_hash(uint32_t row, uint32_t j) const;

 private:
  uint32_t rows_;
  uint32_t width_;
  uint64_t seed_;
  std::vector<uint64_t> index_seeds_;
  std::vector<uint64_t> sign_seeds_;
  std::vector<double> table_;  // row-major
};

}  // namespace dpgrad

#endif  // DPGRAD_SKETCH_HPP_
