#include "dpgrad/sketch.hpp"

#include <algorithm>
#include <cmath>

#include "dpgrad/errors.hpp"
#include "dpgrad/rng.hpp"

namespace dpgrad {

CountSketch::CountSketch(uint32_t rows, uint32_t width, uint64_t seed)
    : rows_(rows), width_(width), seed_(seed) {
  if (rows < 1) throw ParameterError("count sketch: rows must be >= 1");
  if (width < 1) throw ParameterError("count sketch: width must be >= 1");
  index_seeds_.reserve(rows);
  sign_seeds_.reserve(rows);
  for (uint32_t r = 0; r < rows; ++r) {
    index_seeds_.push_back(derive_stream(seed, 2ull * r));
    sign_seeds_.push_back(derive_stream(seed, 2ull * r + 1));
  }
  table_.assign(size_t{rows} * width, 0.0);
}

uint32_t CountSketch::index_hash(uint32_t row, uint32_t j) const {
  return static_cast<uint32_t>(mix64(index_seeds_[row] ^ j) % width_);
}

double CountSketch::sign_hash(uint32_t row, uint32_t j) const {
  return (mix64(sign_seeds_[row] ^ j) & 1) ? 1.0 : -1.0;
}

void CountSketch::accumulate(const SparseSignGradient& v) {
  validate_sparse(v);
  for (size_t i = 0; i < v.count(); ++i) {
    const uint32_t j = v.indices[i];
    const double val = static_cast<double>(v.signs[i]);
    for (uint32_t r = 0; r < rows_; ++r) {
      table_[size_t{r} * width_ + index_hash(r, j)] += sign_hash(r, j) * val;
    }
  }
}

void CountSketch::accumulate(const DenseGradient& v) {
  validate_gradient(v);
  for (uint32_t j = 0; j < v.size(); ++j) {
    if (v[j] == 0.0) continue;
    for (uint32_t r = 0; r < rows_; ++r) {
      table_[size_t{r} * width_ + index_hash(r, j)] += sign_hash(r, j) * v[j];
    }
  }
}

void CountSketch::add(const CountSketch& other) {
  if (other.rows_ != rows_ || other.width_ != width_ || other.seed_ != seed_) {
    throw ParameterError("count sketch add: shape/seed mismatch");
  }
  for (size_t i = 0; i < table_.size(); ++i) table_[i] += other.table_[i];
}

double CountSketch::query(uint32_t j) const {
  std::vector<double> est(rows_);
  for (uint32_t r = 0; r < rows_; ++r) {
    est[r] = sign_hash(r, j) * table_[size_t{r} * width_ + index_hash(r, j)];
  }
  std::sort(est.begin(), est.end());
  const uint32_t mid = rows_ / 2;
  if (rows_ % 2 == 1) return est[mid];
  return 0.5 * (est[mid - 1] + est[mid]);
}

DenseGradient CountSketch::unsketch(uint32_t dim) const {
  if (dim < 1) throw ParameterError("unsketch: dim must be >= 1");
  DenseGradient out(dim);
  for (uint32_t j = 0; j < dim; ++j) out[j] = query(j);
  return out;
}

}  // namespace dpgrad
