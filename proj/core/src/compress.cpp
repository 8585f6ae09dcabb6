#include "dpgrad/compress.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>

#include "dpgrad/errors.hpp"

namespace dpgrad {

namespace {

constexpr char kSparseMagic[4] = {'D', 'L', 'S', '1'};

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw ValidationError("sparse load: truncated");
  return v;
}

uint32_t next_pow2(uint32_t n) {
  uint32_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place unnormalized Walsh-Hadamard transform; length must be a power
// of two. Self-inverse up to a factor of n.
void fwht(std::vector<double>& a) {
  const size_t n = a.size();
  for (size_t h = 1; h < n; h <<= 1) {
    for (size_t i = 0; i < n; i += h << 1) {
      for (size_t j = i; j < i + h; ++j) {
        const double x = a[j], y = a[j + h];
        a[j] = x + y;
        a[j + h] = x - y;
      }
    }
  }
}

// Deterministic +-1 diagonal for the rotation; independent of how the
// vector is produced or consumed.
double diagonal_sign(uint64_t seed, uint32_t i) {
  return (mix64(seed ^ (0x5851f42d4c957f2dULL + i)) & 1) ? 1.0 : -1.0;
}

}  // namespace

void validate_sparse(const SparseSignGradient& v) {
  if (v.dim == 0) throw ValidationError("sparse: dimension must be >= 1");
  if (v.indices.size() != v.signs.size()) {
    throw ValidationError("sparse: index/sign length mismatch");
  }
  for (size_t i = 0; i < v.indices.size(); ++i) {
    if (v.indices[i] >= v.dim) throw ValidationError("sparse: index out of range");
    if (i > 0 && v.indices[i] <= v.indices[i - 1]) {
      throw ValidationError("sparse: indices must be strictly increasing");
    }
    if (v.signs[i] != 1 && v.signs[i] != -1) {
      throw ValidationError("sparse: signs must be +-1");
    }
  }
}

SparseSignGradient topk_sto_sign(const DenseGradient& g, uint32_t k, double c, Rng& rng) {
  validate_gradient(g);
  if (k < 1 || k > g.size()) throw ParameterError("topk_sto_sign: need 1 <= k <= d");
  SparseSignGradient out;
  out.dim = static_cast<uint32_t>(g.size());
  if (linf_norm(g) == 0.0) return out;  // abstention
  const IndexSet support = top_k_indices(g, k);
  const DenseGradient ghat = linf_normalize(clip_coordinates(g, c));
  out.indices.reserve(k);
  out.signs.reserve(k);
  for (uint32_t j : support) {
    const double p_plus = (1.0 + ghat[j]) / 2.0;
    out.indices.push_back(j);
    out.signs.push_back(rng.bernoulli(p_plus) ? int8_t{1} : int8_t{-1});
  }
  return out;
}

DenseGradient topk_sto_sign_mean(const DenseGradient& g, uint32_t k, double c) {
  validate_gradient(g);
  if (k < 1 || k > g.size()) throw ParameterError("topk_sto_sign_mean: need 1 <= k <= d");
  DenseGradient mean(g.size(), 0.0);
  if (linf_norm(g) == 0.0) return mean;
  const IndexSet support = top_k_indices(g, k);
  const DenseGradient ghat = linf_normalize(clip_coordinates(g, c));
  for (uint32_t j : support) mean[j] = ghat[j];
  return mean;
}

DenseGradient norm_top_k(const DenseGradient& g, double k) {
  validate_gradient(g);
  if (!(k > 0.0) || k > 1.0) throw ParameterError("norm_top_k: need 0 < k <= 1");
  if (k == 1.0) return g;  // exact identity by definition of the target
  const double target = k * l2_norm(g) * l2_norm(g);
  std::vector<uint32_t> order(g.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&g](uint32_t a, uint32_t b) {
    const double fa = g[a] * g[a], fb = g[b] * g[b];
    if (fa != fb) return fa > fb;
    return a < b;
  });
  DenseGradient out(g.size(), 0.0);
  double cumulative = 0.0;
  for (uint32_t j : order) {
    cumulative += g[j] * g[j];
    if (cumulative > target) break;
    out[j] = g[j];
  }
  return out;
}

DenseGradient hadamard_rotate(const DenseGradient& g, uint64_t seed) {
  validate_gradient(g);
  const uint32_t n = next_pow2(static_cast<uint32_t>(g.size()));
  std::vector<double> a(n, 0.0);
  for (size_t i = 0; i < g.size(); ++i) a[i] = g[i] * diagonal_sign(seed, static_cast<uint32_t>(i));
  fwht(a);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (double& v : a) v *= scale;
  return a;
}

DenseGradient hadamard_rotate_inverse(const DenseGradient& g, uint64_t seed,
                                      uint32_t original_dim) {
  validate_gradient(g);
  const uint32_t n = static_cast<uint32_t>(g.size());
  if (n != next_pow2(n)) throw ParameterError("hadamard_rotate_inverse: dim must be a power of 2");
  if (original_dim < 1 || original_dim > n) {
    throw ParameterError("hadamard_rotate_inverse: bad original_dim");
  }
  std::vector<double> a = g;
  fwht(a);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  DenseGradient out(original_dim);
  for (uint32_t i = 0; i < original_dim; ++i) out[i] = a[i] * scale * diagonal_sign(seed, i);
  return out;
}

double klevel_grid_value(uint32_t r, uint32_t m) {
  if (m < 2) throw ParameterError("klevel grid: m must be >= 2");
  if (r >= m) throw ParameterError("klevel grid: level out of range");
  return -1.0 + 2.0 * static_cast<double>(r) / static_cast<double>(m - 1);
}

KLevelGradient sto_klevel(const DenseGradient& g, const KLevelSpec& spec, Rng& rng) {
  validate_gradient(g);
  if (spec.m < 2) throw ParameterError("sto_klevel: m must be >= 2");
  DenseGradient v = clip_coordinates(g, spec.c);
  if (spec.rotation_seed) v = hadamard_rotate(v, *spec.rotation_seed);
  v = linf_normalize(v);

  KLevelGradient out;
  out.dim = static_cast<uint32_t>(v.size());
  out.levels = spec.m;
  out.values.resize(v.size());
  const double step = 2.0 / static_cast<double>(spec.m - 1);
  for (size_t i = 0; i < v.size(); ++i) {
    // v[i] lies in [-1, 1]; find the grid cell and round stochastically so
    // the expectation equals v[i].
    double pos = (v[i] + 1.0) / step;
    uint32_t lo = static_cast<uint32_t>(std::min(std::floor(pos), static_cast<double>(spec.m - 2)));
    const double frac = pos - static_cast<double>(lo);
    const uint32_t r = rng.bernoulli(frac) ? lo + 1 : lo;
    out.values[i] = klevel_grid_value(r, spec.m);
  }
  return out;
}

void dump_sparse(const SparseSignGradient& v, std::ostream& out) {
  validate_sparse(v);
  out.write(kSparseMagic, sizeof(kSparseMagic));
  write_u32(out, v.dim);
  write_u32(out, static_cast<uint32_t>(v.count()));
  for (size_t i = 0; i < v.count(); ++i) {
    write_u32(out, v.indices[i]);
    out.write(reinterpret_cast<const char*>(&v.signs[i]), 1);
  }
}

SparseSignGradient load_sparse(std::istream& in) {
  char magic[4] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kSparseMagic, sizeof(magic)) != 0) {
    throw ValidationError("sparse load: bad magic");
  }
  SparseSignGradient v;
  v.dim = read_u32(in);
  const uint32_t count = read_u32(in);
  v.indices.resize(count);
  v.signs.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    v.indices[i] = read_u32(in);
    in.read(reinterpret_cast<char*>(&v.signs[i]), 1);
  }
  if (!in) throw ValidationError("sparse load: truncated");
  validate_sparse(v);
  return v;
}

}  // namespace dpgrad
