#include "dpgrad/gradient.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

#include "dpgrad/errors.hpp"

namespace dpgrad {

namespace {

constexpr char kDenseMagic[4] = {'D', 'L', 'G', '1'};
constexpr uint8_t kDenseVersion = 1;

// All wire formats are little-endian; this toolkit only targets LE hosts
// and the writers below assume native order matches.
static_assert(std::endian::native == std::endian::little,
              "wire formats assume a little-endian host");

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw ValidationError("dense load: truncated header");
  return v;
}

}  // namespace

void validate_gradient(const DenseGradient& g) {
  if (g.empty()) throw ValidationError("gradient: dimension must be >= 1");
  for (double v : g) {
    if (!std::isfinite(v)) throw ValidationError("gradient: non-finite entry");
  }
}

DenseGradient clip_coordinates(const DenseGradient& g, double c) {
  validate_gradient(g);
  if (!(c > 0.0) || !std::isfinite(c)) throw ParameterError("clip_coordinates: c must be > 0");
  DenseGradient out(g.size());
  for (size_t i = 0; i < g.size(); ++i) out[i] = std::clamp(g[i], -c, c);
  return out;
}

DenseGradient clip_l2(const DenseGradient& g, double limit) {
  validate_gradient(g);
  if (!(limit > 0.0) || !std::isfinite(limit)) throw ParameterError("clip_l2: limit must be > 0");
  const double scale = std::max(1.0, l2_norm(g) / limit);
  if (scale == 1.0) return g;
  DenseGradient out(g.size());
  for (size_t i = 0; i < g.size(); ++i) out[i] = g[i] / scale;
  return out;
}

DenseGradient linf_normalize(const DenseGradient& g) {
  validate_gradient(g);
  const double m = linf_norm(g);
  if (m == 0.0) return g;
  DenseGradient out(g.size());
  for (size_t i = 0; i < g.size(); ++i) out[i] = g[i] / m;
  return out;
}

IndexSet top_k_indices(const DenseGradient& g, uint32_t k) {
  validate_gradient(g);
  if (k < 1 || k > g.size()) throw ParameterError("top_k_indices: need 1 <= k <= d");
  IndexSet idx(g.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&g](uint32_t a, uint32_t b) {
                      const double fa = std::fabs(g[a]), fb = std::fabs(g[b]);
                      if (fa != fb) return fa > fb;
                      return a < b;
                    });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double l2_norm(const DenseGradient& g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

double linf_norm(const DenseGradient& g) {
  double m = 0.0;
  for (double v : g) m = std::max(m, std::fabs(v));
  return m;
}

double l1_norm(const DenseGradient& g) {
  double s = 0.0;
  for (double v : g) s += std::fabs(v);
  return s;
}

void dump_dense(const DenseGradient& g, std::ostream& out) {
  validate_gradient(g);
  if (g.size() > std::numeric_limits<uint32_t>::max()) {
    throw ValidationError("dense dump: dimension exceeds u32");
  }
  out.write(kDenseMagic, sizeof(kDenseMagic));
  out.write(reinterpret_cast<const char*>(&kDenseVersion), 1);
  write_u32(out, static_cast<uint32_t>(g.size()));
  out.write(reinterpret_cast<const char*>(g.data()),
            static_cast<std::streamsize>(g.size() * sizeof(double)));
}

DenseGradient load_dense(std::istream& in) {
  char magic[4] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kDenseMagic, sizeof(magic)) != 0) {
    throw ValidationError("dense load: bad magic");
  }
  uint8_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 1);
  if (!in || version != kDenseVersion) throw ValidationError("dense load: unsupported version");
  const uint32_t dim = read_u32(in);
  if (dim == 0) throw ValidationError("dense load: dimension must be >= 1");
  DenseGradient g(dim);
  in.read(reinterpret_cast<char*>(g.data()),
          static_cast<std::streamsize>(size_t{dim} * sizeof(double)));
  if (!in) throw ValidationError("dense load: truncated payload");
  validate_gradient(g);
  return g;
}

}  // namespace dpgrad
