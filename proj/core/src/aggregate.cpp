#include "dpgrad/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "dpgrad/errors.hpp"
#include "dpgrad/parallel.hpp"
#include "dpgrad/sketch.hpp"

namespace dpgrad {

namespace {

constexpr char kTernaryMagic[4] = {'D', 'L', 'T', '1'};

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw ValidationError("ternary load: truncated");
  return v;
}

void check_agg_params(const AggregationParams& p) {
  if (p.teachers < 1) throw ParameterError("aggregation: teachers must be >= 1");
  if (!(p.sigma >= 0.0) || !std::isfinite(p.sigma)) {
    throw ParameterError("aggregation: sigma must be >= 0");
  }
  if (!(p.beta > 0.0) || p.beta > 1.0) throw ParameterError("aggregation: need 0 < beta <= 1");
}

}  // namespace

void validate_ternary(const TernaryGradient& t) {
  if (t.dim == 0) throw ValidationError("ternary: dimension must be >= 1");
  if (t.values.size() != t.dim) throw ValidationError("ternary: length mismatch");
  for (int8_t v : t.values) {
    if (v < -1 || v > 1) throw ValidationError("ternary: values must be in {-1,0,1}");
  }
}

VoteSum sum_votes(const std::vector<SparseSignGradient>& votes) {
  if (votes.empty()) throw ParameterError("sum_votes: need at least one vote vector");
  const uint32_t dim = votes[0].dim;
  VoteSum vs;
  vs.dim = dim;
  vs.votes.assign(dim, 0);
  for (const auto& v : votes) {
    validate_sparse(v);
    if (v.dim != dim) throw ValidationError("sum_votes: dimension mismatch");
    for (size_t i = 0; i < v.count(); ++i) vs.votes[v.indices[i]] += v.signs[i];
  }
  const auto n = static_cast<int32_t>(votes.size());
  for (int32_t s : vs.votes) {
    require(s >= -n && s <= n, "sum_votes: vote sum outside [-N, N]");
  }
  return vs;
}

void add_noise(VoteSum& vs, double sigma, Rng& noise_rng) {
  vs.noisy.resize(vs.votes.size());
  for (size_t j = 0; j < vs.votes.size(); ++j) {
    const double n = sigma > 0.0 ? noise_rng.gaussian(sigma) : 0.0;
    vs.noisy[j] = static_cast<double>(vs.votes[j]) + n;
  }
}

TernaryGradient threshold_votes(const std::vector<double>& noisy, double threshold) {
  if (noisy.empty()) throw ValidationError("threshold_votes: empty input");
  if (!(threshold >= 0.0)) throw ParameterError("threshold_votes: threshold must be >= 0");
  TernaryGradient t;
  t.dim = static_cast<uint32_t>(noisy.size());
  t.values.resize(t.dim);
  for (uint32_t j = 0; j < t.dim; ++j) {
    if (noisy[j] >= threshold) {
      t.values[j] = 1;
    } else if (noisy[j] <= -threshold) {
      t.values[j] = -1;
    } else {
      t.values[j] = 0;
    }
  }
  return t;
}

AggregationResult aggregate_votes(const std::vector<SparseSignGradient>& votes,
                                  const AggregationParams& p, Rng& noise_rng) {
  check_agg_params(p);
  if (votes.size() != p.teachers) throw ValidationError("aggregate_votes: teacher count mismatch");
  AggregationResult res;
  res.votes = sum_votes(votes);
  add_noise(res.votes, p.sigma, noise_rng);
  res.output = threshold_votes(res.votes.noisy, p.beta * static_cast<double>(p.teachers));
  return res;
}

AggregationResult dp_topk_agg(const std::vector<DenseGradient>& grads,
                              const AggregationParams& p, uint64_t vote_seed,
                              Rng& noise_rng, uint32_t threads) {
  check_agg_params(p);
  if (grads.size() != p.teachers) throw ValidationError("dp_topk_agg: teacher count mismatch");
  std::vector<SparseSignGradient> votes(grads.size());
  parallel_for(grads.size(), threads, [&](size_t i) {
    Rng rng(derive_stream(vote_seed, i));
    votes[i] = topk_sto_sign(grads[i], p.k, p.c, rng);
  });
  return aggregate_votes(votes, p, noise_rng);
}

double sum_sensitivity(uint32_t k) {
  if (k < 1) throw ParameterError("sum_sensitivity: k must be >= 1");
  return 2.0 * std::sqrt(static_cast<double>(k));
}

std::pair<double, double> recommended_beta_range(double sigma, uint32_t teachers) {
  if (!(sigma > 0.0)) throw ParameterError("beta range: sigma must be > 0");
  if (teachers < 1) throw ParameterError("beta range: teachers must be >= 1");
  const double n = static_cast<double>(teachers);
  return {std::min(sigma / (2.0 * n), 1.0), std::min(sigma / n, 1.0)};
}

KLevelAggResult klevel_agg(const std::vector<DenseGradient>& grads,
                           const KLevelAggParams& p, uint64_t vote_seed,
                           Rng& noise_rng, uint32_t threads) {
  if (p.teachers < 1) throw ParameterError("klevel_agg: teachers must be >= 1");
  if (grads.size() != p.teachers) throw ValidationError("klevel_agg: teacher count mismatch");
  if (!(p.sigma >= 0.0)) throw ParameterError("klevel_agg: sigma must be >= 0");
  if (!(p.beta > 0.0) || p.beta > 1.0) throw ParameterError("klevel_agg: need 0 < beta <= 1");
  if (p.derotate_output && !p.rotation_seed) {
    throw ParameterError("klevel_agg: derotation requires a rotation seed");
  }
  KLevelSpec spec;
  spec.m = p.m;
  spec.c = p.c;
  spec.rotation_seed = p.rotation_seed;

  std::vector<KLevelGradient> quantized(grads.size());
  parallel_for(grads.size(), threads, [&](size_t i) {
    Rng rng(derive_stream(vote_seed, i));
    quantized[i] = sto_klevel(grads[i], spec, rng);
  });

  const uint32_t dim = quantized[0].dim;
  KLevelAggResult res;
  res.sums.assign(dim, 0.0);
  for (const auto& q : quantized) {
    if (q.dim != dim) throw ValidationError("klevel_agg: dimension mismatch");
    for (uint32_t j = 0; j < dim; ++j) res.sums[j] += q.values[j];
  }
  res.noisy.resize(dim);
  for (uint32_t j = 0; j < dim; ++j) {
    const double n = p.sigma > 0.0 ? noise_rng.gaussian(p.sigma) : 0.0;
    res.noisy[j] = res.sums[j] + n;
  }
  res.ternary = threshold_votes(res.noisy, p.beta * static_cast<double>(p.teachers));
  if (p.derotate_output) {
    DenseGradient t(res.ternary.values.begin(), res.ternary.values.end());
    res.derotated = hadamard_rotate_inverse(t, *p.rotation_seed,
                                            static_cast<uint32_t>(grads[0].size()));
  }
  return res;
}

DenseGradient sketch_agg(const std::vector<DenseGradient>& grads,
                         const SketchAggParams& p, uint64_t vote_seed,
                         Rng& noise_rng, uint32_t threads) {
  if (p.teachers < 1) throw ParameterError("sketch_agg: teachers must be >= 1");
  if (grads.size() != p.teachers) throw ValidationError("sketch_agg: teacher count mismatch");
  if (!(p.sigma >= 0.0)) throw ParameterError("sketch_agg: sigma must be >= 0");
  const uint32_t dim = static_cast<uint32_t>(grads[0].size());

  std::vector<CountSketch> partial;
  partial.reserve(grads.size());
  for (size_t i = 0; i < grads.size(); ++i) partial.emplace_back(p.rows, p.width, p.sketch_seed);
  parallel_for(grads.size(), threads, [&](size_t i) {
    Rng rng(derive_stream(vote_seed, i));
    partial[i].accumulate(topk_sto_sign(grads[i], p.k, p.c, rng));
  });
  CountSketch total(p.rows, p.width, p.sketch_seed);
  for (const auto& s : partial) total.add(s);

  const DenseGradient estimate = total.unsketch(dim);
  DenseGradient out(dim, 0.0);
  if (linf_norm(estimate) == 0.0) return out;  // nothing survived sketching
  const IndexSet keep = top_k_indices(estimate, std::min<uint32_t>(p.k, dim));
  for (uint32_t j : keep) {
    const double n = p.sigma > 0.0 ? noise_rng.gaussian(p.sigma) : 0.0;
    out[j] = estimate[j] + n;
  }
  return out;
}

void dump_ternary(const TernaryGradient& t, std::ostream& out) {
  validate_ternary(t);
  out.write(kTernaryMagic, sizeof(kTernaryMagic));
  write_u32(out, t.dim);
  const uint32_t nbytes = (t.dim + 3) / 4;
  std::vector<uint8_t> packed(nbytes, 0);
  for (uint32_t j = 0; j < t.dim; ++j) {
    uint8_t code = 0;
    if (t.values[j] == 1) code = 1;
    if (t.values[j] == -1) code = 2;
    packed[j / 4] |= static_cast<uint8_t>(code << (2 * (j % 4)));
  }
  out.write(reinterpret_cast<const char*>(packed.data()), nbytes);
}

TernaryGradient load_ternary(std::istream& in) {
  char magic[4] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kTernaryMagic, sizeof(magic)) != 0) {
    throw ValidationError("ternary load: bad magic");
  }
  TernaryGradient t;
  t.dim = read_u32(in);
  if (t.dim == 0) throw ValidationError("ternary load: dimension must be >= 1");
  const uint32_t nbytes = (t.dim + 3) / 4;
  std::vector<uint8_t> packed(nbytes);
  in.read(reinterpret_cast<char*>(packed.data()), nbytes);
  if (!in) throw ValidationError("ternary load: truncated");
  t.values.resize(t.dim);
  for (uint32_t j = 0; j < t.dim; ++j) {
    const uint8_t code = (packed[j / 4] >> (2 * (j % 4))) & 3u;
    if (code == 0) {
      t.values[j] = 0;
    } else if (code == 1) {
      t.values[j] = 1;
    } else if (code == 2) {
      t.values[j] = -1;
    } else {
      throw ValidationError("ternary load: invalid code 11");
    }
  }
  return t;
}

}  // namespace dpgrad
