#ifndef DPGRAD_AGGREGATE_HPP_
#define DPGRAD_AGGREGATE_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "dpgrad/compress.hpp"
#include "dpgrad/gradient.hpp"
#include "dpgrad/rng.hpp"

namespace dpgrad {

// Per-coordinate values in {-1, 0, +1}; the only thing that ever leaves the
// trusted aggregation boundary.
struct TernaryGradient {
  uint32_t dim = 0;
  std::vector<int8_t> values;
};

void validate_ternary(const TernaryGradient& t);

struct AggregationParams {
  uint32_t teachers = 1;
  double sigma = 0.0;  // noise stddev on the vote sum, >= 0
  double beta = 1.0;   // vote threshold fraction, in (0, 1]
  uint32_t k = 1;      // votes per teacher
  double c = 1.0;      // coordinate clip inside the compressor
};

// Intermediate state of one aggregation round. Stays inside the trusted
// boundary: there is deliberately no serializer for it.
struct VoteSum {
  uint32_t dim = 0;
  std::vector<int32_t> votes;   // sum of sign votes, each in [-N, N]
  std::vector<double> noisy;    // votes + N(0, sigma^2) per coordinate
};

struct AggregationResult {
  TernaryGradient output;
  VoteSum votes;
};

// Integer vote reduction. Exact and order-independent; inputs must share dim.
VoteSum sum_votes(const std::vector<SparseSignGradient>& votes);

// Fills vs.noisy = vs.votes + N(0, sigma^2), one draw per coordinate from a
// single stream, taken after the reduction.
void add_noise(VoteSum& vs, double sigma, Rng& noise_rng);

// +1 where noisy >= threshold, -1 where noisy <= -threshold, else 0. The
// >= branch wins at threshold 0. Pure function of the noisy sums: everything
// downstream of it is post-processing.
TernaryGradient threshold_votes(const std::vector<double>& noisy, double threshold);

// Aggregation of already-compressed votes: reduce, noise, threshold.
AggregationResult aggregate_votes(const std::vector<SparseSignGradient>& votes,
                                  const AggregationParams& p, Rng& noise_rng);

// Full round: compress each teacher gradient with topk_sto_sign (teacher i
// draws from stream derive_stream(vote_seed, i)), then aggregate. Thread
// count never changes the result.
AggregationResult dp_topk_agg(const std::vector<DenseGradient>& grads,
                              const AggregationParams& p, uint64_t vote_seed,
                              Rng& noise_rng, uint32_t threads = 1);

// l2 sensitivity of the vote sum when one teacher's votes are replaced:
// k coordinates change by at most 2 each, so 2 * sqrt(k).
double sum_sensitivity(uint32_t k);

// Practical threshold band [sigma / 2N, sigma / N], both ends clamped into
// (0, 1].
std::pair<double, double> recommended_beta_range(double sigma, uint32_t teachers);

// ---- k-level vote aggregation ----------------------------------------

struct KLevelAggParams {
  uint32_t teachers = 1;
  uint32_t m = 2;
  double c = 1.0;
  double sigma = 0.0;
  double beta = 1.0;
  std::optional<uint64_t> rotation_seed;  // shared across teachers
  // The thresholded output lives in the rotated basis; optionally map it
  // back through the inverse rotation.
  bool derotate_output = false;
};

struct KLevelAggResult {
  TernaryGradient ternary;       // in the (possibly rotated, padded) basis
  std::vector<double> sums;      // level-value sums before noise
  std::vector<double> noisy;
  std::optional<DenseGradient> derotated;
};

KLevelAggResult klevel_agg(const std::vector<DenseGradient>& grads,
                           const KLevelAggParams& p, uint64_t vote_seed,
                           Rng& noise_rng, uint32_t threads = 1);

// ---- sketched vote aggregation ----------------------------------------

struct SketchAggParams {
  uint32_t teachers = 1;
  uint32_t rows = 5;
  uint32_t width = 2048;
  uint32_t k = 1;
  double c = 1.0;
  double sigma = 0.0;
  uint64_t sketch_seed = 0;
};

// Sign votes accumulate into a shared-seed count sketch; the dense estimate
// is recovered, hard top-k selects survivors, and noise lands on the
// retained coordinates only (after selection).
DenseGradient sketch_agg(const std::vector<DenseGradient>& grads,
                         const SketchAggParams& p, uint64_t vote_seed,
                         Rng& noise_rng, uint32_t threads = 1);

// Binary dump: magic "DLT1", u32 dim, then packed 2-bit codes, 4 per byte,
// value j in bits 2*(j%4) of byte j/4; 00 -> 0, 01 -> +1, 10 -> -1.
void dump_ternary(const TernaryGradient& t, std::ostream& out);
TernaryGradient load_ternary(std::istream& in);

}  // namespace dpgrad

#endif  // DPGRAD_AGGREGATE_HPP_
