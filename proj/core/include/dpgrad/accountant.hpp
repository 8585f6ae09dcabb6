#ifndef DPGRAD_ACCOUNTANT_HPP_
#define DPGRAD_ACCOUNTANT_HPP_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

#include "dpgrad/aggregate.hpp"

namespace dpgrad {

// Renyi orders used unless the caller supplies a grid: integers 2..256 plus
// {1.5, 1.75, 384, 512, 768, 1024}.
std::vector<double> default_order_grid();

// Same grid without the fractional orders; subsampled composition is only
// defined at integer orders here.
std::vector<double> integer_order_grid();

// Renyi divergence bound of a Gaussian sum release with the given l2
// sensitivity: s^2 * lambda / (2 sigma^2). Requires lambda > 1. sigma == 0
// throws InfiniteBudgetError: no finite order bounds the loss.
double gaussian_rdp(double sensitivity, double sigma, double lambda);

struct DpResult {
  double epsilon = 0.0;
  double lambda = 0.0;  // order attaining the minimum
};

// (epsilon, delta) from per-order divergence bounds:
// min over i of alphas[i] + ln(1/delta) / (orders[i] - 1).
DpResult rdp_to_dp(const std::vector<double>& orders, const std::vector<double>& alphas,
                   double delta);

// Largest round count T such that T vote aggregations (sensitivity
// 2 sqrt(k), noise sigma) still convert to at most epsilon_target at the
// given delta. Zero when even one round overshoots.
uint64_t budget_schedule(uint32_t k, double sigma, double delta, double epsilon_target,
                         const std::vector<double>& orders = default_order_grid());

// Probability that a fresh noise draw changes the released ternary outcome:
// 1 minus the product over coordinates of the probability of reproducing
// outcome[j] given the vote sums. Saturated tail evaluations (standardized
// argument beyond +-8) clamp to the limit; their count is reported through
// `saturated` when non-null.
double outcome_probability(const std::vector<int32_t>& votes, const TernaryGradient& outcome,
                           uint32_t teachers, double beta, double sigma,
                           uint32_t* saturated = nullptr);

struct DataDependentRdp {
  double alpha = 0.0;           // min(search result, data-independent bound)
  double alpha_uncapped = 0.0;  // raw search result (data-independent on fallback)
  bool fallback = false;        // no feasible moment pair existed
};

// Outcome-dependent divergence bound at order lambda for a vote aggregation
// with per-round sensitivity 2 sqrt(k) and noise sigma, given the outcome
// change probability q. The auxiliary orders (mu1, mu2) are searched on a
// 200-point log grid over (lambda, 1e6] with one local refinement pass.
DataDependentRdp data_dependent_rdp(double q, double lambda, uint32_t k, double sigma);

// Divergence bound of one Poisson-subsampled Gaussian step at integer order
// lambda >= 2 (sampling rate q, noise multiplier sigma_mult), via the
// binomial expansion of the sampled mixture. q = 0 gives 0; q = 1 reduces to
// the plain Gaussian bound lambda / (2 sigma_mult^2).
double sampled_gaussian_rdp(double q, double sigma_mult, double lambda);

// Additive per-order composition ledger with two tracks: data-independent
// and outcome-dependent (capped per order by the independent bound; the raw
// search value is kept separately so the uncapped curve can be reported).
class PrivacyLedger {
 public:
  explicit PrivacyLedger(double delta, std::vector<double> orders = default_order_grid());

  const std::vector<double>& orders() const { return orders_; }
  double delta() const { return delta_; }
  uint64_t rounds() const { return history_.size(); }

  // Plain Gaussian sum release; both tracks advance by the same bound.
  void record_gaussian_sum(double sensitivity, double sigma);

  // Vote aggregation with outcome change probability q_tilde.
  void record_vote_aggregation(uint32_t k, double sigma, double q_tilde);

  // Poisson-subsampled Gaussian step; requires an all-integer order grid.
  void record_sampled_gaussian(double q, double sigma_mult);

  DpResult epsilon_independent() const;
  DpResult epsilon_dependent() const;
  DpResult epsilon_dependent_uncapped() const;

  // Conversion if one more Gaussian-sum round were recorded; used by
  // harnesses to halt before overshooting a target.
  DpResult preview_gaussian_sum(double sensitivity, double sigma) const;

  struct RoundRecord {
    uint64_t round = 0;  // 1-based
    double epsilon_indep = 0.0;
    double epsilon_dep_uncapped = 0.0;
    double argmin_lambda = 0.0;  // order attaining the independent minimum
    double q_tilde = 0.0;        // NaN when the event has no outcome probability
  };
  const std::vector<RoundRecord>& history() const { return history_; }

  // One JSON object per line: {"round":..., "epsilon_indep":...,
  // "epsilon_dep_uncapped":..., "argmin_lambda":..., "q_tilde":...}.
  void export_jsonl(std::ostream& out) const;

 private:
  void push_history(double q_tilde);

  double delta_;
  std::vector<double> orders_;
  std::vector<double> indep_;
  std::vector<double> dep_;
  std::vector<double> dep_uncapped_;
  std::vector<RoundRecord> history_;
};

}  // namespace dpgrad

#endif  // DPGRAD_ACCOUNTANT_HPP_
