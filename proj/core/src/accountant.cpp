#include "dpgrad/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dpgrad/errors.hpp"

namespace dpgrad {

namespace {

constexpr double kMuUpper = 1e6;
constexpr int kMuPoints = 200;
constexpr double kTailCut = 8.0;  // standardized Gaussian argument saturation

double lse2(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

// Standard normal CDF with tail clamping: past +-kTailCut the value is the
// limit and the event is counted so callers can see the approximation.
double phi_clamped(double z, uint32_t* saturated) {
  if (z > kTailCut) {
    if (saturated) ++*saturated;
    return 1.0;
  }
  if (z < -kTailCut) {
    if (saturated) ++*saturated;
    return 0.0;
  }
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

// Log-spaced auxiliary-order grid over (lo, hi] with cached per-point
// quantities; alpha(mu) = coef * mu where coef = 2k / sigma^2.
struct MuGrid {
  std::vector<double> mu;
  std::vector<double> alpha;
  std::vector<double> lnratio;  // ln(mu / (mu - 1))
  std::vector<double> inv_mu1;  // 1 / (mu - 1)
};

MuGrid make_grid(double lo, double hi, double coef, int points) {
  MuGrid g;
  if (!(lo < hi)) return g;
  const double llo = std::log(lo), lhi = std::log(hi);
  g.mu.resize(points);
  g.alpha.resize(points);
  g.lnratio.resize(points);
  g.inv_mu1.resize(points);
  for (int i = 0; i < points; ++i) {
    const double f = points == 1 ? 1.0 : static_cast<double>(i) / (points - 1);
    const double mu = std::exp(llo + f * (lhi - llo));
    g.mu[i] = mu;
    g.alpha[i] = coef * mu;
    g.lnratio[i] = -std::log1p(-1.0 / mu);
    g.inv_mu1[i] = 1.0 / (mu - 1.0);
  }
  return g;
}

struct DepSearchOutcome {
  double value = std::numeric_limits<double>::infinity();
  bool found = false;
  int i1 = -1;  // mu1 grid index
  int i2 = -1;  // mu2 grid index
};

// Minimizes the two-moment bound over (mu1 in g1, mu2 in g2). The bound is
// monotone in each factor, so for every mu2 only the feasibility cutoff and
// the suffix-minimal B term matter; that keeps the scan O(n log n).
DepSearchOutcome dep_search(const MuGrid& g1, const MuGrid& g2, double q, double lnq,
                            double lambda) {
  DepSearchOutcome best;
  if (g1.mu.empty() || g2.mu.empty()) return best;
  const size_t n1 = g1.mu.size();
  std::vector<double> lnb(n1);
  for (size_t i = 0; i < n1; ++i) lnb[i] = g1.alpha[i] - lnq * g1.inv_mu1[i];
  std::vector<double> suffix_min(n1);
  std::vector<int> suffix_arg(n1);
  suffix_min[n1 - 1] = lnb[n1 - 1];
  suffix_arg[n1 - 1] = static_cast<int>(n1 - 1);
  for (size_t i = n1 - 1; i-- > 0;) {
    if (lnb[i] <= suffix_min[i + 1]) {
      suffix_min[i] = lnb[i];
      suffix_arg[i] = static_cast<int>(i);
    } else {
      suffix_min[i] = suffix_min[i + 1];
      suffix_arg[i] = suffix_arg[i + 1];
    }
  }
  const double ln1mq = std::log1p(-q);
  for (size_t j = 0; j < g2.mu.size(); ++j) {
    const double mu2 = g2.mu[j];
    const double a2 = g2.alpha[j];
    const double v = lnq + a2;
    // The first factor needs (q e^{a2})^{(mu2-1)/mu2} < 1; alpha grows with
    // mu, so once violated every later grid point is too.
    if (v >= 0.0) break;
    const double ex = std::exp((1.0 - 1.0 / mu2) * v);
    const double lna = ln1mq - std::log1p(-ex);
    const double t = ((mu2 - 1.0) * a2 - lnq) / mu2 - g2.lnratio[j];
    if (t <= 0.0) continue;  // no mu1 satisfies the moment inequality
    const double mu1_min = 1.0 / (-std::expm1(-t));
    const auto it = std::lower_bound(g1.mu.begin(), g1.mu.end(), mu1_min);
    if (it == g1.mu.end()) continue;
    const size_t idx = static_cast<size_t>(it - g1.mu.begin());
    const double cand =
        lse2(ln1mq + (lambda - 1.0) * lna, lnq + (lambda - 1.0) * suffix_min[idx]) /
        (lambda - 1.0);
    if (cand < best.value) {
      best.value = cand;
      best.found = true;
      best.i1 = suffix_arg[idx];
      best.i2 = static_cast<int>(j);
    }
  }
  return best;
}

DataDependentRdp dep_bound(double q, double lambda, double coef, const MuGrid& grid) {
  DataDependentRdp out;
  const double indep = coef * lambda;
  const double lnq = std::log(q);
  DepSearchOutcome first = dep_search(grid, grid, q, lnq, lambda);
  if (first.found) {
    // One local refinement around the incumbent on both axes.
    const size_t n = grid.mu.size();
    const double lo1 = grid.mu[first.i1 > 0 ? first.i1 - 1 : 0];
    const double hi1 = grid.mu[std::min<size_t>(first.i1 + 1, n - 1)];
    const double lo2 = grid.mu[first.i2 > 0 ? first.i2 - 1 : 0];
    const double hi2 = grid.mu[std::min<size_t>(first.i2 + 1, n - 1)];
    const MuGrid r1 = make_grid(lo1, hi1, coef, kMuPoints);
    const MuGrid r2 = make_grid(lo2, hi2, coef, kMuPoints);
    const DepSearchOutcome refined = dep_search(r1, r2, q, lnq, lambda);
    const double raw = std::min(first.value, refined.found ? refined.value : first.value);
    out.alpha_uncapped = std::max(0.0, raw);
    out.alpha = std::min(indep, out.alpha_uncapped);
    out.fallback = false;
  } else {
    out.alpha_uncapped = indep;
    out.alpha = indep;
    out.fallback = true;
  }
  return out;
}

void check_delta(double delta) {
  if (!(delta > 0.0) || !(delta < 1.0)) throw ParameterError("delta must be in (0, 1)");
}

void check_sigma_positive(double sigma, const char* who) {
  if (std::isnan(sigma) || sigma < 0.0) throw ParameterError(std::string(who) + ": sigma must be >= 0");
  if (sigma == 0.0) throw InfiniteBudgetError(std::string(who) + ": sigma = 0 has unbounded loss");
}

}  // namespace

std::vector<double> default_order_grid() {
  std::vector<double> g = {1.5, 1.75};
  for (int i = 2; i <= 256; ++i) g.push_back(i);
  g.insert(g.end(), {384.0, 512.0, 768.0, 1024.0});
  return g;
}

std::vector<double> integer_order_grid() {
  std::vector<double> g;
  for (int i = 2; i <= 256; ++i) g.push_back(i);
  g.insert(g.end(), {384.0, 512.0, 768.0, 1024.0});
  return g;
}

double gaussian_rdp(double sensitivity, double sigma, double lambda) {
  if (!(sensitivity >= 0.0) || !std::isfinite(sensitivity)) {
    throw ParameterError("gaussian_rdp: sensitivity must be >= 0");
  }
  if (!(lambda > 1.0) || !std::isfinite(lambda)) {
    throw ParameterError("gaussian_rdp: lambda must be > 1");
  }
  check_sigma_positive(sigma, "gaussian_rdp");
  return sensitivity * sensitivity * lambda / (2.0 * sigma * sigma);
}

DpResult rdp_to_dp(const std::vector<double>& orders, const std::vector<double>& alphas,
                   double delta) {
  check_delta(delta);
  if (orders.empty() || orders.size() != alphas.size()) {
    throw ValidationError("rdp_to_dp: orders/alphas size mismatch");
  }
  const double lg = std::log(1.0 / delta);
  DpResult best{std::numeric_limits<double>::infinity(), 0.0};
  for (size_t i = 0; i < orders.size(); ++i) {
    if (!(orders[i] > 1.0)) throw ParameterError("rdp_to_dp: orders must be > 1");
    if (!std::isfinite(alphas[i]) || alphas[i] < 0.0) {
      throw ValidationError("rdp_to_dp: alphas must be finite and >= 0");
    }
    const double eps = alphas[i] + lg / (orders[i] - 1.0);
    if (eps < best.epsilon) best = {eps, orders[i]};
  }
  return best;
}

uint64_t budget_schedule(uint32_t k, double sigma, double delta, double epsilon_target,
                         const std::vector<double>& orders) {
  if (k < 1) throw ParameterError("budget_schedule: k must be >= 1");
  check_delta(delta);
  check_sigma_positive(sigma, "budget_schedule");
  if (!(epsilon_target > 0.0)) throw ParameterError("budget_schedule: epsilon_target must be > 0");
  const double s = sum_sensitivity(k);
  std::vector<double> per_round(orders.size());
  for (size_t i = 0; i < orders.size(); ++i) per_round[i] = gaussian_rdp(s, sigma, orders[i]);
  std::vector<double> alphas(orders.size());
  const auto eps_at = [&](uint64_t t) {
    for (size_t i = 0; i < orders.size(); ++i) alphas[i] = per_round[i] * static_cast<double>(t);
    return rdp_to_dp(orders, alphas, delta).epsilon;
  };
  if (eps_at(1) > epsilon_target) return 0;
  uint64_t hi = 1;
  while (eps_at(hi) <= epsilon_target && hi < (1ull << 62)) hi <<= 1;
  uint64_t lo = hi >> 1;  // eps_at(lo) <= target < eps_at(hi)
  while (hi - lo > 1) {
    const uint64_t mid = lo + (hi - lo) / 2;
    if (eps_at(mid) <= epsilon_target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

double outcome_probability(const std::vector<int32_t>& votes, const TernaryGradient& outcome,
                           uint32_t teachers, double beta, double sigma, uint32_t* saturated) {
  validate_ternary(outcome);
  if (votes.size() != outcome.dim) throw ValidationError("outcome_probability: dim mismatch");
  if (teachers < 1) throw ParameterError("outcome_probability: teachers must be >= 1");
  if (!(beta > 0.0) || beta > 1.0) throw ParameterError("outcome_probability: need 0 < beta <= 1");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("outcome_probability: sigma must be > 0");
  }
  const auto n = static_cast<int32_t>(teachers);
  const double bn = beta * static_cast<double>(teachers);
  double log_match = 0.0;  // ln Pr[noise reproduces the outcome]
  for (uint32_t j = 0; j < outcome.dim; ++j) {
    if (votes[j] < -n || votes[j] > n) {
      throw ValidationError("outcome_probability: vote sum outside [-N, N]");
    }
    const double f = static_cast<double>(votes[j]);
    double p = 0.0;
    if (outcome.values[j] == 1) {
      p = phi_clamped((f - bn) / sigma, saturated);
    } else if (outcome.values[j] == -1) {
      p = phi_clamped(-(f + bn) / sigma, saturated);
    } else {
      p = phi_clamped((bn - f) / sigma, saturated) - phi_clamped(-(bn + f) / sigma, saturated);
      p = std::max(p, 0.0);
    }
    log_match += std::log(p);
  }
  return std::clamp(-std::expm1(log_match), 0.0, 1.0);
}

DataDependentRdp data_dependent_rdp(double q, double lambda, uint32_t k, double sigma) {
  if (!(q > 0.0) || q > 1.0) throw ParameterError("data_dependent_rdp: need 0 < q <= 1");
  if (!(lambda > 1.0) || !std::isfinite(lambda)) {
    throw ParameterError("data_dependent_rdp: lambda must be > 1");
  }
  if (k < 1) throw ParameterError("data_dependent_rdp: k must be >= 1");
  check_sigma_positive(sigma, "data_dependent_rdp");
  const double coef = 2.0 * static_cast<double>(k) / (sigma * sigma);
  const MuGrid grid = make_grid(lambda * (1.0 + 1e-9), kMuUpper, coef, kMuPoints);
  return dep_bound(q, lambda, coef, grid);
}

double sampled_gaussian_rdp(double q, double sigma_mult, double lambda) {
  if (!(q >= 0.0) || q > 1.0) throw ParameterError("sampled_gaussian_rdp: need 0 <= q <= 1");
  if (!(lambda >= 2.0) || std::floor(lambda) != lambda) {
    throw ParameterError("sampled_gaussian_rdp: lambda must be an integer >= 2");
  }
  check_sigma_positive(sigma_mult, "sampled_gaussian_rdp");
  if (q == 0.0) return 0.0;
  const double s2 = sigma_mult * sigma_mult;
  if (q == 1.0) return lambda / (2.0 * s2);
  const int n = static_cast<int>(lambda);
  const double lnq = std::log(q), ln1mq = std::log1p(-q);
  double acc = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= n; ++i) {
    const double lc = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0);
    const double term = lc + i * lnq + (n - i) * ln1mq +
                        (static_cast<double>(i) * i - i) / (2.0 * s2);
    acc = lse2(acc, term);
  }
  return std::max(0.0, acc / (lambda - 1.0));
}

PrivacyLedger::PrivacyLedger(double delta, std::vector<double> orders)
    : delta_(delta), orders_(std::move(orders)) {
  check_delta(delta_);
  if (orders_.empty()) throw ParameterError("ledger: empty order grid");
  for (double o : orders_) {
    if (!(o > 1.0) || !std::isfinite(o)) throw ParameterError("ledger: orders must be > 1");
  }
  indep_.assign(orders_.size(), 0.0);
  dep_.assign(orders_.size(), 0.0);
  dep_uncapped_.assign(orders_.size(), 0.0);
}

void PrivacyLedger::record_gaussian_sum(double sensitivity, double sigma) {
  for (size_t i = 0; i < orders_.size(); ++i) {
    const double a = gaussian_rdp(sensitivity, sigma, orders_[i]);
    indep_[i] += a;
    dep_[i] += a;
    dep_uncapped_[i] += a;
  }
  push_history(std::numeric_limits<double>::quiet_NaN());
}

void PrivacyLedger::record_vote_aggregation(uint32_t k, double sigma, double q_tilde) {
  if (!(q_tilde >= 0.0) || q_tilde > 1.0) {
    throw ParameterError("ledger: q_tilde must be in [0, 1]");
  }
  check_sigma_positive(sigma, "ledger");
  // A fully saturated outcome probability of 0 is a tail artifact; the
  // bound's domain is (0, 1].
  const double q = std::max(q_tilde, 1e-300);
  const double coef = 2.0 * static_cast<double>(k) / (sigma * sigma);
  for (size_t i = 0; i < orders_.size(); ++i) {
    const double lambda = orders_[i];
    const MuGrid grid = make_grid(lambda * (1.0 + 1e-9), kMuUpper, coef, kMuPoints);
    const DataDependentRdp d = dep_bound(q, lambda, coef, grid);
    indep_[i] += coef * lambda;
    dep_[i] += d.alpha;
    dep_uncapped_[i] += d.alpha_uncapped;
  }
  push_history(q_tilde);
}

void PrivacyLedger::record_sampled_gaussian(double q, double sigma_mult) {
  for (double o : orders_) {
    if (std::floor(o) != o) {
      throw ParameterError("ledger: subsampled events need an integer order grid");
    }
  }
  for (size_t i = 0; i < orders_.size(); ++i) {
    const double a = sampled_gaussian_rdp(q, sigma_mult, orders_[i]);
    indep_[i] += a;
    dep_[i] += a;
    dep_uncapped_[i] += a;
  }
  push_history(std::numeric_limits<double>::quiet_NaN());
}

DpResult PrivacyLedger::epsilon_independent() const { return rdp_to_dp(orders_, indep_, delta_); }

DpResult PrivacyLedger::epsilon_dependent() const { return rdp_to_dp(orders_, dep_, delta_); }

DpResult PrivacyLedger::epsilon_dependent_uncapped() const {
  return rdp_to_dp(orders_, dep_uncapped_, delta_);
}

DpResult PrivacyLedger::preview_gaussian_sum(double sensitivity, double sigma) const {
  std::vector<double> next(orders_.size());
  for (size_t i = 0; i < orders_.size(); ++i) {
    next[i] = indep_[i] + gaussian_rdp(sensitivity, sigma, orders_[i]);
  }
  return rdp_to_dp(orders_, next, delta_);
}

void PrivacyLedger::push_history(double q_tilde) {
  const DpResult indep = epsilon_independent();
  const DpResult unc = epsilon_dependent_uncapped();
  history_.push_back(RoundRecord{history_.size() + 1, indep.epsilon, unc.epsilon,
                                 indep.lambda, q_tilde});
}

void PrivacyLedger::export_jsonl(std::ostream& out) const {
  for (const auto& r : history_) {
    nlohmann::json line = {
        {"round", r.round},
        {"epsilon_indep", r.epsilon_indep},
        {"epsilon_dep_uncapped", r.epsilon_dep_uncapped},
        {"argmin_lambda", r.argmin_lambda},
        {"q_tilde", r.q_tilde},
    };
    out << line.dump() << "\n";
  }
}

}  // namespace dpgrad
