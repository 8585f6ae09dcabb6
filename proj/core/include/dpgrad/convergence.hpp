#ifndef DPGRAD_CONVERGENCE_HPP_
#define DPGRAD_CONVERGENCE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "dpgrad/config.hpp"
#include "dpgrad/gradient.hpp"
#include "dpgrad/rng.hpp"

namespace dpgrad::convergence {

struct ConvergenceConfig {
  std::string objective = "quadratic";  // "quadratic" or "logistic"
  uint32_t dim = 50;
  uint32_t workers = 8;
  size_t shard = 16;     // per-worker samples (logistic only)
  double reg = 1e-3;     // ridge term making the logistic optimum finite
  double gamma = 0.05;
  double clip_c = 1.0;   // coordinate clip; quantization requires clip_c <= 1
  uint32_t k = 10;       // retained coordinates per worker
  double noise_a = 0.5;  // per-worker noise variance is noise_a * k
  bool quantize = true;
  uint32_t iterations = 400;
  uint64_t seed = 1;

  static ConvergenceConfig from_config(const Config& cfg);
  Config to_config() const;
};

// Finite-sum objective f(x) = (1/N) sum_n F_n(x) with exact per-worker
// gradients. Quadratic: F_n = 0.5 ||x - a_n||^2. Logistic: ridge-regularized
// binary cross-entropy on the worker's shard.
struct Objective {
  std::string kind;
  uint32_t dim = 0;
  uint32_t workers = 0;
  size_t shard = 0;
  double reg = 0.0;
  std::vector<double> centers;  // quadratic: workers x dim
  std::vector<double> xs;       // logistic: (workers*shard) x dim, shard-major
  std::vector<int32_t> ys;

  double value(const std::vector<double>& x) const;
  void worker_gradient(uint32_t n, const std::vector<double>& x, DenseGradient& out) const;
  void global_gradient(const std::vector<double>& x, DenseGradient& out) const;
  // Exact largest Hessian eigenvalue bound: 1 for the quadratic, and
  // lambda_max(X^T X) / (4 n) + reg for the logistic.
  double lipschitz() const;
};

Objective make_quadratic_objective(uint32_t dim, uint32_t workers, uint64_t seed);
Objective make_logistic_objective(uint32_t dim, uint32_t workers, size_t shard, double reg,
                                  uint64_t seed);

// Minimizer and minimum value; closed form for the quadratic, high-precision
// full-batch descent for the (strongly convex) regularized logistic.
std::vector<double> objective_minimizer(const Objective& obj);

// Per-step instrumentation for the bound constants (maxima over everything
// seen so far; variance accumulators per coordinate).
struct StepProbe {
  double m_sq_max = 0.0;        // max_n,t ||F_n'(x_t)||^2
  double tau_k_max = 0.0;       // max_n,t measured residual ratio
  double quant_var_max = 0.0;   // max_n,t ||Q(v) - v||^2
  std::vector<double> sigma_sq_coord;  // max_t mean_n (F_n' - grad f)_i^2
};

// One application of the compressed, clipped, optionally quantized and
// noised distributed update. Bernoulli sign quantization keeps zeros at
// zero and is unbiased on [-1, 1].
std::vector<double> update_rule_step(const std::vector<double>& x, const Objective& obj,
                                     const ConvergenceConfig& cfg, Rng& dither_rng,
                                     Rng& noise_rng, StepProbe* probe = nullptr);

// Residual energy ratio ||g - top_k(g)|| / ||g||; 0 for a zero gradient.
double measure_tau_k(const DenseGradient& g, uint32_t k);

struct RunTrace {
  ConvergenceConfig cfg;
  double f_x0 = 0.0;
  double f_xstar = 0.0;
  double lipschitz = 0.0;
  std::vector<double> grad_sq;  // ||grad f(x_t)||^2, t = 0..T-1
  std::vector<double> grad_l1;
  StepProbe probe;
  std::vector<double> x_final;
};

RunTrace run_convergence(const ConvergenceConfig& cfg);

struct BoundReport {
  bool complete = false;
  bool pass = false;
  double lhs = 0.0;
  double rhs = 0.0;
  double term_compression = 0.0;  // min{tau_k M^2, c (d-k) M}
  double term_noise = 0.0;        // L gamma A k
  double term_init = 0.0;         // (f(x0) - f(x*)) / (T gamma)
  double term_variance = 0.0;     // max{||s||^2 + ||s|| M, 2 ||s||_1}
  double term_quant = 0.0;  // on: 2 L gamma (qv + min{c^2,M^2}); off: L gamma min{c^2,M^2}
  double tau_k = 0.0;
  double m_bound = 0.0;           // M
  double sigma_l2 = 0.0;
  double sigma_l1 = 0.0;
  double quant_var = 0.0;
  double lipschitz = 0.0;
  std::string to_json() const;
};

// Single-run check; expectations are within-run time averages.
BoundReport verify_bound(const RunTrace& trace);
// Seed-averaged LHS against constants pooled (maxed) across traces.
BoundReport verify_bound(const std::vector<RunTrace>& traces);

struct TauProfile {
  std::vector<uint32_t> ks;
  std::vector<double> mean_tau;
  std::vector<double> reference;  // exp(-(k / (rho1 d))^rho2) - exp(-1)
};

// Mean measured residual ratio for gradients with i.i.d. Weibull(rho1 scale,
// rho2 shape) magnitudes and random signs; qualitative companion curve only.
TauProfile weibull_tau_profile(double rho1, double rho2, uint32_t d, uint32_t trials,
                               uint64_t seed);

struct KSweepEntry {
  uint32_t k = 0;
  double term_noise = 0.0;
  double term_compression = 0.0;  // pooled constants, comparable across k
  double lhs = 0.0;
  double rhs = 0.0;
  bool pass = false;
};

// Runs the mechanism across a k grid; compression terms are computed from
// constants pooled over the whole sweep so the k-tradeoff is comparable.
std::vector<KSweepEntry> run_k_sweep(const ConvergenceConfig& base,
                                     const std::vector<uint32_t>& ks);

}  // namespace dpgrad::convergence

#endif  // DPGRAD_CONVERGENCE_HPP_
