#include "dpgrad/convergence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "dpgrad/errors.hpp"

namespace dpgrad::convergence {

namespace {

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double logit_loss(double u, int32_t y) {
  return std::max(u, 0.0) - static_cast<double>(y) * u + std::log1p(std::exp(-std::fabs(u)));
}

// lambda_max(X^T X) by power iteration; deterministic start vector.
double xtx_lambda_max(const std::vector<double>& xs, size_t n, uint32_t d) {
  std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d)));
  std::vector<double> xv(n), w(d);
  double lambda = 0.0;
  for (int it = 0; it < 500; ++it) {
    for (size_t i = 0; i < n; ++i) {
      const double* row = xs.data() + i * d;
      double s = 0.0;
      for (uint32_t j = 0; j < d; ++j) s += row[j] * v[j];
      xv[i] = s;
    }
    std::fill(w.begin(), w.end(), 0.0);
    for (size_t i = 0; i < n; ++i) {
      const double* row = xs.data() + i * d;
      for (uint32_t j = 0; j < d; ++j) w[j] += xv[i] * row[j];
    }
    double norm = 0.0;
    for (double c : w) norm += c * c;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    lambda = norm;
    for (uint32_t j = 0; j < d; ++j) v[j] = w[j] / norm;
  }
  return lambda;
}

void validate_step_config(const ConvergenceConfig& cfg, const Objective& obj) {
  if (cfg.dim != obj.dim || cfg.workers != obj.workers) {
    throw ConfigError("convergence: config does not match the objective shape");
  }
  if (cfg.k < 1 || cfg.k > cfg.dim) throw ConfigError("convergence: need 1 <= k <= dim");
  if (!(cfg.gamma > 0.0)) throw ConfigError("convergence: gamma must be > 0");
  if (!(cfg.clip_c > 0.0)) throw ConfigError("convergence: clip_c must be > 0");
  if (cfg.quantize && cfg.clip_c > 1.0) {
    throw ConfigError("convergence: quantization needs clip_c <= 1");
  }
  if (!(cfg.noise_a >= 0.0)) throw ConfigError("convergence: noise_a must be >= 0");
}

Objective build_objective(const ConvergenceConfig& cfg) {
  const uint64_t data_seed = derive_stream(cfg.seed, StreamTag::kData);
  if (cfg.objective == "quadratic") return make_quadratic_objective(cfg.dim, cfg.workers, data_seed);
  if (cfg.objective == "logistic") {
    return make_logistic_objective(cfg.dim, cfg.workers, cfg.shard, cfg.reg, data_seed);
  }
  throw ConfigError("convergence: objective must be 'quadratic' or 'logistic'");
}

struct StepHook {
  // Called once per worker per step with the raw worker gradient.
  virtual void on_worker_gradient(const DenseGradient& g) = 0;
  virtual ~StepHook() = default;
};

RunTrace run_loop(const ConvergenceConfig& cfg, const Objective& obj, StepHook* hook) {
  validate_step_config(cfg, obj);
  RunTrace trace;
  trace.cfg = cfg;
  trace.lipschitz = obj.lipschitz();

  Rng model_rng(derive_stream(cfg.seed, StreamTag::kModel));
  Rng dither_rng(derive_stream(cfg.seed, StreamTag::kSubsample));
  Rng noise_rng(derive_stream(cfg.seed, StreamTag::kNoise));

  std::vector<double> x(cfg.dim);
  for (double& c : x) c = model_rng.gaussian(1.0);
  trace.f_x0 = obj.value(x);
  trace.f_xstar = obj.value(objective_minimizer(obj));
  trace.probe.sigma_sq_coord.assign(cfg.dim, 0.0);

  DenseGradient grad(cfg.dim);
  std::vector<DenseGradient> worker(cfg.workers, DenseGradient(cfg.dim));
  for (uint32_t t = 0; t < cfg.iterations; ++t) {
    obj.global_gradient(x, grad);
    trace.grad_sq.push_back(l2_norm(grad) * l2_norm(grad));
    trace.grad_l1.push_back(l1_norm(grad));
    if (hook != nullptr) {
      for (uint32_t n = 0; n < cfg.workers; ++n) {
        obj.worker_gradient(n, x, worker[n]);
        hook->on_worker_gradient(worker[n]);
      }
    }
    x = update_rule_step(x, obj, cfg, dither_rng, noise_rng, &trace.probe);
  }
  trace.x_final = x;
  return trace;
}

}  // namespace

ConvergenceConfig ConvergenceConfig::from_config(const Config& cfg) {
  cfg.check_keys({"objective", "dim", "workers", "shard", "reg", "gamma", "clip_c", "k",
                  "noise_a", "quantize", "iterations", "seed"});
  ConvergenceConfig c;
  c.objective = cfg.get_string("objective", c.objective);
  c.dim = cfg.get_u32("dim", c.dim);
  c.workers = cfg.get_u32("workers", c.workers);
  c.shard = cfg.get_u64("shard", c.shard);
  c.reg = cfg.get_double("reg", c.reg);
  c.gamma = cfg.get_double("gamma", c.gamma);
  c.clip_c = cfg.get_double("clip_c", c.clip_c);
  c.k = cfg.get_u32("k", c.k);
  c.noise_a = cfg.get_double("noise_a", c.noise_a);
  c.quantize = cfg.get_bool("quantize", c.quantize);
  c.iterations = cfg.get_u32("iterations", c.iterations);
  c.seed = cfg.get_u64("seed", c.seed);
  return c;
}

Config ConvergenceConfig::to_config() const {
  Config c;
  char buf[64];
  const auto setd = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    c.set(key, buf);
  };
  c.set("objective", objective);
  c.set("dim", std::to_string(dim));
  c.set("workers", std::to_string(workers));
  c.set("shard", std::to_string(shard));
  setd("reg", reg);
  setd("gamma", gamma);
  setd("clip_c", clip_c);
  c.set("k", std::to_string(k));
  setd("noise_a", noise_a);
  c.set("quantize", quantize ? "true" : "false");
  c.set("iterations", std::to_string(iterations));
  c.set("seed", std::to_string(seed));
  return c;
}

double Objective::value(const std::vector<double>& x) const {
  if (kind == "quadratic") {
    double total = 0.0;
    for (uint32_t n = 0; n < workers; ++n) {
      const double* a = centers.data() + size_t{n} * dim;
      for (uint32_t j = 0; j < dim; ++j) {
        const double dmu = x[j] - a[j];
        total += 0.5 * dmu * dmu;
      }
    }
    return total / static_cast<double>(workers);
  }
  const size_t n_total = ys.size();
  double total = 0.0;
  for (size_t i = 0; i < n_total; ++i) {
    const double* row = xs.data() + i * dim;
    double u = 0.0;
    for (uint32_t j = 0; j < dim; ++j) u += row[j] * x[j];
    total += logit_loss(u, ys[i]);
  }
  double r2 = 0.0;
  for (double c : x) r2 += c * c;
  return total / static_cast<double>(n_total) + 0.5 * reg * r2;
}

void Objective::worker_gradient(uint32_t n, const std::vector<double>& x,
                                DenseGradient& out) const {
  if (n >= workers) throw ParameterError("objective: worker id out of range");
  out.assign(dim, 0.0);
  if (kind == "quadratic") {
    const double* a = centers.data() + size_t{n} * dim;
    for (uint32_t j = 0; j < dim; ++j) out[j] = x[j] - a[j];
    return;
  }
  const double inv = 1.0 / static_cast<double>(shard);
  for (size_t s = 0; s < shard; ++s) {
    const double* row = xs.data() + (size_t{n} * shard + s) * dim;
    double u = 0.0;
    for (uint32_t j = 0; j < dim; ++j) u += row[j] * x[j];
    const double err = (sigmoid(u) - static_cast<double>(ys[size_t{n} * shard + s])) * inv;
    for (uint32_t j = 0; j < dim; ++j) out[j] += err * row[j];
  }
  for (uint32_t j = 0; j < dim; ++j) out[j] += reg * x[j];
}

void Objective::global_gradient(const std::vector<double>& x, DenseGradient& out) const {
  out.assign(dim, 0.0);
  DenseGradient g(dim);
  for (uint32_t n = 0; n < workers; ++n) {
    worker_gradient(n, x, g);
    for (uint32_t j = 0; j < dim; ++j) out[j] += g[j];
  }
  const double inv = 1.0 / static_cast<double>(workers);
  for (uint32_t j = 0; j < dim; ++j) out[j] *= inv;
}

double Objective::lipschitz() const {
  if (kind == "quadratic") return 1.0;
  return xtx_lambda_max(xs, ys.size(), dim) / (4.0 * static_cast<double>(ys.size())) + reg;
}

Objective make_quadratic_objective(uint32_t dim, uint32_t workers, uint64_t seed) {
  if (dim < 1 || workers < 1) throw ConfigError("objective: need dim >= 1, workers >= 1");
  Objective obj;
  obj.kind = "quadratic";
  obj.dim = dim;
  obj.workers = workers;
  obj.centers.resize(size_t{workers} * dim);
  Rng rng(seed);
  for (double& c : obj.centers) c = rng.gaussian(1.0);
  return obj;
}

Objective make_logistic_objective(uint32_t dim, uint32_t workers, size_t shard, double reg,
                                  uint64_t seed) {
  if (dim < 1 || workers < 1 || shard < 1) {
    throw ConfigError("objective: need dim >= 1, workers >= 1, shard >= 1");
  }
  if (!(reg > 0.0)) throw ConfigError("objective: logistic needs reg > 0 for a finite optimum");
  Objective obj;
  obj.kind = "logistic";
  obj.dim = dim;
  obj.workers = workers;
  obj.shard = shard;
  obj.reg = reg;
  const size_t n = size_t{workers} * shard;
  obj.xs.resize(n * dim);
  obj.ys.resize(n);
  Rng rng(seed);
  std::vector<double> mu(dim);
  for (double& m : mu) m = rng.gaussian(0.5);
  for (size_t i = 0; i < n; ++i) {
    const int32_t label = static_cast<int32_t>(i % 2);
    const double s = label == 0 ? -1.0 : 1.0;
    for (uint32_t j = 0; j < dim; ++j) obj.xs[i * dim + j] = s * mu[j] + rng.gaussian(1.0);
    obj.ys[i] = label;
  }
  return obj;
}

std::vector<double> objective_minimizer(const Objective& obj) {
  if (obj.kind == "quadratic") {
    std::vector<double> xstar(obj.dim, 0.0);
    for (uint32_t n = 0; n < obj.workers; ++n) {
      const double* a = obj.centers.data() + size_t{n} * obj.dim;
      for (uint32_t j = 0; j < obj.dim; ++j) xstar[j] += a[j];
    }
    for (double& c : xstar) c /= static_cast<double>(obj.workers);
    return xstar;
  }
  // Strongly convex; plain descent at step 1/L converges linearly.
  const double step = 1.0 / obj.lipschitz();
  std::vector<double> x(obj.dim, 0.0);
  DenseGradient g(obj.dim);
  for (int it = 0; it < 500000; ++it) {
    obj.global_gradient(x, g);
    if (linf_norm(g) < 1e-13) break;
    for (uint32_t j = 0; j < obj.dim; ++j) x[j] -= step * g[j];
  }
  return x;
}

double measure_tau_k(const DenseGradient& g, uint32_t k) {
  if (k < 1) throw ParameterError("measure_tau_k: need k >= 1");
  const double norm = l2_norm(g);
  if (norm == 0.0) return 0.0;
  if (k >= g.size()) return 0.0;
  const IndexSet top = top_k_indices(g, k);
  double kept = 0.0;
  for (uint32_t j : top) kept += g[j] * g[j];
  const double res_sq = std::max(0.0, norm * norm - kept);
  return std::sqrt(res_sq) / norm;
}

std::vector<double> update_rule_step(const std::vector<double>& x, const Objective& obj,
                                     const ConvergenceConfig& cfg, Rng& dither_rng,
                                     Rng& noise_rng, StepProbe* probe) {
  validate_step_config(cfg, obj);
  const uint32_t d = cfg.dim;
  if (x.size() != d) throw ParameterError("update_rule_step: dimension mismatch");

  std::vector<DenseGradient> grads(cfg.workers);
  DenseGradient mean(d, 0.0);
  for (uint32_t n = 0; n < cfg.workers; ++n) {
    obj.worker_gradient(n, x, grads[n]);
    for (uint32_t j = 0; j < d; ++j) mean[j] += grads[n][j];
  }
  for (uint32_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(cfg.workers);

  if (probe != nullptr) {
    if (probe->sigma_sq_coord.size() != d) probe->sigma_sq_coord.assign(d, 0.0);
    for (uint32_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (uint32_t n = 0; n < cfg.workers; ++n) {
        const double dev = grads[n][j] - mean[j];
        acc += dev * dev;
      }
      acc /= static_cast<double>(cfg.workers);
      probe->sigma_sq_coord[j] = std::max(probe->sigma_sq_coord[j], acc);
    }
  }

  DenseGradient total(d, 0.0);
  for (uint32_t n = 0; n < cfg.workers; ++n) {
    const DenseGradient& g = grads[n];
    if (probe != nullptr) {
      const double nsq = l2_norm(g) * l2_norm(g);
      probe->m_sq_max = std::max(probe->m_sq_max, nsq);
      probe->tau_k_max = std::max(probe->tau_k_max, measure_tau_k(g, cfg.k));
    }
    const IndexSet top = top_k_indices(g, std::min<uint32_t>(cfg.k, d));
    double qvar = 0.0;
    for (uint32_t j : top) {
      const double v = std::clamp(g[j], -cfg.clip_c, cfg.clip_c);
      double q = v;
      if (cfg.quantize && v != 0.0) {
        const double mag = std::fabs(v);
        q = dither_rng.uniform() < mag ? (v > 0.0 ? 1.0 : -1.0) : 0.0;
        qvar += (q - v) * (q - v);
      }
      total[j] += q;
    }
    if (probe != nullptr && cfg.quantize) {
      probe->quant_var_max = std::max(probe->quant_var_max, qvar);
    }
  }

  if (cfg.noise_a > 0.0) {
    const double sd =
        std::sqrt(static_cast<double>(cfg.workers) * cfg.noise_a * static_cast<double>(cfg.k));
    for (uint32_t j = 0; j < d; ++j) total[j] += noise_rng.gaussian(sd);
  }

  std::vector<double> out(x);
  const double scale = cfg.gamma / static_cast<double>(cfg.workers);
  for (uint32_t j = 0; j < d; ++j) out[j] -= scale * total[j];
  return out;
}

RunTrace run_convergence(const ConvergenceConfig& cfg) {
  const Objective obj = build_objective(cfg);
  return run_loop(cfg, obj, nullptr);
}

namespace {

BoundReport bound_from_parts(const ConvergenceConfig& cfg, double lhs_mean, double m_sq,
                             double tau, double quant_var,
                             const std::vector<double>& sigma_sq, double init_gap, double t_count,
                             double lipschitz) {
  BoundReport rep;
  const double d = static_cast<double>(cfg.dim);
  const double k = static_cast<double>(cfg.k);
  const double m = std::sqrt(m_sq);
  double s_l1 = 0.0, s_sq = 0.0;
  for (double v : sigma_sq) {
    s_l1 += std::sqrt(v);
    s_sq += v;
  }
  const double s_l2 = std::sqrt(s_sq);

  rep.tau_k = tau;
  rep.m_bound = m;
  rep.sigma_l2 = s_l2;
  rep.sigma_l1 = s_l1;
  rep.quant_var = quant_var;
  rep.lipschitz = lipschitz;
  rep.lhs = lhs_mean;
  rep.term_compression = std::min(tau * m_sq, cfg.clip_c * (d - k) * m);
  rep.term_noise = lipschitz * cfg.gamma * cfg.noise_a * k;
  rep.term_init = init_gap / (t_count * cfg.gamma);
  rep.term_variance = std::max(s_sq + s_l2 * m, 2.0 * s_l1);
  const double cap = std::min(cfg.clip_c * cfg.clip_c, m_sq);
  rep.term_quant = cfg.quantize ? 2.0 * lipschitz * cfg.gamma * (quant_var + cap)
                                : lipschitz * cfg.gamma * cap;
  rep.rhs = rep.term_compression + rep.term_noise + rep.term_init + rep.term_variance +
            rep.term_quant;
  rep.complete = std::isfinite(rep.lhs) && std::isfinite(rep.rhs);
  rep.pass = rep.complete && rep.lhs <= rep.rhs;
  return rep;
}

double trace_lhs(const RunTrace& trace) {
  double acc = 0.0;
  for (size_t t = 0; t < trace.grad_sq.size(); ++t) {
    acc += std::min(trace.grad_sq[t], trace.grad_l1[t]);
  }
  acc /= static_cast<double>(trace.grad_sq.size());
  return std::min(trace.cfg.clip_c, 1.0) / (static_cast<double>(trace.cfg.dim) + 2.0) * acc;
}

bool trace_complete(const RunTrace& trace) {
  if (trace.grad_sq.empty() || trace.grad_sq.size() != trace.grad_l1.size()) return false;
  if (trace.probe.sigma_sq_coord.size() != trace.cfg.dim) return false;
  for (double v : trace.grad_sq)
    if (!std::isfinite(v)) return false;
  for (double v : trace.probe.sigma_sq_coord)
    if (!std::isfinite(v)) return false;
  return std::isfinite(trace.f_x0) && std::isfinite(trace.f_xstar) &&
         std::isfinite(trace.probe.m_sq_max) && std::isfinite(trace.lipschitz);
}

}  // namespace

BoundReport verify_bound(const RunTrace& trace) {
  if (!trace_complete(trace)) {
    BoundReport rep;
    rep.complete = false;
    rep.pass = false;
    return rep;
  }
  return bound_from_parts(trace.cfg, trace_lhs(trace), trace.probe.m_sq_max,
                          trace.probe.tau_k_max, trace.probe.quant_var_max,
                          trace.probe.sigma_sq_coord, trace.f_x0 - trace.f_xstar,
                          static_cast<double>(trace.grad_sq.size()), trace.lipschitz);
}

BoundReport verify_bound(const std::vector<RunTrace>& traces) {
  if (traces.empty()) {
    BoundReport rep;
    return rep;
  }
  double lhs_acc = 0.0, m_sq = 0.0, tau = 0.0, qv = 0.0, gap = 0.0, lip = 0.0;
  size_t t_min = traces.front().grad_sq.size();
  std::vector<double> sigma_sq(traces.front().cfg.dim, 0.0);
  for (const auto& tr : traces) {
    if (!trace_complete(tr) || tr.cfg.dim != traces.front().cfg.dim) {
      BoundReport rep;
      return rep;
    }
    lhs_acc += trace_lhs(tr);
    m_sq = std::max(m_sq, tr.probe.m_sq_max);
    tau = std::max(tau, tr.probe.tau_k_max);
    qv = std::max(qv, tr.probe.quant_var_max);
    gap = std::max(gap, tr.f_x0 - tr.f_xstar);
    lip = std::max(lip, tr.lipschitz);
    t_min = std::min(t_min, tr.grad_sq.size());
    for (uint32_t j = 0; j < sigma_sq.size(); ++j) {
      sigma_sq[j] = std::max(sigma_sq[j], tr.probe.sigma_sq_coord[j]);
    }
  }
  return bound_from_parts(traces.front().cfg, lhs_acc / static_cast<double>(traces.size()), m_sq,
                          tau, qv, sigma_sq, gap, static_cast<double>(t_min), lip);
}

std::string BoundReport::to_json() const {
  nlohmann::json j{{"complete", complete},
                   {"pass", pass},
                   {"lhs", lhs},
                   {"rhs", rhs},
                   {"term_compression", term_compression},
                   {"term_noise", term_noise},
                   {"term_init", term_init},
                   {"term_variance", term_variance},
                   {"term_quant", term_quant},
                   {"tau_k", tau_k},
                   {"m_bound", m_bound},
                   {"sigma_l2", sigma_l2},
                   {"sigma_l1", sigma_l1},
                   {"quant_var", quant_var},
                   {"lipschitz", lipschitz}};
  return j.dump();
}

TauProfile weibull_tau_profile(double rho1, double rho2, uint32_t d, uint32_t trials,
                               uint64_t seed) {
  if (!(rho1 > 0.0)) throw ParameterError("weibull: need rho1 > 0");
  if (!(rho2 > 0.0) || rho2 >= 1.0) throw ParameterError("weibull: need 0 < rho2 < 1");
  if (d < 1 || trials < 1) throw ParameterError("weibull: need d >= 1, trials >= 1");

  TauProfile prof;
  const uint32_t points = std::min<uint32_t>(25, d);
  for (uint32_t j = 1; j <= points; ++j) {
    const uint32_t k = std::max<uint32_t>(
        1, static_cast<uint32_t>(std::llround(static_cast<double>(j) * d / points)));
    if (prof.ks.empty() || prof.ks.back() != k) prof.ks.push_back(k);
  }
  if (prof.ks.back() != d) prof.ks.push_back(d);

  prof.mean_tau.assign(prof.ks.size(), 0.0);
  Rng rng(seed);
  DenseGradient g(d);
  for (uint32_t t = 0; t < trials; ++t) {
    for (uint32_t i = 0; i < d; ++i) {
      // Inverse-CDF Weibull draw; one uniform per coordinate.
      const double u = rng.uniform();
      const double mag = rho1 * std::pow(-std::log1p(-u), 1.0 / rho2);
      g[i] = rng.bernoulli(0.5) ? mag : -mag;
    }
    for (size_t ki = 0; ki < prof.ks.size(); ++ki) {
      prof.mean_tau[ki] += measure_tau_k(g, prof.ks[ki]);
    }
  }
  for (double& v : prof.mean_tau) v /= static_cast<double>(trials);
  prof.reference.reserve(prof.ks.size());
  for (uint32_t k : prof.ks) {
    prof.reference.push_back(
        std::exp(-std::pow(static_cast<double>(k) / (rho1 * d), rho2)) - std::exp(-1.0));
  }
  return prof;
}

std::vector<KSweepEntry> run_k_sweep(const ConvergenceConfig& base,
                                     const std::vector<uint32_t>& ks) {
  if (ks.empty()) throw ParameterError("k-sweep: need at least one k");
  const Objective obj = build_objective(base);

  struct PoolHook : StepHook {
    const std::vector<uint32_t>* ks;
    std::vector<double> tau_pool;  // max over gradients, per sweep k
    double m_sq_pool = 0.0;
    void on_worker_gradient(const DenseGradient& g) override {
      const double nsq = l2_norm(g) * l2_norm(g);
      m_sq_pool = std::max(m_sq_pool, nsq);
      for (size_t i = 0; i < ks->size(); ++i) {
        tau_pool[i] = std::max(tau_pool[i], measure_tau_k(g, (*ks)[i]));
      }
    }
  } hook;
  hook.ks = &ks;
  hook.tau_pool.assign(ks.size(), 0.0);

  std::vector<BoundReport> reports;
  for (uint32_t k : ks) {
    ConvergenceConfig cfg = base;
    cfg.k = k;
    reports.push_back(verify_bound(run_loop(cfg, obj, &hook)));
  }

  const double m = std::sqrt(hook.m_sq_pool);
  std::vector<KSweepEntry> out;
  for (size_t i = 0; i < ks.size(); ++i) {
    KSweepEntry e;
    e.k = ks[i];
    e.term_noise = reports[i].lipschitz * base.gamma * base.noise_a * static_cast<double>(ks[i]);
    e.term_compression =
        std::min(hook.tau_pool[i] * hook.m_sq_pool,
                 base.clip_c * static_cast<double>(base.dim - ks[i]) * m);
    e.lhs = reports[i].lhs;
    e.rhs = reports[i].rhs;
    e.pass = reports[i].pass;
    out.push_back(e);
  }
  return out;
}

}  // namespace dpgrad::convergence
