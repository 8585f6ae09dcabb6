#include "dpgrad/dpsgd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "dpgrad/compress.hpp"
#include "dpgrad/errors.hpp"
#include "dpgrad/parallel.hpp"
#include "dpgrad/version.hpp"

namespace dpgrad::dpsgd {

namespace {

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

// Stable binary cross-entropy from the logit.
double logit_loss(double u, int32_t y) {
  return std::max(u, 0.0) - static_cast<double>(y) * u + std::log1p(std::exp(-std::fabs(u)));
}

double logit(const Task& task, const std::vector<double>& theta, const double* x,
             std::vector<double>* hbuf) {
  const uint32_t d = task.feature_dim;
  if (task.hidden == 0) {
    double u = theta[d];
    for (uint32_t i = 0; i < d; ++i) u += theta[i] * x[i];
    return u;
  }
  const uint32_t h = task.hidden;
  const double* w1 = theta.data();
  const double* b1 = w1 + size_t{h} * d;
  const double* w2 = b1 + h;
  const double b2 = w2[h];
  double u = b2;
  if (hbuf != nullptr) hbuf->resize(h);
  for (uint32_t j = 0; j < h; ++j) {
    double a = b1[j];
    const double* row = w1 + size_t{j} * d;
    for (uint32_t i = 0; i < d; ++i) a += row[i] * x[i];
    const double t = std::tanh(a);
    if (hbuf != nullptr) (*hbuf)[j] = t;
    u += w2[j] * t;
  }
  return u;
}

void fill_features(size_t n, uint32_t dim, const std::vector<double>& mu, Rng& rng,
                   std::vector<double>& x, std::vector<int32_t>& y) {
  x.reserve(n * dim);
  y.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const int32_t label = static_cast<int32_t>(i % 2);
    const double s = label == 0 ? -1.0 : 1.0;
    for (uint32_t d = 0; d < dim; ++d) x.push_back(s * mu[d] + rng.gaussian(1.0));
    y.push_back(label);
  }
}

Task make_task(size_t n_train, size_t n_test, uint32_t feature_dim, uint32_t hidden,
               uint64_t seed) {
  if (feature_dim < 1 || n_train < 2 || n_test < 1) {
    throw ConfigError("task: need feature_dim >= 1, n_train >= 2, n_test >= 1");
  }
  Task t;
  t.name = hidden == 0 ? "logistic" : "mlp";
  t.feature_dim = feature_dim;
  t.hidden = hidden;
  Rng rng(seed);
  std::vector<double> mu(feature_dim);
  for (double& m : mu) m = rng.gaussian(0.8);
  fill_features(n_train, feature_dim, mu, rng, t.train_x, t.train_y);
  fill_features(n_test, feature_dim, mu, rng, t.test_x, t.test_y);
  return t;
}

}  // namespace

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::kClippedSgd: return "ClippedSGD";
    case Scenario::kTopkSgd: return "TopK_SGD";
    case Scenario::kTopkGmDp: return "TopK_GM_DP";
    case Scenario::kTopaggSgd: return "TopAgg_SGD";
    case Scenario::kGmDp: return "GM_DP";
  }
  throw InternalError("scenario_name: bad enum value");
}

Scenario scenario_from_name(const std::string& name) {
  for (Scenario s : {Scenario::kClippedSgd, Scenario::kTopkSgd, Scenario::kTopkGmDp,
                     Scenario::kTopaggSgd, Scenario::kGmDp}) {
    if (name == scenario_name(s)) return s;
  }
  throw ConfigError("scenario: unknown name '" + name + "'");
}

bool scenario_compresses(Scenario s) {
  return s == Scenario::kTopkSgd || s == Scenario::kTopkGmDp || s == Scenario::kTopaggSgd;
}

bool scenario_private(Scenario s) {
  return s == Scenario::kTopkGmDp || s == Scenario::kTopaggSgd || s == Scenario::kGmDp;
}

double scenario_noise_variance(Scenario s, double sigma, double clip_c, double k) {
  switch (s) {
    case Scenario::kClippedSgd:
    case Scenario::kTopkSgd: return 0.0;
    case Scenario::kTopkGmDp:
    case Scenario::kGmDp: return sigma * sigma * clip_c * clip_c;
    case Scenario::kTopaggSgd: return k * sigma * sigma * clip_c * clip_c;
  }
  throw InternalError("scenario_noise_variance: bad enum value");
}

SgdConfig SgdConfig::from_config(const Config& cfg) {
  cfg.check_keys({"batch", "lr", "sigma", "clip_c", "k", "epochs", "delta", "seed", "scenario",
                  "threads"});
  SgdConfig s;
  s.batch = cfg.get_u32("batch", s.batch);
  s.lr = cfg.get_double("lr", s.lr);
  s.sigma = cfg.get_double("sigma", s.sigma);
  s.clip_c = cfg.get_double("clip_c", s.clip_c);
  s.k = cfg.get_double("k", s.k);
  s.epochs = cfg.get_u32("epochs", s.epochs);
  s.delta = cfg.get_double("delta", s.delta);
  s.seed = cfg.get_u64("seed", s.seed);
  s.scenario = scenario_from_name(cfg.get_string("scenario", scenario_name(s.scenario)));
  s.threads = cfg.get_u32("threads", s.threads);
  if (s.batch < 1) throw ConfigError("dpsgd: batch must be >= 1");
  if (!(s.lr > 0.0)) throw ConfigError("dpsgd: lr must be > 0");
  if (!(s.sigma >= 0.0)) throw ConfigError("dpsgd: sigma must be >= 0");
  if (!(s.clip_c > 0.0)) throw ConfigError("dpsgd: clip_c must be > 0");
  if (!(s.k > 0.0) || s.k > 1.0) throw ConfigError("dpsgd: need 0 < k <= 1");
  return s;
}

Config SgdConfig::to_config() const {
  Config c;
  char buf[64];
  const auto setd = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    c.set(key, buf);
  };
  c.set("batch", std::to_string(batch));
  setd("lr", lr);
  setd("sigma", sigma);
  setd("clip_c", clip_c);
  setd("k", k);
  c.set("epochs", std::to_string(epochs));
  setd("delta", delta);
  c.set("seed", std::to_string(seed));
  c.set("scenario", scenario_name(scenario));
  c.set("threads", std::to_string(threads));
  return c;
}

uint32_t Task::param_dim() const {
  if (hidden == 0) return feature_dim + 1;
  return hidden * feature_dim + hidden + hidden + 1;
}

std::vector<double> Task::init_params(Rng& rng) const {
  std::vector<double> theta(param_dim(), 0.0);
  if (hidden > 0) {
    const double s1 = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (uint32_t i = 0; i < hidden * feature_dim; ++i) theta[i] = rng.gaussian(s1);
    for (uint32_t i = 0; i < hidden; ++i) theta[size_t{hidden} * feature_dim + hidden + i] = rng.gaussian(s2);
  }
  return theta;
}

Task make_logistic_task(size_t n_train, size_t n_test, uint32_t feature_dim, uint64_t seed) {
  return make_task(n_train, n_test, feature_dim, 0, seed);
}

Task make_mlp_task(size_t n_train, size_t n_test, uint32_t feature_dim, uint32_t hidden,
                   uint64_t seed) {
  if (hidden < 1) throw ConfigError("task: mlp needs hidden >= 1");
  return make_task(n_train, n_test, feature_dim, hidden, seed);
}

double task_loss(const Task& task, const std::vector<double>& theta) {
  double total = 0.0;
  for (size_t i = 0; i < task.train_size(); ++i) {
    const double u = logit(task, theta, task.train_x.data() + i * task.feature_dim, nullptr);
    total += logit_loss(u, task.train_y[i]);
  }
  return total / static_cast<double>(task.train_size());
}

double task_accuracy(const Task& task, const std::vector<double>& theta) {
  size_t correct = 0;
  for (size_t i = 0; i < task.test_y.size(); ++i) {
    const double u = logit(task, theta, task.test_x.data() + i * task.feature_dim, nullptr);
    if ((u >= 0.0 ? 1 : 0) == task.test_y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(task.test_y.size());
}

void task_sample_gradient(const Task& task, const std::vector<double>& theta, size_t index,
                          DenseGradient& out) {
  const uint32_t d = task.feature_dim;
  const double* x = task.train_x.data() + index * d;
  out.assign(theta.size(), 0.0);
  std::vector<double> hbuf;
  const double u = logit(task, theta, x, &hbuf);
  const double err = sigmoid(u) - static_cast<double>(task.train_y[index]);
  if (task.hidden == 0) {
    for (uint32_t i = 0; i < d; ++i) out[i] = err * x[i];
    out[d] = err;
    return;
  }
  const uint32_t h = task.hidden;
  const double* w2 = theta.data() + size_t{h} * d + h;
  double* gw1 = out.data();
  double* gb1 = gw1 + size_t{h} * d;
  double* gw2 = gb1 + h;
  gw2[h] = err;  // bias of the output unit
  for (uint32_t j = 0; j < h; ++j) {
    gw2[j] = err * hbuf[j];
    const double da = err * w2[j] * (1.0 - hbuf[j] * hbuf[j]);
    gb1[j] = da;
    double* row = gw1 + size_t{j} * d;
    for (uint32_t i = 0; i < d; ++i) row[i] = da * x[i];
  }
}

std::vector<uint32_t> poisson_sample(size_t n, double rate, Rng& rng) {
  if (!(rate >= 0.0) || rate > 1.0) throw ParameterError("poisson_sample: need rate in [0, 1]");
  std::vector<uint32_t> idx;
  for (size_t i = 0; i < n; ++i) {
    if (rng.uniform() < rate) idx.push_back(static_cast<uint32_t>(i));
  }
  return idx;
}

StepStats dpsgd_step(std::vector<double>& theta, const Task& task, const SgdConfig& cfg,
                     const std::vector<uint32_t>& batch, Rng& noise_rng) {
  const size_t dim = theta.size();
  const bool compress = scenario_compresses(cfg.scenario);
  const double bound = std::sqrt(cfg.k) * cfg.clip_c;
  StepStats stats;
  stats.batch_size = batch.size();

  std::vector<DenseGradient> slots(batch.size());
  std::vector<uint8_t> vanished(batch.size(), 0);
  parallel_for(batch.size(), cfg.threads, [&](size_t j) {
    DenseGradient g;
    task_sample_gradient(task, theta, batch[j], g);
    g = clip_l2(g, cfg.clip_c);
    if (compress) {
      g = norm_top_k(g, cfg.k);
      // Appendix sensitivity claim for the compressed per-sample contribution.
      require(l2_norm(g) <= bound * (1.0 + 1e-12), "dpsgd: per-sample norm exceeds sqrt(k)*C");
      if (l2_norm(g) == 0.0) vanished[j] = 1;
    }
    slots[j] = std::move(g);
  });

  DenseGradient sum(dim, 0.0);
  for (size_t j = 0; j < batch.size(); ++j) {
    for (size_t i = 0; i < dim; ++i) sum[i] += slots[j][i];
    stats.zero_compressions += vanished[j];
  }
  const double var = scenario_noise_variance(cfg.scenario, cfg.sigma, cfg.clip_c, cfg.k);
  if (var > 0.0) {
    const double sd = std::sqrt(var);
    for (size_t i = 0; i < dim; ++i) sum[i] += noise_rng.gaussian(sd);
  }
  const double scale = cfg.lr / static_cast<double>(cfg.batch);
  for (size_t i = 0; i < dim; ++i) theta[i] -= scale * sum[i];
  return stats;
}

RunResult run_dpsgd(const Task& task, const SgdConfig& cfg) {
  const size_t n = task.train_size();
  if (cfg.batch > n) throw ConfigError("dpsgd: batch larger than the training set");
  if (n % cfg.batch != 0) {
    throw ConfigError("dpsgd: batch must divide the training set size");
  }
  const uint64_t steps_per_epoch = n / cfg.batch;
  const double rate = static_cast<double>(cfg.batch) / static_cast<double>(n);

  Rng model_rng(derive_stream(cfg.seed, StreamTag::kModel));
  Rng sample_rng(derive_stream(cfg.seed, StreamTag::kSubsample));
  Rng noise_rng(derive_stream(cfg.seed, StreamTag::kNoise));

  RunResult res;
  res.ledger = PrivacyLedger(cfg.delta, integer_order_grid());
  res.theta = task.init_params(model_rng);
  const bool priv = scenario_private(cfg.scenario);
  for (uint32_t e = 0; e < cfg.epochs; ++e) {
    for (uint64_t s = 0; s < steps_per_epoch; ++s) {
      const auto batch = poisson_sample(n, rate, sample_rng);
      const StepStats st = dpsgd_step(res.theta, task, cfg, batch, noise_rng);
      res.zero_compressions += st.zero_compressions;
      ++res.steps;
      if (priv) res.ledger.record_sampled_gaussian(rate, cfg.sigma);
    }
  }
  res.final_loss = task_loss(task, res.theta);
  res.accuracy = task_accuracy(task, res.theta);
  res.epsilon =
      priv ? res.ledger.epsilon_independent().epsilon : std::numeric_limits<double>::infinity();
  return res;
}

std::vector<ScenarioSummary> ControlTable::summarize() const {
  std::vector<ScenarioSummary> out;
  for (Scenario s : {Scenario::kClippedSgd, Scenario::kTopkSgd, Scenario::kTopkGmDp,
                     Scenario::kTopaggSgd, Scenario::kGmDp}) {
    double sum = 0.0, sum2 = 0.0, acc = 0.0;
    size_t count = 0;
    for (const auto& c : cells) {
      if (c.scenario != s) continue;
      sum += c.final_loss;
      sum2 += c.final_loss * c.final_loss;
      acc += c.accuracy;
      ++count;
    }
    if (count == 0) continue;
    ScenarioSummary sm;
    sm.scenario = s;
    sm.mean_loss = sum / static_cast<double>(count);
    const double var =
        count > 1 ? (sum2 - sum * sum / static_cast<double>(count)) / static_cast<double>(count - 1)
                  : 0.0;
    sm.std_loss = std::sqrt(std::max(var, 0.0));
    sm.mean_accuracy = acc / static_cast<double>(count);
    out.push_back(sm);
  }
  return out;
}

ControlTable run_control_experiment(const Task& task, const std::vector<Scenario>& scenarios,
                                    const std::vector<uint64_t>& seeds, const SgdConfig& base) {
  ControlTable table;
  table.base = base;
  for (uint64_t seed : seeds) {
    for (Scenario s : scenarios) {
      SgdConfig cfg = base;
      cfg.seed = seed;
      cfg.scenario = s;
      const RunResult r = run_dpsgd(task, cfg);
      table.cells.push_back(ControlCell{s, seed, r.final_loss, r.accuracy, r.epsilon});
    }
  }
  return table;
}

void write_control_csv(const ControlTable& table, const std::string& config_hash, uint64_t seed,
                       std::ostream& out) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), "# dpgrad %s config=%s seed=%llu\n", kToolkitVersion,
                config_hash.c_str(), static_cast<unsigned long long>(seed));
  out << buf;
  out << "scenario,seed,final_loss,accuracy,epsilon,sigma,C,k,B,lr\n";
  for (const auto& c : table.cells) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%u,%.10g\n",
                  scenario_name(c.scenario), static_cast<unsigned long long>(c.seed),
                  c.final_loss, c.accuracy, c.epsilon, table.base.sigma, table.base.clip_c,
                  table.base.k, table.base.batch, table.base.lr);
    out << buf;
  }
}

}  // namespace dpgrad::dpsgd
