#include "dpgrad/convergence.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpgrad/errors.hpp"
#include "dpgrad/gradient.hpp"
#include "dpgrad/rng.hpp"
#include "support.hpp"

namespace {

namespace conv = dpgrad::convergence;
using testsupport::RunningStats;

TEST(ResidualRatio, HandValuesAndRange) {
  EXPECT_DOUBLE_EQ(conv::measure_tau_k({3.0, 4.0}, 1), 0.6);
  EXPECT_EQ(conv::measure_tau_k({3.0, 4.0}, 2), 0.0);   // kept everything
  EXPECT_EQ(conv::measure_tau_k({3.0, 4.0}, 5), 0.0);   // k past the dimension
  EXPECT_EQ(conv::measure_tau_k({0.0, 0.0, 0.0}, 1), 0.0);
  EXPECT_THROW(conv::measure_tau_k({1.0}, 0), dpgrad::ParameterError);

  dpgrad::Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    dpgrad::DenseGradient g(12);
    for (auto& v : g) v = rng.gaussian(1.0);
    double prev = 1.0;
    for (uint32_t k = 1; k <= 12; ++k) {
      const double tau = conv::measure_tau_k(g, k);
      EXPECT_GE(tau, 0.0);
      EXPECT_LE(tau, 1.0);
      EXPECT_LE(tau, prev + 1e-15);
      prev = tau;
    }
    EXPECT_EQ(conv::measure_tau_k(g, 12), 0.0);
  }
}

conv::Objective zero_centered_quadratic(uint32_t dim, uint32_t workers) {
  conv::Objective obj;
  obj.kind = "quadratic";
  obj.dim = dim;
  obj.workers = workers;
  obj.centers.assign(size_t{workers} * dim, 0.0);
  return obj;
}

TEST(UpdateRule, ReducesToExactGradientDescentWhenLossless) {
  // All-zero centers give f(x) = 0.5 ||x||^2 and worker gradients equal to
  // x itself; with k = d, no noise, no quantization and an inert clip the
  // iterate must contract exactly like (1 - gamma)^t.
  const uint32_t d = 6;
  const conv::Objective obj = zero_centered_quadratic(d, 2);
  conv::ConvergenceConfig cfg;
  cfg.dim = d;
  cfg.workers = 2;
  cfg.k = d;
  cfg.gamma = 0.1;
  cfg.clip_c = 1.0;
  cfg.quantize = false;
  cfg.noise_a = 0.0;

  std::vector<double> x = {0.9, -0.7, 0.5, -0.3, 0.1, -0.05};
  const std::vector<double> x0 = x;
  dpgrad::Rng dither(1), noise(2);
  for (int t = 1; t <= 50; ++t) {
    x = conv::update_rule_step(x, obj, cfg, dither, noise);
    const double decay = std::pow(1.0 - cfg.gamma, t);
    for (uint32_t j = 0; j < d; ++j) {
      EXPECT_NEAR(x[j], decay * x0[j], 1e-12 * std::fabs(decay * x0[j]) + 1e-300);
    }
  }
}

TEST(UpdateRule, NoiseVarianceIsGammaSqAKOverWorkers) {
  const uint32_t d = 16, workers = 8, k = 4;
  const conv::Objective obj = zero_centered_quadratic(d, workers);
  conv::ConvergenceConfig cfg;
  cfg.dim = d;
  cfg.workers = workers;
  cfg.k = k;
  cfg.gamma = 0.05;
  cfg.clip_c = 1.0;
  cfg.quantize = false;
  cfg.noise_a = 0.5;

  // At x = 0 every worker gradient vanishes: the update is pure noise.
  const std::vector<double> zero(d, 0.0);
  dpgrad::Rng dither(5), noise(6);
  RunningStats stats;
  for (int t = 0; t < 2000; ++t) {
    const std::vector<double> out = conv::update_rule_step(zero, obj, cfg, dither, noise);
    for (double v : out) stats.push(v);
  }
  const double want = cfg.gamma * cfg.gamma * cfg.noise_a * k / workers;
  const double n = static_cast<double>(stats.n);
  EXPECT_NEAR(stats.mean, 0.0, 4.0 * std::sqrt(want / n));
  EXPECT_NEAR(stats.variance(), want, 4.0 * want * std::sqrt(2.0 / (n - 1.0)));
}

TEST(UpdateRule, SignQuantizationIsUnbiasedInsideTheUnitBox) {
  const uint32_t d = 5, workers = 4;
  conv::Objective obj;
  obj.kind = "quadratic";
  obj.dim = d;
  obj.workers = workers;
  obj.centers.resize(size_t{workers} * d);
  dpgrad::Rng centers_rng(7);
  for (auto& c : obj.centers) c = 0.4 * centers_rng.uniform() - 0.2;

  conv::ConvergenceConfig cfg;
  cfg.dim = d;
  cfg.workers = workers;
  cfg.k = d;  // keep every coordinate: only quantization remains random
  cfg.gamma = 0.05;
  cfg.clip_c = 1.0;
  cfg.quantize = true;
  cfg.noise_a = 0.0;

  const std::vector<double> x = {0.3, -0.25, 0.15, 0.05, -0.4};  // gradients stay in [-1, 1]
  dpgrad::DenseGradient grad;
  obj.global_gradient(x, grad);

  dpgrad::Rng dither(9), noise(10);
  std::vector<double> mean(d, 0.0);
  constexpr int kTrials = 40000;
  for (int t = 0; t < kTrials; ++t) {
    const std::vector<double> out = conv::update_rule_step(x, obj, cfg, dither, noise);
    for (uint32_t j = 0; j < d; ++j) mean[j] += out[j] / kTrials;
  }
  // E[out] = x - gamma * grad f(x); quantizer variance per worker coordinate
  // is at most 1/4, so the averaged update has standard error
  // gamma * sqrt(1 / (4 N trials)) per coordinate.
  const double se = cfg.gamma * std::sqrt(0.25 / (workers * static_cast<double>(kTrials)));
  for (uint32_t j = 0; j < d; ++j) {
    EXPECT_NEAR(mean[j], x[j] - cfg.gamma * grad[j], 4.0 * se) << "coordinate " << j;
  }
}

TEST(UpdateRule, ValidatesShapeAndParameters) {
  const conv::Objective obj = zero_centered_quadratic(4, 2);
  conv::ConvergenceConfig cfg;
  cfg.dim = 4;
  cfg.workers = 2;
  cfg.k = 4;
  dpgrad::Rng dither(1), noise(2);
  std::vector<double> x(4, 0.0);

  conv::ConvergenceConfig wrong = cfg;
  wrong.dim = 5;
  EXPECT_THROW(conv::update_rule_step(x, obj, wrong, dither, noise), dpgrad::ConfigError);

  conv::ConvergenceConfig bad_k = cfg;
  bad_k.k = 5;
  EXPECT_THROW(conv::update_rule_step(x, obj, bad_k, dither, noise), dpgrad::ConfigError);

  conv::ConvergenceConfig bad_quant = cfg;
  bad_quant.quantize = true;
  bad_quant.clip_c = 1.5;
  EXPECT_THROW(conv::update_rule_step(x, obj, bad_quant, dither, noise), dpgrad::ConfigError);

  EXPECT_THROW(conv::update_rule_step(std::vector<double>(3, 0.0), obj, cfg, dither, noise),
               dpgrad::ParameterError);
}

TEST(Objectives, MinimizersHaveVanishingGradients) {
  const conv::Objective quad = conv::make_quadratic_objective(12, 5, 31);
  const std::vector<double> qstar = conv::objective_minimizer(quad);
  dpgrad::DenseGradient g;
  quad.global_gradient(qstar, g);
  EXPECT_LE(dpgrad::l2_norm(g), 1e-12);
  EXPECT_DOUBLE_EQ(quad.lipschitz(), 1.0);

  const conv::Objective lg = conv::make_logistic_objective(8, 4, 16, 1e-3, 33);
  const std::vector<double> lstar = conv::objective_minimizer(lg);
  lg.global_gradient(lstar, g);
  EXPECT_LE(dpgrad::l2_norm(g), 1e-8);
  // The minimum it finds is no worse than the origin.
  EXPECT_LE(lg.value(lstar), lg.value(std::vector<double>(8, 0.0)));
}

TEST(Objectives, LogisticGradientIsLipschitzWithTheReportedConstant) {
  const conv::Objective obj = conv::make_logistic_objective(8, 4, 16, 1e-3, 35);
  const double lips = obj.lipschitz();
  EXPECT_GT(lips, 0.0);
  dpgrad::Rng rng(37);
  dpgrad::DenseGradient gx, gy;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(8), y(8);
    for (int j = 0; j < 8; ++j) {
      x[j] = rng.gaussian(2.0);
      y[j] = rng.gaussian(2.0);
    }
    obj.global_gradient(x, gx);
    obj.global_gradient(y, gy);
    double diff = 0.0, dist = 0.0;
    for (int j = 0; j < 8; ++j) {
      diff += (gx[j] - gy[j]) * (gx[j] - gy[j]);
      dist += (x[j] - y[j]) * (x[j] - y[j]);
    }
    EXPECT_LE(std::sqrt(diff), lips * std::sqrt(dist) * (1.0 + 1e-6));
  }
}

TEST(Objectives, WorkerGradientsAverageToTheGlobalGradient) {
  const conv::Objective obj = conv::make_logistic_objective(6, 3, 8, 1e-3, 39);
  std::vector<double> x(6);
  dpgrad::Rng rng(41);
  for (auto& v : x) v = rng.gaussian(1.0);
  dpgrad::DenseGradient global, g;
  obj.global_gradient(x, global);
  std::vector<double> mean(6, 0.0);
  for (uint32_t n = 0; n < 3; ++n) {
    obj.worker_gradient(n, x, g);
    for (int j = 0; j < 6; ++j) mean[j] += g[j] / 3.0;
  }
  for (int j = 0; j < 6; ++j) EXPECT_NEAR(global[j], mean[j], 1e-12);
  EXPECT_THROW(obj.worker_gradient(3, x, g), dpgrad::ParameterError);
}

TEST(BoundCheck, LosslessDescentPassesWithInitTermDominant) {
  conv::ConvergenceConfig cfg;
  cfg.objective = "quadratic";
  cfg.dim = 20;
  cfg.workers = 1;  // no inter-worker variance term
  cfg.k = 20;       // no compression residual
  cfg.gamma = 0.01;
  cfg.clip_c = 100.0;  // inert clip
  cfg.quantize = false;
  cfg.noise_a = 0.0;
  cfg.iterations = 400;
  cfg.seed = 3;

  const conv::RunTrace trace = conv::run_convergence(cfg);
  EXPECT_EQ(trace.grad_sq.size(), 400u);
  EXPECT_GE(trace.f_x0, trace.f_xstar);

  const conv::BoundReport rep = conv::verify_bound(trace);
  EXPECT_TRUE(rep.complete);
  EXPECT_TRUE(rep.pass);
  EXPECT_LE(rep.lhs, rep.rhs);
  EXPECT_EQ(rep.term_noise, 0.0);
  EXPECT_EQ(rep.term_compression, 0.0);
  EXPECT_EQ(rep.tau_k, 0.0);
  EXPECT_GE(rep.term_init, 0.5 * rep.rhs);
}

TEST(BoundCheck, FullMechanismHoldsAcrossSeeds) {
  conv::ConvergenceConfig cfg;  // defaults: dim 50, k 10, quantized, noised
  std::vector<conv::RunTrace> traces;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.seed = seed;
    traces.push_back(conv::run_convergence(cfg));
    const conv::BoundReport single = conv::verify_bound(traces.back());
    EXPECT_TRUE(single.complete);
    EXPECT_TRUE(single.pass) << "seed " << seed;
  }
  const conv::BoundReport pooled = conv::verify_bound(traces);
  EXPECT_TRUE(pooled.complete);
  EXPECT_TRUE(pooled.pass);
  EXPECT_GT(pooled.term_noise, 0.0);
  EXPECT_GT(pooled.term_quant, 0.0);
  EXPECT_GT(pooled.rhs, 0.0);
}

TEST(BoundCheck, IncompleteTraceIsReportedNotPassed) {
  const conv::RunTrace empty;
  const conv::BoundReport rep = conv::verify_bound(empty);
  EXPECT_FALSE(rep.complete);
  EXPECT_FALSE(rep.pass);
  EXPECT_FALSE(conv::verify_bound(std::vector<conv::RunTrace>{}).complete);
}

TEST(BoundCheck, ReportSerializesEveryTerm) {
  conv::ConvergenceConfig cfg;
  cfg.dim = 10;
  cfg.k = 5;
  cfg.iterations = 50;
  const conv::BoundReport rep = conv::verify_bound(conv::run_convergence(cfg));
  const nlohmann::json j = nlohmann::json::parse(rep.to_json());
  for (const char* key :
       {"complete", "pass", "lhs", "rhs", "term_compression", "term_noise", "term_init",
        "term_variance", "term_quant", "tau_k", "m_bound", "sigma_l2", "sigma_l1", "quant_var",
        "lipschitz"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_DOUBLE_EQ(j["lhs"].get<double>(), rep.lhs);
  EXPECT_DOUBLE_EQ(j["rhs"].get<double>(), rep.rhs);
}

TEST(KSweep, NoiseShrinksAndResidualGrowsAsKDrops) {
  conv::ConvergenceConfig base;  // dim 50 defaults
  base.iterations = 200;
  const std::vector<uint32_t> ks = {50, 40, 30, 20, 10, 5};
  const auto entries = conv::run_k_sweep(base, ks);
  ASSERT_EQ(entries.size(), ks.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    EXPECT_EQ(entries[i].k, ks[i]);
    EXPECT_TRUE(entries[i].pass) << "k=" << ks[i];
    EXPECT_LE(entries[i].lhs, entries[i].rhs);
    if (i > 0) {
      EXPECT_LT(entries[i].term_noise, entries[i - 1].term_noise);
      EXPECT_GE(entries[i].term_compression, entries[i - 1].term_compression - 1e-15);
    }
  }
  EXPECT_THROW(conv::run_k_sweep(base, {}), dpgrad::ParameterError);
}

TEST(TailProfile, MatchesReferenceCurveShape) {
  const conv::TauProfile prof = conv::weibull_tau_profile(0.25, 0.5, 1000, 50, 5);
  ASSERT_EQ(prof.ks.size(), prof.mean_tau.size());
  ASSERT_EQ(prof.ks.size(), prof.reference.size());
  EXPECT_EQ(prof.ks.back(), 1000u);
  EXPECT_EQ(prof.mean_tau.back(), 0.0);  // keeping everything leaves no residual

  for (size_t i = 0; i < prof.ks.size(); ++i) {
    const double want =
        std::exp(-std::pow(prof.ks[i] / (0.25 * 1000.0), 0.5)) - std::exp(-1.0);
    EXPECT_DOUBLE_EQ(prof.reference[i], want);
    if (i > 0) {
      EXPECT_LT(prof.ks[i - 1], prof.ks[i]);
      EXPECT_LT(prof.mean_tau[i], prof.mean_tau[i - 1]);  // strictly finer recovery
    }
  }
}

TEST(TailProfile, HeavierTailsConcentrateEnergyFaster) {
  const uint32_t d = 500;
  const conv::TauProfile heavy = conv::weibull_tau_profile(0.25, 0.3, d, 100, 7);
  const conv::TauProfile light = conv::weibull_tau_profile(0.25, 0.9, d, 100, 7);
  ASSERT_EQ(heavy.ks.size(), light.ks.size());
  for (size_t i = 0; i < heavy.ks.size(); ++i) {
    if (heavy.ks[i] <= d / 2) {
      EXPECT_LT(heavy.mean_tau[i], light.mean_tau[i]) << "k=" << heavy.ks[i];
    }
  }
  EXPECT_THROW(conv::weibull_tau_profile(0.25, 1.0, d, 10, 1), dpgrad::ParameterError);
  EXPECT_THROW(conv::weibull_tau_profile(0.0, 0.5, d, 10, 1), dpgrad::ParameterError);
}

TEST(Runs, DeterministicInSeedAndShapeChecked) {
  conv::ConvergenceConfig cfg;
  cfg.dim = 16;
  cfg.k = 4;
  cfg.iterations = 60;
  cfg.seed = 17;
  const conv::RunTrace a = conv::run_convergence(cfg);
  const conv::RunTrace b = conv::run_convergence(cfg);
  EXPECT_EQ(a.x_final, b.x_final);
  EXPECT_EQ(a.grad_sq, b.grad_sq);

  cfg.seed = 18;
  const conv::RunTrace c = conv::run_convergence(cfg);
  EXPECT_NE(a.x_final, c.x_final);

  cfg.objective = "cubic";
  EXPECT_THROW(conv::run_convergence(cfg), dpgrad::ConfigError);
}

TEST(ConvergenceConfig, RoundTripsAndRejectsUnknownKeys) {
  conv::ConvergenceConfig cfg;
  cfg.objective = "logistic";
  cfg.dim = 12;
  cfg.quantize = false;
  const dpgrad::Config flat = cfg.to_config();
  const conv::ConvergenceConfig back = conv::ConvergenceConfig::from_config(flat);
  EXPECT_EQ(back.to_config().canonical(), flat.canonical());
  EXPECT_EQ(back.objective, "logistic");
  EXPECT_EQ(back.dim, 12u);
  EXPECT_FALSE(back.quantize);

  dpgrad::Config unknown = flat;
  unknown.set("dims", "12");
  EXPECT_THROW(conv::ConvergenceConfig::from_config(unknown), dpgrad::ConfigError);
}

}  // namespace
