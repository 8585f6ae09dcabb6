// Experiment runner: wraps the accountant, PATE, DP-SGD, convergence and
// compression harnesses behind one binary. Exit codes: 0 success, 2 usage or
// configuration error, 3 infeasible privacy budget, 4 internal failure.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dpgrad/accountant.hpp"
#include "dpgrad/aggregate.hpp"
#include "dpgrad/compress.hpp"
#include "dpgrad/convergence.hpp"
#include "dpgrad/dpsgd.hpp"
#include "dpgrad/errors.hpp"
#include "dpgrad/parallel.hpp"
#include "dpgrad/pate.hpp"
#include "dpgrad/sketch.hpp"
#include "dpgrad/version.hpp"

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string manifest_comment(const std::string& config_hash, uint64_t seed) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "# dpgrad %s config=%s seed=%llu\n", dpgrad::kToolkitVersion,
                config_hash.c_str(), static_cast<unsigned long long>(seed));
  return buf;
}

json manifest_json(const std::string& config_hash, uint64_t seed) {
  return json{{"type", "manifest"},
              {"version", dpgrad::kToolkitVersion},
              {"config_hash", config_hash},
              {"seed", seed}};
}

std::string resolve_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  const char* env = std::getenv("DPGRAD_OUT_DIR");
  if (env != nullptr && env[0] != '\0') return env;
  return ".";
}

std::ofstream open_output(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path path = std::filesystem::path(dir) / name;
  std::ofstream out(path);
  if (!out) throw dpgrad::ConfigError("cannot open output file: " + path.string());
  return out;
}

// Execution-only keys must not change the experiment identity.
std::string config_hash_of(dpgrad::Config cfg) {
  cfg.erase("threads");
  return cfg.hash_hex();
}

dpgrad::Config load_config(const std::string& path) {
  if (path.empty()) return dpgrad::Config{};
  return dpgrad::Config::from_file(path);
}

int cmd_accountant(uint32_t k, double sigma, double delta, std::optional<uint64_t> rounds,
                   std::optional<double> eps_target, const std::string& format) {
  dpgrad::Config cfg;
  cfg.set("k", std::to_string(k));
  cfg.set("sigma", fmt_double(sigma));
  cfg.set("delta", fmt_double(delta));
  if (rounds) cfg.set("rounds", std::to_string(*rounds));
  if (eps_target) cfg.set("epsilon_target", fmt_double(*eps_target));
  const std::string hash = config_hash_of(cfg);

  if (eps_target) {
    const uint64_t t = dpgrad::budget_schedule(k, sigma, delta, *eps_target);
    if (format == "json") {
      json j = manifest_json(hash, 0);
      j["type"] = "budget_schedule";
      j["rounds"] = t;
      std::cout << j.dump() << "\n";
    } else {
      std::cout << t << "\n";
    }
    return 0;
  }

  dpgrad::PrivacyLedger ledger(delta);
  const double sens = dpgrad::sum_sensitivity(k);
  json per_round = json::array();
  std::string text;
  for (uint64_t r = 1; r <= *rounds; ++r) {
    ledger.record_gaussian_sum(sens, sigma);
    const dpgrad::DpResult eps = ledger.epsilon_independent();
    const dpgrad::DpResult eps_dep = ledger.epsilon_dependent();
    if (format == "json") {
      per_round.push_back(json{{"round", r},
                               {"epsilon_indep", eps.epsilon},
                               {"epsilon_dep", eps_dep.epsilon},
                               {"lambda", eps.lambda}});
    } else {
      text += std::to_string(r);
      text += ' ';
      text += fmt_double(eps.epsilon);
      text += ' ';
      text += fmt_double(eps_dep.epsilon);
      text += '\n';
    }
  }
  if (format == "json") {
    json j = manifest_json(hash, 0);
    j["type"] = "composition";
    j["rounds"] = per_round;
    std::cout << j.dump() << "\n";
  } else {
    std::cout << text;
  }
  return 0;
}

int cmd_pate(const std::string& config_path, const CLI::App* sub, dpgrad::pate::PateConfig pc,
             const std::string& out_flag, const std::string& format) {
  (void)config_path;
  (void)sub;
  dpgrad::Config canonical = pc.to_config();
  const std::string hash = config_hash_of(canonical);
  const std::string out_dir = resolve_out_dir(out_flag);

  const dpgrad::pate::PateResult res = dpgrad::pate::run_pate(pc);

  {
    auto f = open_output(out_dir, "pate_rounds.csv");
    dpgrad::pate::write_rounds_csv(res, hash, pc.seed, f);
  }
  {
    auto f = open_output(out_dir, "pate_ledger.jsonl");
    dpgrad::pate::write_ledger_jsonl(res, hash, pc.seed, f);
  }
  {
    auto f = open_output(out_dir, "pate_synthetic.csv");
    dpgrad::pate::write_synthetic_csv(res, hash, pc.seed, f);
  }

  if (format == "json") {
    json j = manifest_json(hash, pc.seed);
    j["type"] = "pate_summary";
    j["aggregations"] = res.aggregations;
    j["epsilon_indep"] = res.epsilon_indep_final;
    j["epsilon_dep_uncapped"] = res.epsilon_dep_uncapped_final;
    j["probe_accuracy"] = res.final_probe_accuracy;
    j["foreign_accesses"] = res.foreign_accesses;
    j["saturated_outcome_terms"] = res.saturated_outcome_terms;
    if (!res.diagnostic.empty()) j["diagnostic"] = res.diagnostic;
    std::cout << j.dump() << "\n";
  } else {
    std::cout << "aggregations " << res.aggregations << "\n"
              << "epsilon_indep " << fmt_double(res.epsilon_indep_final) << "\n"
              << "epsilon_dep_uncapped " << fmt_double(res.epsilon_dep_uncapped_final) << "\n"
              << "probe_accuracy " << fmt_double(res.final_probe_accuracy) << "\n"
              << "foreign_accesses " << res.foreign_accesses << "\n";
  }
  if (res.aggregations == 0) {
    std::cerr << "error: " << res.diagnostic << "\n";
    return 3;
  }
  return 0;
}

int cmd_dpsgd(dpgrad::dpsgd::SgdConfig base, uint32_t num_seeds, const std::string& scenario_flag,
              size_t train_n, size_t test_n, uint32_t feature_dim, const std::string& out_flag,
              const std::string& format) {
  dpgrad::Config canonical = base.to_config();
  canonical.set("train_n", std::to_string(train_n));
  canonical.set("test_n", std::to_string(test_n));
  canonical.set("feature_dim", std::to_string(feature_dim));
  canonical.set("seeds", std::to_string(num_seeds));
  if (!scenario_flag.empty()) canonical.set("scenario", scenario_flag);
  const std::string hash = config_hash_of(canonical);
  const std::string out_dir = resolve_out_dir(out_flag);

  const dpgrad::dpsgd::Task task = dpgrad::dpsgd::make_logistic_task(
      train_n, test_n, feature_dim, dpgrad::derive_stream(base.seed, dpgrad::StreamTag::kData));

  std::vector<dpgrad::dpsgd::Scenario> scenarios;
  if (!scenario_flag.empty()) {
    scenarios.push_back(dpgrad::dpsgd::scenario_from_name(scenario_flag));
  } else {
    scenarios = {dpgrad::dpsgd::Scenario::kClippedSgd, dpgrad::dpsgd::Scenario::kTopkSgd,
                 dpgrad::dpsgd::Scenario::kTopkGmDp, dpgrad::dpsgd::Scenario::kTopaggSgd,
                 dpgrad::dpsgd::Scenario::kGmDp};
  }
  std::vector<uint64_t> seeds;
  for (uint32_t i = 0; i < num_seeds; ++i) seeds.push_back(base.seed + i);

  const dpgrad::dpsgd::ControlTable table =
      dpgrad::dpsgd::run_control_experiment(task, scenarios, seeds, base);

  {
    auto f = open_output(out_dir, "dpsgd_control.csv");
    dpgrad::dpsgd::write_control_csv(table, hash, base.seed, f);
  }
  {
    auto f = open_output(out_dir, "dpsgd_control.jsonl");
    f << manifest_json(hash, base.seed).dump() << "\n";
    for (const auto& c : table.cells) {
      json j{{"scenario", dpgrad::dpsgd::scenario_name(c.scenario)},
             {"seed", c.seed},
             {"final_loss", c.final_loss},
             {"accuracy", c.accuracy},
             {"epsilon", std::isfinite(c.epsilon) ? json(c.epsilon) : json()}};
      f << j.dump() << "\n";
    }
  }

  const auto summaries = table.summarize();
  if (format == "json") {
    json rows = json::array();
    for (const auto& sm : summaries) {
      rows.push_back(json{{"scenario", dpgrad::dpsgd::scenario_name(sm.scenario)},
                          {"mean_loss", sm.mean_loss},
                          {"std_loss", sm.std_loss},
                          {"mean_accuracy", sm.mean_accuracy}});
    }
    json j = manifest_json(hash, base.seed);
    j["type"] = "dpsgd_summary";
    j["scenarios"] = rows;
    std::cout << j.dump() << "\n";
  } else {
    for (const auto& sm : summaries) {
      std::cout << dpgrad::dpsgd::scenario_name(sm.scenario) << " mean_loss "
                << fmt_double(sm.mean_loss) << " std_loss " << fmt_double(sm.std_loss)
                << " mean_accuracy " << fmt_double(sm.mean_accuracy) << "\n";
    }
  }
  return 0;
}

int cmd_convergence(dpgrad::convergence::ConvergenceConfig base, uint32_t num_seeds,
                    uint32_t threads, const std::string& out_flag, const std::string& format) {
  dpgrad::Config canonical = base.to_config();
  canonical.set("seeds", std::to_string(num_seeds));
  const std::string hash = config_hash_of(canonical);
  const std::string out_dir = resolve_out_dir(out_flag);

  std::vector<dpgrad::convergence::RunTrace> traces(num_seeds);
  dpgrad::parallel_for(num_seeds, threads, [&](size_t i) {
    dpgrad::convergence::ConvergenceConfig cfg = base;
    cfg.seed = base.seed + i;
    traces[i] = dpgrad::convergence::run_convergence(cfg);
  });

  uint32_t passes = 0;
  std::vector<dpgrad::convergence::BoundReport> reports;
  for (const auto& tr : traces) {
    reports.push_back(dpgrad::convergence::verify_bound(tr));
    passes += reports.back().pass ? 1 : 0;
  }
  const dpgrad::convergence::BoundReport aggregate = dpgrad::convergence::verify_bound(traces);

  std::vector<uint32_t> ks;
  for (uint32_t frac : {10, 8, 6, 4, 2, 1}) {
    const uint32_t k = std::max<uint32_t>(1, base.dim * frac / 10);
    if (ks.empty() || ks.back() != k) ks.push_back(k);
  }
  const auto sweep = dpgrad::convergence::run_k_sweep(base, ks);

  const auto tau = dpgrad::convergence::weibull_tau_profile(
      1.0, 0.5, 1000, 100, dpgrad::derive_stream(base.seed, dpgrad::StreamTag::kData));

  {
    auto f = open_output(out_dir, "convergence_report.jsonl");
    f << manifest_json(hash, base.seed).dump() << "\n";
    for (size_t i = 0; i < reports.size(); ++i) {
      json j = json::parse(reports[i].to_json());
      j["seed"] = base.seed + i;
      f << j.dump() << "\n";
    }
    json ja = json::parse(aggregate.to_json());
    ja["aggregate"] = true;
    f << ja.dump() << "\n";
  }
  {
    auto f = open_output(out_dir, "convergence_summary.csv");
    f << manifest_comment(hash, base.seed);
    f << "k,term_noise,term_compression,lhs,rhs,pass\n";
    for (const auto& e : sweep) {
      f << e.k << ',' << fmt_double(e.term_noise) << ',' << fmt_double(e.term_compression) << ','
        << fmt_double(e.lhs) << ',' << fmt_double(e.rhs) << ',' << (e.pass ? 1 : 0) << "\n";
    }
  }
  {
    auto f = open_output(out_dir, "convergence_tau.csv");
    f << manifest_comment(hash, base.seed);
    f << "k,mean_tau,reference\n";
    for (size_t i = 0; i < tau.ks.size(); ++i) {
      f << tau.ks[i] << ',' << fmt_double(tau.mean_tau[i]) << ',' << fmt_double(tau.reference[i])
        << "\n";
    }
  }

  if (format == "json") {
    json j = manifest_json(hash, base.seed);
    j["type"] = "convergence_summary";
    j["bound_passes"] = passes;
    j["seeds"] = num_seeds;
    j["aggregate"] = json::parse(aggregate.to_json());
    std::cout << j.dump() << "\n";
  } else {
    std::cout << "bound_passes " << passes << "/" << num_seeds << "\n"
              << "aggregate_pass " << (aggregate.pass ? "true" : "false") << "\n"
              << "aggregate_lhs " << fmt_double(aggregate.lhs) << "\n"
              << "aggregate_rhs " << fmt_double(aggregate.rhs) << "\n";
  }
  return passes == num_seeds && aggregate.pass ? 0 : 4;
}

int cmd_compress_bench(uint64_t seed, const std::string& dims_flag, const std::string& out_flag,
                       const std::string& format) {
  dpgrad::Config canonical;
  canonical.set("seed", std::to_string(seed));
  canonical.set("dims", dims_flag);
  const std::string hash = config_hash_of(canonical);
  const std::string out_dir = resolve_out_dir(out_flag);

  std::vector<uint32_t> dims;
  {
    std::stringstream ss(dims_flag);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const unsigned long v = std::strtoul(item.c_str(), nullptr, 10);
      if (v < 2) throw dpgrad::ConfigError("compress-bench: dims must be integers >= 2");
      dims.push_back(static_cast<uint32_t>(v));
    }
    if (dims.empty()) throw dpgrad::ConfigError("compress-bench: no dimensions given");
  }

  struct Row {
    uint32_t dim;
    std::string method;
    uint64_t bytes;
    double error;  // method-appropriate relative error
  };
  std::vector<Row> rows;

  for (uint32_t d : dims) {
    dpgrad::Rng data_rng(
        dpgrad::derive_stream(dpgrad::derive_stream(seed, dpgrad::StreamTag::kData), d));
    dpgrad::DenseGradient g(d);
    for (double& v : g) v = data_rng.gaussian(1.0);
    for (uint32_t h = 0; h < d / 16 + 1; ++h) {
      g[data_rng.next_u64() % d] += (data_rng.bernoulli(0.5) ? 10.0 : -10.0);
    }
    const double gnorm = dpgrad::l2_norm(g);

    {  // sign compression on the top 1/16 of coordinates
      const uint32_t k = std::max<uint32_t>(1, d / 16);
      dpgrad::Rng rng(dpgrad::derive_stream(seed, 101));
      const dpgrad::SparseSignGradient s =
          dpgrad::topk_sto_sign(g, k, 1.0, rng);
      double kept = 0.0;
      for (uint32_t j : s.indices) kept += g[j] * g[j];
      std::ostringstream buf;
      dpgrad::dump_sparse(s, buf);
      rows.push_back(Row{d, "topk_sto_sign", buf.str().size(),
                         std::sqrt(std::max(0.0, 1.0 - kept / (gnorm * gnorm)))});
    }
    for (uint32_t m : {2u, 16u}) {  // grid quantization after rotation
      dpgrad::Rng rng(dpgrad::derive_stream(seed, 202));
      dpgrad::KLevelSpec spec;
      spec.m = m;
      spec.c = 1.0;
      spec.rotation_seed = dpgrad::derive_stream(seed, 303);
      const dpgrad::KLevelGradient q = dpgrad::sto_klevel(g, spec, rng);
      // Reference: the exact pre-quantization vector on the same path.
      dpgrad::DenseGradient ref = dpgrad::clip_coordinates(g, spec.c);
      ref = dpgrad::hadamard_rotate(ref, *spec.rotation_seed);
      ref = dpgrad::linf_normalize(ref);
      double mse = 0.0;
      for (size_t j = 0; j < q.values.size(); ++j) {
        const double diff = q.values[j] - ref[j];
        mse += diff * diff;
      }
      mse /= static_cast<double>(q.values.size());
      char name[32];
      std::snprintf(name, sizeof(name), "sto_klevel_m%u", m);
      // ceil(log2(m)) bits per coordinate
      uint32_t bits = 0;
      while ((1u << bits) < m) ++bits;
      rows.push_back(Row{d, name, (uint64_t{q.values.size()} * bits + 7) / 8, std::sqrt(mse)});
    }
    {  // count sketch round trip
      const uint32_t width = std::max<uint32_t>(64, d / 4);
      dpgrad::CountSketch cs(5, width, dpgrad::derive_stream(seed, 404));
      cs.accumulate(g);
      const dpgrad::DenseGradient est = cs.unsketch(d);
      double err = 0.0;
      for (uint32_t j = 0; j < d; ++j) {
        const double diff = est[j] - g[j];
        err += diff * diff;
      }
      rows.push_back(Row{d, "count_sketch_r5", uint64_t{5} * width * 8,
                         std::sqrt(err) / gnorm});
    }
  }

  {
    auto f = open_output(out_dir, "compress_bench.csv");
    f << manifest_comment(hash, seed);
    f << "dim,method,bytes,relative_error\n";
    for (const auto& r : rows) {
      f << r.dim << ',' << r.method << ',' << r.bytes << ',' << fmt_double(r.error) << "\n";
    }
  }
  {
    auto f = open_output(out_dir, "compress_bench.jsonl");
    f << manifest_json(hash, seed).dump() << "\n";
    for (const auto& r : rows) {
      f << json{{"dim", r.dim}, {"method", r.method}, {"bytes", r.bytes}, {"error", r.error}}
               .dump()
        << "\n";
    }
  }

  if (format == "json") {
    json j = manifest_json(hash, seed);
    j["type"] = "compress_bench";
    j["rows"] = rows.size();
    std::cout << j.dump() << "\n";
  } else {
    std::cout << "rows " << rows.size() << "\n";
  }
  return 0;
}

int dispatch(const std::function<int()>& body) {
  try {
    return body();
  } catch (const dpgrad::InfiniteBudgetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const dpgrad::InfeasibleBudgetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const dpgrad::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const dpgrad::ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const dpgrad::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const dpgrad::InternalError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentially private gradient compression and aggregation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dpgrad::kToolkitVersion);
  app.failure_message(CLI::FailureMessage::help);

  std::string format = "text";
  std::string out_dir;
  std::string config_path;

  // accountant
  auto* acc = app.add_subcommand("accountant", "vote-aggregation privacy composition");
  uint32_t acc_k = 0;
  double acc_sigma = 0.0, acc_delta = 0.0;
  std::optional<uint64_t> acc_rounds;
  std::optional<double> acc_target;
  acc->add_option("--k", acc_k, "retained coordinates per teacher")->required();
  acc->add_option("--sigma", acc_sigma, "vote noise standard deviation")->required();
  acc->add_option("--delta", acc_delta, "DP failure probability")->required();
  auto* acc_r = acc->add_option("--rounds", acc_rounds, "compose this many rounds");
  auto* acc_t =
      acc->add_option("--epsilon-target", acc_target, "report the affordable round count");
  acc_r->excludes(acc_t);
  acc_t->excludes(acc_r);
  acc->add_option("--format", format, "text or json");

  // pate
  auto* pat = app.add_subcommand("pate", "teacher-ensemble generative training");
  uint64_t pat_seed = 0;
  double pat_target = 0.0;
  uint64_t pat_iterations = 0;
  uint32_t pat_threads = 0;
  std::string pat_dataset, pat_mode;
  pat->add_option("--config", config_path, "key=value or JSON config file");
  auto* o_seed = pat->add_option("--seed", pat_seed, "master seed");
  auto* o_tgt = pat->add_option("--epsilon-target", pat_target, "privacy budget");
  auto* o_iter = pat->add_option("--iterations", pat_iterations, "outer iteration cap");
  auto* o_thr = pat->add_option("--threads", pat_threads, "worker threads");
  auto* o_ds = pat->add_option("--dataset", pat_dataset, "two-clusters, blobs8x8 or blobs16x16");
  auto* o_mode = pat->add_option("--mode", pat_mode, "record or generator");
  pat->add_option("--out", out_dir, "output directory (default $DPGRAD_OUT_DIR or .)");
  pat->add_option("--format", format, "text or json");

  // dpsgd
  auto* dps = app.add_subcommand("dpsgd", "compressed private SGD control experiment");
  uint32_t dps_seeds = 10;
  std::string dps_scenario;
  uint64_t dps_train = 256, dps_test = 512;
  uint32_t dps_dim = 20, dps_threads = 0;
  dps->add_option("--config", config_path, "key=value or JSON config file");
  dps->add_option("--seeds", dps_seeds, "number of paired seeds");
  dps->add_option("--scenario", dps_scenario, "run a single scenario cell");
  dps->add_option("--train-n", dps_train, "training set size");
  dps->add_option("--test-n", dps_test, "test set size");
  dps->add_option("--feature-dim", dps_dim, "feature dimension");
  auto* dps_thr = dps->add_option("--threads", dps_threads, "worker threads");
  dps->add_option("--out", out_dir, "output directory (default $DPGRAD_OUT_DIR or .)");
  dps->add_option("--format", format, "text or json");

  // convergence
  auto* cvg = app.add_subcommand("convergence", "update-rule bound verification");
  uint32_t cvg_seeds = 20, cvg_threads = 1;
  cvg->add_option("--config", config_path, "key=value or JSON config file");
  cvg->add_option("--seeds", cvg_seeds, "seed matrix size");
  cvg->add_option("--threads", cvg_threads, "parallel seed runs");
  cvg->add_option("--out", out_dir, "output directory (default $DPGRAD_OUT_DIR or .)");
  cvg->add_option("--format", format, "text or json");

  // compress-bench
  auto* cmp = app.add_subcommand("compress-bench", "compression size and error survey");
  uint64_t cmp_seed = 1;
  std::string cmp_dims = "64,256,1024,4096";
  cmp->add_option("--seed", cmp_seed, "master seed");
  cmp->add_option("--dims", cmp_dims, "comma-separated dimensions");
  cmp->add_option("--out", out_dir, "output directory (default $DPGRAD_OUT_DIR or .)");
  cmp->add_option("--format", format, "text or json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << "\n";
    return 2;
  }
  if (format != "text" && format != "json") {
    std::cerr << "error: --format must be text or json\n";
    return 2;
  }

  if (acc->parsed()) {
    if (acc_rounds.has_value() == acc_target.has_value()) {
      std::cerr << "error: give exactly one of --rounds or --epsilon-target\n\n" << acc->help()
                << "\n";
      return 2;
    }
    return dispatch(
        [&] { return cmd_accountant(acc_k, acc_sigma, acc_delta, acc_rounds, acc_target, format); });
  }
  if (pat->parsed()) {
    return dispatch([&] {
      dpgrad::pate::PateConfig pc = dpgrad::pate::PateConfig::from_config(load_config(config_path));
      if (o_seed->count() > 0) pc.seed = pat_seed;
      if (o_tgt->count() > 0) pc.epsilon_target = pat_target;
      if (o_iter->count() > 0) pc.iterations = pat_iterations;
      if (o_thr->count() > 0) pc.threads = pat_threads;
      if (o_ds->count() > 0) pc.dataset = pat_dataset;
      if (o_mode->count() > 0) pc.mode = pat_mode;
      return cmd_pate(config_path, pat, pc, out_dir, format);
    });
  }
  if (dps->parsed()) {
    return dispatch([&] {
      dpgrad::dpsgd::SgdConfig base =
          dpgrad::dpsgd::SgdConfig::from_config(load_config(config_path));
      if (dps_thr->count() > 0) base.threads = dps_threads;
      return cmd_dpsgd(base, dps_seeds, dps_scenario, dps_train, dps_test, dps_dim, out_dir,
                       format);
    });
  }
  if (cvg->parsed()) {
    return dispatch([&] {
      dpgrad::convergence::ConvergenceConfig base =
          dpgrad::convergence::ConvergenceConfig::from_config(load_config(config_path));
      return cmd_convergence(base, cvg_seeds, cvg_threads, out_dir, format);
    });
  }
  if (cmp->parsed()) {
    return dispatch([&] { return cmd_compress_bench(cmp_seed, cmp_dims, out_dir, format); });
  }
  std::cerr << app.help() << "\n";
  return 2;
}
