#ifndef DPGRAD_DPSGD_HPP_
#define DPGRAD_DPSGD_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dpgrad/accountant.hpp"
#include "dpgrad/config.hpp"
#include "dpgrad/gradient.hpp"
#include "dpgrad/rng.hpp"

namespace dpgrad::dpsgd {

// Control-experiment cells: which transforms run and how much noise the
// summed batch gradient receives (variance per coordinate, pre-division).
enum class Scenario {
  kClippedSgd,  // clip only
  kTopkSgd,     // clip + energy top-k, no noise
  kTopkGmDp,    // clip + energy top-k, variance sigma^2 C^2
  kTopaggSgd,   // clip + energy top-k, variance k sigma^2 C^2
  kGmDp,        // clip only, variance sigma^2 C^2
};

const char* scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);
bool scenario_compresses(Scenario s);
bool scenario_private(Scenario s);
double scenario_noise_variance(Scenario s, double sigma, double clip_c, double k);

struct SgdConfig {
  uint32_t batch = 32;  // expected batch size under Poisson sampling
  double lr = 0.4;
  double sigma = 3.0;   // noise multiplier
  double clip_c = 1.0;
  double k = 0.25;      // retained energy fraction
  uint32_t epochs = 15;
  double delta = 1e-5;
  uint64_t seed = 1;
  Scenario scenario = Scenario::kTopaggSgd;
  uint32_t threads = 1;

  static SgdConfig from_config(const Config& cfg);
  Config to_config() const;
};

// Binary classification task; hidden == 0 is convex logistic regression,
// hidden > 0 a one-hidden-layer tanh network (report-only, nonconvex).
struct Task {
  std::string name;
  uint32_t feature_dim = 0;
  uint32_t hidden = 0;
  std::vector<double> train_x;  // row-major
  std::vector<int32_t> train_y;
  std::vector<double> test_x;
  std::vector<int32_t> test_y;

  size_t train_size() const { return train_y.size(); }
  uint32_t param_dim() const;
  std::vector<double> init_params(Rng& rng) const;
};

Task make_logistic_task(size_t n_train, size_t n_test, uint32_t feature_dim, uint64_t seed);
Task make_mlp_task(size_t n_train, size_t n_test, uint32_t feature_dim, uint32_t hidden,
                   uint64_t seed);

double task_loss(const Task& task, const std::vector<double>& theta);
double task_accuracy(const Task& task, const std::vector<double>& theta);
void task_sample_gradient(const Task& task, const std::vector<double>& theta, size_t index,
                          DenseGradient& out);

// Independent inclusion with the given rate; consumes exactly n draws so
// downstream streams stay aligned across thread counts.
std::vector<uint32_t> poisson_sample(size_t n, double rate, Rng& rng);

struct StepStats {
  size_t batch_size = 0;
  uint32_t zero_compressions = 0;  // samples whose compressed gradient vanished
};

// One step: per-sample gradient -> l2 clip -> energy top-k (if the scenario
// compresses) -> ordered sum -> Gaussian noise on the sum -> divide by the
// configured batch size -> descent.
StepStats dpsgd_step(std::vector<double>& theta, const Task& task, const SgdConfig& cfg,
                     const std::vector<uint32_t>& batch, Rng& noise_rng);

struct RunResult {
  std::vector<double> theta;
  double final_loss = 0.0;
  double accuracy = 0.0;
  double epsilon = 0.0;  // +inf for non-private scenarios
  uint64_t steps = 0;
  uint64_t zero_compressions = 0;
  PrivacyLedger ledger{1e-5, integer_order_grid()};
};

RunResult run_dpsgd(const Task& task, const SgdConfig& cfg);

struct ControlCell {
  Scenario scenario = Scenario::kClippedSgd;
  uint64_t seed = 0;
  double final_loss = 0.0;
  double accuracy = 0.0;
  double epsilon = 0.0;
};

struct ScenarioSummary {
  Scenario scenario = Scenario::kClippedSgd;
  double mean_loss = 0.0;
  double std_loss = 0.0;
  double mean_accuracy = 0.0;
};

struct ControlTable {
  SgdConfig base;
  std::vector<ControlCell> cells;
  std::vector<ScenarioSummary> summarize() const;
};

// Same data, paired seeds across scenario cells; only the per-cell scenario
// (and its noise scale) differs.
ControlTable run_control_experiment(const Task& task, const std::vector<Scenario>& scenarios,
                                    const std::vector<uint64_t>& seeds, const SgdConfig& base);

void write_control_csv(const ControlTable& table, const std::string& config_hash, uint64_t seed,
                       std::ostream& out);

}  // namespace dpgrad::dpsgd

#endif  // DPGRAD_DPSGD_HPP_
