#ifndef DPGRAD_PATE_HPP_
#define DPGRAD_PATE_HPP_

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dpgrad/accountant.hpp"
#include "dpgrad/config.hpp"
#include "dpgrad/gradient.hpp"
#include "dpgrad/rng.hpp"

namespace dpgrad::pate {

struct Dataset {
  uint32_t dim = 0;
  uint32_t classes = 2;
  std::vector<double> x;  // row-major, size * dim
  std::vector<int32_t> y;

  size_t size() const { return y.size(); }
  const double* row(size_t i) const { return x.data() + i * dim; }
};

// Two isotropic Gaussian clusters in the plane, labels balanced.
Dataset make_two_clusters(size_t n, uint64_t seed);

// side x side images: two blurred bar patterns plus pixel noise.
Dataset make_blobs(size_t n, uint32_t side, uint64_t seed);

// name in {"two-clusters", "blobs8x8", "blobs16x16"}.
Dataset make_dataset(const std::string& name, size_t n, uint64_t seed);

// Seeded permutation split into `teachers` equal contiguous blocks. Teacher
// count must divide the dataset size. All row access goes through handles;
// reads outside the handle's own block are counted (and still served, so
// the audit observes misuse instead of masking it as a crash).
class PartitionedDataset {
 public:
  PartitionedDataset(const Dataset& data, uint32_t teachers, uint64_t seed);
  PartitionedDataset(const PartitionedDataset&) = delete;
  PartitionedDataset& operator=(const PartitionedDataset&) = delete;

  uint32_t teachers() const { return teachers_; }
  uint32_t partition_size() const { return block_; }
  uint32_t dim() const { return data_->dim; }
  uint64_t foreign_access_count() const { return foreign_.load(); }

  class Handle {
   public:
    uint32_t size() const;
    const double* row(uint32_t local) const;
    int32_t label(uint32_t local) const;
    // Access by global permuted position; foreign positions are audited.
    const double* global_row(uint32_t pos) const;

   private:
    friend class PartitionedDataset;
    Handle(const PartitionedDataset* ds, uint32_t owner) : ds_(ds), owner_(owner) {}
    const PartitionedDataset* ds_;
    uint32_t owner_;
  };

  Handle handle(uint32_t teacher) const;

 private:
  const Dataset* data_;
  uint32_t teachers_;
  uint32_t block_;
  std::vector<uint32_t> perm_;
  mutable std::atomic<uint64_t> foreign_{0};
};

// Binary discriminator over [record ; one-hot label] inputs. hidden == 0 is
// plain logistic regression.
struct TeacherModel {
  uint32_t in_dim = 0;
  uint32_t hidden = 0;
  std::vector<double> w1;  // hidden x in_dim
  std::vector<double> b1;
  std::vector<double> w2;  // hidden, or in_dim when hidden == 0
  double b2 = 0.0;

  static TeacherModel init(uint32_t in_dim, uint32_t hidden, Rng& rng);

  double forward(const double* v) const;

  // -d log Gamma / d input at v; what a teacher reports for a synthetic
  // input it believes is fake.
  DenseGradient input_gradient(const double* v) const;

  // One gradient-descent step on
  //   -mean log Gamma(real) - mean log(1 - Gamma(fake)).
  void step(const std::vector<const double*>& real, const std::vector<const double*>& fake,
            double lr);
};

// Optionally conditional generator mapping [z ; one-hot label] to a record.
// hidden == 0 is affine.
struct Generator {
  uint32_t latent = 0;
  uint32_t in_dim = 0;  // latent + classes
  uint32_t out_dim = 0;
  uint32_t hidden = 0;
  std::vector<double> w1, b1;  // hidden x in_dim
  std::vector<double> w2, b2;  // out_dim x (hidden or in_dim), out_dim

  static Generator init(uint32_t latent, uint32_t classes, uint32_t out_dim, uint32_t hidden,
                        Rng& rng);
  DenseGradient forward(const double* z, int32_t label, uint32_t classes) const;
  // One MSE descent step toward per-record targets; returns the loss before
  // the step.
  double fit_step(const std::vector<DenseGradient>& inputs,
                  const std::vector<DenseGradient>& targets, double lr);
};

// In-place record step x += gamma * g along an aggregated ternary vote.
// Linear: two updates compose to one update by the vote sum.
void student_update(double* record, const TernaryGradient& g, double gamma);

struct PateConfig {
  std::string dataset = "two-clusters";
  std::string mode = "record";  // "record" or "generator"
  uint32_t teachers = 32;
  uint32_t k = 1;
  double sigma = 50.0;
  double beta = 0.8;
  double clip_c = 1e-5;
  double epsilon_target = 1.0;
  double delta = 1e-5;
  uint64_t seed = 1;
  uint32_t records = 32;
  uint64_t iterations = 1000000;  // outer cap; the budget usually halts first
  double student_lr = 0.15;
  double teacher_lr = 0.5;
  uint32_t teacher_hidden = 16;
  uint32_t real_batch = 8;
  bool teacher_batch_update = false;  // default: one update per record
  uint32_t threads = 1;
  uint64_t probe_every = 1;
  size_t dataset_size = 512;
  size_t heldout_size = 256;
  uint32_t generator_latent = 8;
  uint32_t generator_hidden = 0;
  double generator_lr = 0.05;
  uint32_t generator_steps = 20;

  static PateConfig from_config(const Config& cfg);
  Config to_config() const;
};

struct PateRoundRecord {
  uint64_t round = 0;
  double epsilon_indep = 0.0;
  double epsilon_dep_uncapped = 0.0;
  double q_tilde = 0.0;
  double probe_accuracy = 0.0;
};

struct PateResult {
  std::vector<PateRoundRecord> rounds;
  uint64_t aggregations = 0;
  double final_probe_accuracy = 0.0;
  double epsilon_indep_final = 0.0;
  double epsilon_dep_uncapped_final = 0.0;
  uint64_t foreign_accesses = 0;
  uint32_t saturated_outcome_terms = 0;
  std::string diagnostic;  // nonempty when the budget blocked the first round
  uint32_t synthetic_dim = 0;
  std::vector<double> synthetic_x;  // records * dim
  std::vector<int32_t> synthetic_y;
  PrivacyLedger ledger{1e-5};
};

// Full pipeline: partition, per-record teacher updates and vote
// aggregation, student updates, budget-gated halt. Deterministic in
// cfg.seed for any thread count.
PateResult run_pate(const PateConfig& cfg);

// Regularized logistic probe trained on (x, y), evaluated on heldout.
double probe_accuracy(const std::vector<double>& x, const std::vector<int32_t>& y, uint32_t dim,
                      const Dataset& heldout);

// Output writers; every file leads with toolkit version, config hash and
// master seed so runs can be traced.
void write_rounds_csv(const PateResult& res, const std::string& config_hash, uint64_t seed,
                      std::ostream& out);
void write_ledger_jsonl(const PateResult& res, const std::string& config_hash, uint64_t seed,
                        std::ostream& out);
void write_synthetic_csv(const PateResult& res, const std::string& config_hash, uint64_t seed,
                         std::ostream& out);

}  // namespace dpgrad::pate

#endif  // DPGRAD_PATE_HPP_
