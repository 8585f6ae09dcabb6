#include "dpgrad/pate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dpgrad/aggregate.hpp"
#include "dpgrad/errors.hpp"
#include "dpgrad/parallel.hpp"
#include "dpgrad/version.hpp"

namespace dpgrad::pate {

namespace {

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

void append_onehot(std::vector<double>& v, int32_t label, uint32_t classes) {
  for (uint32_t c = 0; c < classes; ++c) v.push_back(label == static_cast<int32_t>(c) ? 1.0 : 0.0);
}

std::string manifest_comment(const std::string& config_hash, uint64_t seed) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "# dpgrad %s config=%s seed=%llu\n", kToolkitVersion,
                config_hash.c_str(), static_cast<unsigned long long>(seed));
  return buf;
}

void csv_number(std::string& line, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  line += buf;
}

}  // namespace

Dataset make_two_clusters(size_t n, uint64_t seed) {
  Dataset ds;
  ds.dim = 2;
  ds.classes = 2;
  ds.x.reserve(n * 2);
  ds.y.reserve(n);
  Rng rng(seed);
  for (size_t i = 0; i < n; ++i) {
    const int32_t label = static_cast<int32_t>(i % 2);
    const double cx = label == 0 ? -1.5 : 1.5;
    ds.x.push_back(cx + rng.gaussian(0.6));
    ds.x.push_back(cx + rng.gaussian(0.6));
    ds.y.push_back(label);
  }
  return ds;
}

Dataset make_blobs(size_t n, uint32_t side, uint64_t seed) {
  Dataset ds;
  ds.dim = side * side;
  ds.classes = 2;
  ds.x.reserve(n * ds.dim);
  ds.y.reserve(n);
  Rng rng(seed);
  for (size_t i = 0; i < n; ++i) {
    const int32_t label = static_cast<int32_t>(i % 2);
    for (uint32_t r = 0; r < side; ++r) {
      for (uint32_t c = 0; c < side; ++c) {
        // class 0: bright main diagonal band; class 1: bright anti-diagonal.
        const uint32_t dist = label == 0 ? (r > c ? r - c : c - r)
                                         : (r + c >= side - 1 ? r + c - (side - 1)
                                                              : (side - 1) - r - c);
        const double base = dist <= side / 4 ? 1.0 : -0.2;
        ds.x.push_back(base + rng.gaussian(0.3));
      }
    }
    ds.y.push_back(label);
  }
  return ds;
}

Dataset make_dataset(const std::string& name, size_t n, uint64_t seed) {
  if (name == "two-clusters") return make_two_clusters(n, seed);
  if (name == "blobs8x8") return make_blobs(n, 8, seed);
  if (name == "blobs16x16") return make_blobs(n, 16, seed);
  throw ConfigError("dataset: unknown name '" + name + "'");
}

PartitionedDataset::PartitionedDataset(const Dataset& data, uint32_t teachers, uint64_t seed)
    : data_(&data), teachers_(teachers) {
  if (teachers < 1) throw ConfigError("partition: teachers must be >= 1");
  if (data.size() == 0 || data.size() % teachers != 0) {
    throw ConfigError("partition: teacher count must divide the dataset size");
  }
  block_ = static_cast<uint32_t>(data.size() / teachers);
  perm_.resize(data.size());
  for (size_t i = 0; i < perm_.size(); ++i) perm_[i] = static_cast<uint32_t>(i);
  Rng rng(seed);
  for (size_t i = perm_.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.next_u64() % i);
    std::swap(perm_[i - 1], perm_[j]);
  }
}

PartitionedDataset::Handle PartitionedDataset::handle(uint32_t teacher) const {
  if (teacher >= teachers_) throw ParameterError("partition: teacher id out of range");
  return Handle(this, teacher);
}

uint32_t PartitionedDataset::Handle::size() const { return ds_->block_; }

const double* PartitionedDataset::Handle::row(uint32_t local) const {
  if (local >= ds_->block_) throw ParameterError("partition: local index out of range");
  return ds_->data_->row(ds_->perm_[size_t{owner_} * ds_->block_ + local]);
}

int32_t PartitionedDataset::Handle::label(uint32_t local) const {
  if (local >= ds_->block_) throw ParameterError("partition: local index out of range");
  return ds_->data_->y[ds_->perm_[size_t{owner_} * ds_->block_ + local]];
}

const double* PartitionedDataset::Handle::global_row(uint32_t pos) const {
  if (pos >= ds_->perm_.size()) throw ParameterError("partition: position out of range");
  if (pos / ds_->block_ != owner_) ds_->foreign_.fetch_add(1);
  return ds_->data_->row(ds_->perm_[pos]);
}

TeacherModel TeacherModel::init(uint32_t in_dim, uint32_t hidden, Rng& rng) {
  TeacherModel m;
  m.in_dim = in_dim;
  m.hidden = hidden;
  const uint32_t w2_len = hidden > 0 ? hidden : in_dim;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(w2_len));
  if (hidden > 0) {
    m.w1.resize(size_t{hidden} * in_dim);
    m.b1.assign(hidden, 0.0);
    for (double& w : m.w1) w = rng.gaussian(s1);
  }
  m.w2.resize(w2_len);
  for (double& w : m.w2) w = rng.gaussian(hidden > 0 ? s2 : s1);
  m.b2 = 0.0;
  return m;
}

double TeacherModel::forward(const double* v) const {
  double u = b2;
  if (hidden == 0) {
    for (uint32_t i = 0; i < in_dim; ++i) u += w2[i] * v[i];
  } else {
    for (uint32_t h = 0; h < hidden; ++h) {
      double a = b1[h];
      const double* row = w1.data() + size_t{h} * in_dim;
      for (uint32_t i = 0; i < in_dim; ++i) a += row[i] * v[i];
      u += w2[h] * std::tanh(a);
    }
  }
  return sigmoid(u);
}

DenseGradient TeacherModel::input_gradient(const double* v) const {
  const double gamma = forward(v);
  DenseGradient g(in_dim, 0.0);
  if (hidden == 0) {
    for (uint32_t i = 0; i < in_dim; ++i) g[i] = gamma * w2[i];
    return g;
  }
  for (uint32_t h = 0; h < hidden; ++h) {
    double a = b1[h];
    const double* row = w1.data() + size_t{h} * in_dim;
    for (uint32_t i = 0; i < in_dim; ++i) a += row[i] * v[i];
    const double th = std::tanh(a);
    const double coef = gamma * w2[h] * (1.0 - th * th);
    for (uint32_t i = 0; i < in_dim; ++i) g[i] += coef * row[i];
  }
  return g;
}

void TeacherModel::step(const std::vector<const double*>& real,
                        const std::vector<const double*>& fake, double lr) {
  if (real.empty() || fake.empty()) throw ParameterError("teacher step: empty batch");
  const uint32_t w2_len = hidden > 0 ? hidden : in_dim;
  std::vector<double> gw1(w1.size(), 0.0), gb1(b1.size(), 0.0), gw2(w2_len, 0.0);
  double gb2 = 0.0;
  std::vector<double> hbuf(hidden);

  const auto accumulate = [&](const double* v, bool is_real, double weight) {
    double u = b2;
    if (hidden == 0) {
      for (uint32_t i = 0; i < in_dim; ++i) u += w2[i] * v[i];
    } else {
      for (uint32_t h = 0; h < hidden; ++h) {
        double a = b1[h];
        const double* row = w1.data() + size_t{h} * in_dim;
        for (uint32_t i = 0; i < in_dim; ++i) a += row[i] * v[i];
        hbuf[h] = std::tanh(a);
        u += w2[h] * hbuf[h];
      }
    }
    const double gamma = sigmoid(u);
    // d loss / d u: real samples push Gamma up, fakes push it down.
    const double du = (is_real ? gamma - 1.0 : gamma) * weight;
    gb2 += du;
    if (hidden == 0) {
      for (uint32_t i = 0; i < in_dim; ++i) gw2[i] += du * v[i];
    } else {
      for (uint32_t h = 0; h < hidden; ++h) {
        gw2[h] += du * hbuf[h];
        const double da = du * w2[h] * (1.0 - hbuf[h] * hbuf[h]);
        gb1[h] += da;
        double* row = gw1.data() + size_t{h} * in_dim;
        for (uint32_t i = 0; i < in_dim; ++i) row[i] += da * v[i];
      }
    }
  };

  for (const double* v : real) accumulate(v, true, 1.0 / static_cast<double>(real.size()));
  for (const double* v : fake) accumulate(v, false, 1.0 / static_cast<double>(fake.size()));

  for (size_t i = 0; i < w1.size(); ++i) w1[i] -= lr * gw1[i];
  for (size_t i = 0; i < b1.size(); ++i) b1[i] -= lr * gb1[i];
  for (size_t i = 0; i < w2.size(); ++i) w2[i] -= lr * gw2[i];
  b2 -= lr * gb2;
}

Generator Generator::init(uint32_t latent, uint32_t classes, uint32_t out_dim, uint32_t hidden,
                          Rng& rng) {
  Generator g;
  g.latent = latent;
  g.in_dim = latent + classes;
  g.out_dim = out_dim;
  g.hidden = hidden;
  const uint32_t mid = hidden > 0 ? hidden : g.in_dim;
  if (hidden > 0) {
    g.w1.resize(size_t{hidden} * g.in_dim);
    g.b1.assign(hidden, 0.0);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(g.in_dim));
    for (double& w : g.w1) w = rng.gaussian(s1);
  }
  g.w2.resize(size_t{out_dim} * mid);
  g.b2.assign(out_dim, 0.0);
  const double s2 = 1.0 / std::sqrt(static_cast<double>(mid));
  for (double& w : g.w2) w = rng.gaussian(s2);
  return g;
}

DenseGradient Generator::forward(const double* z, int32_t label, uint32_t classes) const {
  std::vector<double> in(z, z + latent);
  append_onehot(in, label, classes);
  std::vector<double> mid;
  const double* src = in.data();
  uint32_t src_len = in_dim;
  if (hidden > 0) {
    mid.resize(hidden);
    for (uint32_t h = 0; h < hidden; ++h) {
      double a = b1[h];
      const double* row = w1.data() + size_t{h} * in_dim;
      for (uint32_t i = 0; i < in_dim; ++i) a += row[i] * in[i];
      mid[h] = std::tanh(a);
    }
    src = mid.data();
    src_len = hidden;
  }
  DenseGradient out(out_dim);
  for (uint32_t o = 0; o < out_dim; ++o) {
    double u = b2[o];
    const double* row = w2.data() + size_t{o} * src_len;
    for (uint32_t i = 0; i < src_len; ++i) u += row[i] * src[i];
    out[o] = u;
  }
  return out;
}

double Generator::fit_step(const std::vector<DenseGradient>& inputs,
                           const std::vector<DenseGradient>& targets, double lr) {
  if (inputs.empty() || inputs.size() != targets.size()) {
    throw ParameterError("generator fit: batch mismatch");
  }
  const uint32_t mid_len = hidden > 0 ? hidden : in_dim;
  std::vector<double> gw1(w1.size(), 0.0), gb1(b1.size(), 0.0);
  std::vector<double> gw2(w2.size(), 0.0), gb2(b2.size(), 0.0);
  const double inv_m = 1.0 / static_cast<double>(inputs.size());
  double loss = 0.0;
  std::vector<double> mid(hidden), dmid(hidden);
  for (size_t j = 0; j < inputs.size(); ++j) {
    const auto& in = inputs[j];
    if (in.size() != in_dim) throw ParameterError("generator fit: bad input dim");
    const double* src = in.data();
    if (hidden > 0) {
      for (uint32_t h = 0; h < hidden; ++h) {
        double a = b1[h];
        const double* row = w1.data() + size_t{h} * in_dim;
        for (uint32_t i = 0; i < in_dim; ++i) a += row[i] * in[i];
        mid[h] = std::tanh(a);
      }
      src = mid.data();
    }
    std::fill(dmid.begin(), dmid.end(), 0.0);
    for (uint32_t o = 0; o < out_dim; ++o) {
      double u = b2[o];
      const double* row = w2.data() + size_t{o} * mid_len;
      for (uint32_t i = 0; i < mid_len; ++i) u += row[i] * src[i];
      const double r = u - targets[j][o];
      loss += r * r * inv_m;
      const double dout = 2.0 * r * inv_m;
      gb2[o] += dout;
      double* grow = gw2.data() + size_t{o} * mid_len;
      for (uint32_t i = 0; i < mid_len; ++i) grow[i] += dout * src[i];
      if (hidden > 0) {
        for (uint32_t i = 0; i < hidden; ++i) dmid[i] += dout * row[i];
      }
    }
    if (hidden > 0) {
      for (uint32_t h = 0; h < hidden; ++h) {
        const double da = dmid[h] * (1.0 - mid[h] * mid[h]);
        gb1[h] += da;
        double* grow = gw1.data() + size_t{h} * in_dim;
        for (uint32_t i = 0; i < in_dim; ++i) grow[i] += da * in[i];
      }
    }
  }
  for (size_t i = 0; i < w1.size(); ++i) w1[i] -= lr * gw1[i];
  for (size_t i = 0; i < b1.size(); ++i) b1[i] -= lr * gb1[i];
  for (size_t i = 0; i < w2.size(); ++i) w2[i] -= lr * gw2[i];
  for (size_t i = 0; i < b2.size(); ++i) b2[i] -= lr * gb2[i];
  return loss;
}

PateConfig PateConfig::from_config(const Config& cfg) {
  cfg.check_keys({"dataset", "mode", "teachers", "k", "sigma", "beta", "clip_c",
                  "epsilon_target", "delta", "seed", "records", "iterations", "student_lr",
                  "teacher_lr", "teacher_hidden", "real_batch", "teacher_batch_update",
                  "threads", "probe_every", "dataset_size", "heldout_size", "generator_latent",
                  "generator_hidden", "generator_lr", "generator_steps"});
  PateConfig p;
  p.dataset = cfg.get_string("dataset", p.dataset);
  p.mode = cfg.get_string("mode", p.mode);
  p.teachers = cfg.get_u32("teachers", p.teachers);
  p.k = cfg.get_u32("k", p.k);
  p.sigma = cfg.get_double("sigma", p.sigma);
  p.beta = cfg.get_double("beta", p.beta);
  p.clip_c = cfg.get_double("clip_c", p.clip_c);
  p.epsilon_target = cfg.get_double("epsilon_target", p.epsilon_target);
  p.delta = cfg.get_double("delta", p.delta);
  p.seed = cfg.get_u64("seed", p.seed);
  p.records = cfg.get_u32("records", p.records);
  p.iterations = cfg.get_u64("iterations", p.iterations);
  p.student_lr = cfg.get_double("student_lr", p.student_lr);
  p.teacher_lr = cfg.get_double("teacher_lr", p.teacher_lr);
  p.teacher_hidden = cfg.get_u32("teacher_hidden", p.teacher_hidden);
  p.real_batch = cfg.get_u32("real_batch", p.real_batch);
  p.teacher_batch_update = cfg.get_bool("teacher_batch_update", p.teacher_batch_update);
  p.threads = cfg.get_u32("threads", p.threads);
  p.probe_every = cfg.get_u64("probe_every", p.probe_every);
  p.dataset_size = cfg.get_u64("dataset_size", p.dataset_size);
  p.heldout_size = cfg.get_u64("heldout_size", p.heldout_size);
  p.generator_latent = cfg.get_u32("generator_latent", p.generator_latent);
  p.generator_hidden = cfg.get_u32("generator_hidden", p.generator_hidden);
  p.generator_lr = cfg.get_double("generator_lr", p.generator_lr);
  p.generator_steps = cfg.get_u32("generator_steps", p.generator_steps);
  return p;
}

Config PateConfig::to_config() const {
  Config c;
  c.set("dataset", dataset);
  c.set("mode", mode);
  c.set("teachers", std::to_string(teachers));
  c.set("k", std::to_string(k));
  char buf[64];
  const auto setd = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    c.set(key, buf);
  };
  setd("sigma", sigma);
  setd("beta", beta);
  setd("clip_c", clip_c);
  setd("epsilon_target", epsilon_target);
  setd("delta", delta);
  c.set("seed", std::to_string(seed));
  c.set("records", std::to_string(records));
  c.set("iterations", std::to_string(iterations));
  setd("student_lr", student_lr);
  setd("teacher_lr", teacher_lr);
  c.set("teacher_hidden", std::to_string(teacher_hidden));
  c.set("real_batch", std::to_string(real_batch));
  c.set("teacher_batch_update", teacher_batch_update ? "true" : "false");
  c.set("threads", std::to_string(threads));
  c.set("probe_every", std::to_string(probe_every));
  c.set("dataset_size", std::to_string(dataset_size));
  c.set("heldout_size", std::to_string(heldout_size));
  c.set("generator_latent", std::to_string(generator_latent));
  c.set("generator_hidden", std::to_string(generator_hidden));
  setd("generator_lr", generator_lr);
  c.set("generator_steps", std::to_string(generator_steps));
  return c;
}

void student_update(double* record, const TernaryGradient& g, double gamma) {
  for (uint32_t d = 0; d < g.dim; ++d) {
    record[d] += gamma * static_cast<double>(g.values[d]);
  }
}

double probe_accuracy(const std::vector<double>& x, const std::vector<int32_t>& y, uint32_t dim,
                      const Dataset& heldout) {
  if (y.empty() || heldout.size() == 0) return 0.0;
  if (heldout.dim != dim) throw ParameterError("probe: dimension mismatch");
  // Ridge-regularized logistic regression, full-batch descent.
  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  const double lr = 0.5, reg = 1e-3;
  const double inv_n = 1.0 / static_cast<double>(y.size());
  std::vector<double> gw(dim);
  for (int epoch = 0; epoch < 150; ++epoch) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
      const double* xi = x.data() + i * dim;
      double u = b;
      for (uint32_t d = 0; d < dim; ++d) u += w[d] * xi[d];
      const double err = (sigmoid(u) - static_cast<double>(y[i])) * inv_n;
      for (uint32_t d = 0; d < dim; ++d) gw[d] += err * xi[d];
      gb += err;
    }
    for (uint32_t d = 0; d < dim; ++d) w[d] = w[d] - lr * (gw[d] + reg * w[d]);
    b -= lr * gb;
  }
  size_t correct = 0;
  for (size_t i = 0; i < heldout.size(); ++i) {
    const double* xi = heldout.row(i);
    double u = b;
    for (uint32_t d = 0; d < dim; ++d) u += w[d] * xi[d];
    const int32_t pred = u >= 0.0 ? 1 : 0;
    if (pred == heldout.y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(heldout.size());
}

PateResult run_pate(const PateConfig& cfg) {
  if (cfg.mode != "record" && cfg.mode != "generator") {
    throw ConfigError("pate: mode must be 'record' or 'generator'");
  }
  if (cfg.records < 1) throw ConfigError("pate: records must be >= 1");
  if (!(cfg.beta > 0.0) || cfg.beta > 1.0) throw ConfigError("pate: need 0 < beta <= 1");
  if (cfg.probe_every < 1) throw ConfigError("pate: probe_every must be >= 1");

  const uint64_t data_seed = derive_stream(cfg.seed, StreamTag::kData);
  const Dataset train = make_dataset(cfg.dataset, cfg.dataset_size, data_seed);
  const Dataset heldout =
      make_dataset(cfg.dataset, cfg.heldout_size, derive_stream(data_seed, 1));
  if (cfg.k < 1 || cfg.k > train.dim) throw ConfigError("pate: need 1 <= k <= data dim");
  const PartitionedDataset parts(train, cfg.teachers, derive_stream(data_seed, 2));

  const uint32_t dim = train.dim;
  const uint32_t in_dim = dim + train.classes;
  const uint64_t model_seed = derive_stream(cfg.seed, StreamTag::kModel);
  std::vector<Rng> teacher_rngs;
  teacher_rngs.reserve(cfg.teachers);
  std::vector<TeacherModel> teachers(cfg.teachers);
  for (uint32_t i = 0; i < cfg.teachers; ++i) {
    teacher_rngs.emplace_back(derive_stream(model_seed, i));
    teachers[i] = TeacherModel::init(in_dim, cfg.teacher_hidden, teacher_rngs[i]);
  }

  Rng student_rng(derive_stream(cfg.seed, StreamTag::kStudent));
  Rng noise_rng(derive_stream(cfg.seed, StreamTag::kNoise));
  const uint64_t vote_master = derive_stream(cfg.seed, StreamTag::kVotes);

  const bool use_generator = cfg.mode == "generator";
  Generator gen;
  if (use_generator) {
    gen = Generator::init(cfg.generator_latent, train.classes, dim, cfg.generator_hidden,
                          student_rng);
  }

  // Synthetic records with fixed balanced labels.
  std::vector<DenseGradient> records(cfg.records, DenseGradient(dim, 0.0));
  std::vector<int32_t> labels(cfg.records);
  for (uint32_t j = 0; j < cfg.records; ++j) {
    labels[j] = static_cast<int32_t>(j % train.classes);
    for (uint32_t d = 0; d < dim; ++d) records[j][d] = student_rng.gaussian(0.5);
  }
  std::vector<DenseGradient> gen_inputs(cfg.records);

  PateResult res;
  res.ledger = PrivacyLedger(cfg.delta);
  const double sens = sum_sensitivity(cfg.k);
  AggregationParams ap;
  ap.teachers = cfg.teachers;
  ap.sigma = cfg.sigma;
  ap.beta = cfg.beta;
  ap.k = cfg.k;
  ap.c = cfg.clip_c;

  const auto probe_now = [&]() {
    std::vector<double> xs;
    xs.reserve(size_t{cfg.records} * dim);
    for (const auto& r : records) xs.insert(xs.end(), r.begin(), r.end());
    return probe_accuracy(xs, labels, dim, heldout);
  };

  std::vector<DenseGradient> grads(cfg.teachers);
  std::vector<std::vector<const double*>> real_batches(cfg.teachers);
  // Teachers consume (sample, one-hot label) rows, so real draws get the
  // same label suffix the fakes carry.
  std::vector<std::vector<DenseGradient>> real_samples(cfg.teachers);
  uint64_t round = 0;
  bool halted = false;
  double last_probe = -1.0;

  const auto teacher_pass = [&](const std::vector<const double*>& fake, bool update,
                                const DenseGradient* grad_input) {
    parallel_for(cfg.teachers, cfg.threads, [&](size_t i) {
      if (update) {
        auto& rb = real_batches[i];
        auto& rs = real_samples[i];
        rb.clear();
        rs.assign(cfg.real_batch, DenseGradient());
        const auto h = parts.handle(static_cast<uint32_t>(i));
        for (uint32_t b = 0; b < cfg.real_batch; ++b) {
          const auto local = static_cast<uint32_t>(teacher_rngs[i].next_u64() % h.size());
          const double* row = h.row(local);
          rs[b].assign(row, row + dim);
          append_onehot(rs[b], h.label(local), train.classes);
          rb.push_back(rs[b].data());
        }
        teachers[i].step(rb, fake, cfg.teacher_lr);
      }
      if (grad_input != nullptr) {
        const DenseGradient full = teachers[i].input_gradient(grad_input->data());
        grads[i].assign(full.begin(), full.begin() + dim);
      }
    });
  };

  for (uint64_t iter = 0; iter < cfg.iterations && !halted; ++iter) {
    if (use_generator) {
      for (uint32_t j = 0; j < cfg.records; ++j) {
        std::vector<double> z(cfg.generator_latent);
        for (double& v : z) v = student_rng.gaussian(1.0);
        records[j] = gen.forward(z.data(), labels[j], train.classes);
        z.reserve(cfg.generator_latent + train.classes);
        append_onehot(z, labels[j], train.classes);
        gen_inputs[j] = z;
      }
    }
    std::vector<std::vector<double>> fakes(cfg.records);
    for (uint32_t j = 0; j < cfg.records; ++j) {
      fakes[j] = records[j];
      append_onehot(fakes[j], labels[j], train.classes);
    }
    if (cfg.teacher_batch_update) {
      std::vector<const double*> all_fakes;
      for (const auto& f : fakes) all_fakes.push_back(f.data());
      teacher_pass(all_fakes, true, nullptr);
    }
    for (uint32_t j = 0; j < cfg.records; ++j) {
      if (res.ledger.preview_gaussian_sum(sens, cfg.sigma).epsilon > cfg.epsilon_target) {
        halted = true;
        break;
      }
      DenseGradient fake_input(fakes[j].begin(), fakes[j].end());
      if (cfg.teacher_batch_update) {
        teacher_pass({}, false, &fake_input);
      } else {
        teacher_pass({fake_input.data()}, true, &fake_input);
      }
      const AggregationResult agg =
          dp_topk_agg(grads, ap, derive_stream(vote_master, round), noise_rng, cfg.threads);
      uint32_t sat = 0;
      const double qt = outcome_probability(agg.votes.votes, agg.output, cfg.teachers, cfg.beta,
                                            cfg.sigma, &sat);
      res.saturated_outcome_terms += sat;
      res.ledger.record_vote_aggregation(cfg.k, cfg.sigma, qt);
      student_update(records[j].data(), agg.output, cfg.student_lr);
      fakes[j] = records[j];
      ++round;
      if (round == 1 || round % cfg.probe_every == 0) last_probe = probe_now();
      const auto& hist = res.ledger.history().back();
      res.rounds.push_back(
          PateRoundRecord{round, hist.epsilon_indep, hist.epsilon_dep_uncapped, qt, last_probe});
    }
    if (use_generator) {
      std::vector<DenseGradient> targets = records;
      for (uint32_t s = 0; s < cfg.generator_steps; ++s) {
        gen.fit_step(gen_inputs, targets, cfg.generator_lr);
      }
    }
  }

  if (use_generator) {
    // Final samples from a dedicated stream so they are reproducible and
    // disjoint from training randomness.
    Rng eval_rng(derive_stream(derive_stream(cfg.seed, StreamTag::kStudent), 0xe5a1));
    for (uint32_t j = 0; j < cfg.records; ++j) {
      std::vector<double> z(cfg.generator_latent);
      for (double& v : z) v = eval_rng.gaussian(1.0);
      records[j] = gen.forward(z.data(), labels[j], train.classes);
    }
  }

  res.aggregations = round;
  if (round == 0) res.diagnostic = "privacy budget exhausted before the first aggregation";
  res.final_probe_accuracy = probe_now();
  res.epsilon_indep_final = res.ledger.rounds() > 0 ? res.ledger.epsilon_independent().epsilon : 0.0;
  res.epsilon_dep_uncapped_final =
      res.ledger.rounds() > 0 ? res.ledger.epsilon_dependent_uncapped().epsilon : 0.0;
  res.foreign_accesses = parts.foreign_access_count();
  res.synthetic_dim = dim;
  res.synthetic_y = labels;
  res.synthetic_x.reserve(size_t{cfg.records} * dim);
  for (const auto& r : records) res.synthetic_x.insert(res.synthetic_x.end(), r.begin(), r.end());
  return res;
}

void write_rounds_csv(const PateResult& res, const std::string& config_hash, uint64_t seed,
                      std::ostream& out) {
  out << manifest_comment(config_hash, seed);
  out << "round,epsilon_indep,epsilon_dep_uncapped,q_tilde,probe_accuracy\n";
  for (const auto& r : res.rounds) {
    std::string line = std::to_string(r.round);
    line += ',';
    csv_number(line, r.epsilon_indep);
    line += ',';
    csv_number(line, r.epsilon_dep_uncapped);
    line += ',';
    csv_number(line, r.q_tilde);
    line += ',';
    csv_number(line, r.probe_accuracy);
    line += '\n';
    out << line;
  }
}

void write_ledger_jsonl(const PateResult& res, const std::string& config_hash, uint64_t seed,
                        std::ostream& out) {
  nlohmann::json manifest = {{"type", "manifest"},
                             {"version", kToolkitVersion},
                             {"config_hash", config_hash},
                             {"seed", seed}};
  out << manifest.dump() << "\n";
  res.ledger.export_jsonl(out);
}

void write_synthetic_csv(const PateResult& res, const std::string& config_hash, uint64_t seed,
                         std::ostream& out) {
  out << manifest_comment(config_hash, seed);
  out << "label";
  for (uint32_t d = 0; d < res.synthetic_dim; ++d) out << ",x" << d;
  out << "\n";
  const size_t n = res.synthetic_y.size();
  for (size_t i = 0; i < n; ++i) {
    std::string line = std::to_string(res.synthetic_y[i]);
    for (uint32_t d = 0; d < res.synthetic_dim; ++d) {
      line += ',';
      csv_number(line, res.synthetic_x[i * res.synthetic_dim + d]);
    }
    line += '\n';
    out << line;
  }
}

}  // namespace dpgrad::pate
