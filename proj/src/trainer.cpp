#include "cmim/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "cmim/parallel.hpp"

namespace cmim {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double log_floored(double x) { return std::log(x < kProbEpsilon ? kProbEpsilon : x); }

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::ce: return "ce";
    case Method::ls: return "ls";
    case Method::cmim: return "cmim";
  }
  return "?";
}

std::string to_string(AlphaMode m) { return m == AlphaMode::grid ? "grid" : "random"; }

std::string to_string(ClassBatchMode m) {
  return m == ClassBatchMode::fresh ? "fresh" : "partition";
}

Method parse_method(const std::string& s) {
  if (s == "ce") return Method::ce;
  if (s == "ls") return Method::ls;
  if (s == "cmim") return Method::cmim;
  throw std::invalid_argument("method: expected one of cmim, ce, ls (got '" + s + "')");
}

AlphaMode parse_alpha_mode(const std::string& s) {
  if (s == "grid") return AlphaMode::grid;
  if (s == "random") return AlphaMode::random;
  throw std::invalid_argument("alpha_mode: expected grid or random (got '" + s + "')");
}

ClassBatchMode parse_class_batch_mode(const std::string& s) {
  if (s == "fresh") return ClassBatchMode::fresh;
  if (s == "partition") return ClassBatchMode::partition;
  throw std::invalid_argument("class_batch_mode: expected fresh or partition (got '" + s + "')");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument(field + ": " + why);
  };
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda", "must be finite and >= 0");
  if (!(beta > 0.0) || !std::isfinite(beta)) fail("beta", "must be finite and > 0");
  if (!(omega > 0.0) || !std::isfinite(omega)) fail("omega", "must be finite and > 0");
  if (n_alpha < 1) fail("n_alpha", "must be >= 1");
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (per_class_batch_size < 0) fail("per_class_batch_size", "must be >= 0 (0 = auto)");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr", "must be finite and > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay", "must be >= 0");
  for (double m : lr_milestones) {
    if (!(m >= 0.0 && m <= 1.0)) fail("lr_milestones", "entries must be fractions in [0, 1]");
  }
  if (!(lr_gamma > 0.0) || !std::isfinite(lr_gamma)) fail("lr_gamma", "must be > 0");
  if (!(ls_epsilon >= 0.0 && ls_epsilon < 1.0)) fail("ls_epsilon", "must be in [0, 1)");
  for (int h : hidden) {
    if (h < 1) fail("hidden", "layer widths must be >= 1");
  }
  if (profile_grid_size < 1) fail("profile_grid_size", "must be >= 1");
}

std::size_t TrainConfig::class_batch_size(std::size_t num_classes) const {
  if (per_class_batch_size > 0) return static_cast<std::size_t>(per_class_batch_size);
  return std::max<std::size_t>(8, static_cast<std::size_t>(batch_size) / num_classes);
}

double TrainConfig::lr_at(int epoch) const {
  double rate = lr;
  for (double m : lr_milestones) {
    if (epoch >= static_cast<int>(std::floor(m * epochs))) rate *= lr_gamma;
  }
  return rate;
}

ProbVector DummyCentroids::prob(std::size_t y, std::size_t i) const {
  auto row = at(y, i);
  return ProbVector(std::vector<double>(row.begin(), row.end()));
}

DummyCentroids update_dummy_centroids(const ModelParams& params,
                                      std::span<const ClassBatch> class_batches,
                                      const AlphaSamples& alphas) {
  const std::size_t c = params.num_classes();
  const std::size_t n = alphas.size();
  if (n == 0) throw std::domain_error("update_dummy_centroids: no alpha samples");
  std::vector<bool> seen(c, false);
  for (const auto& b : class_batches) {
    if (b.label >= c) throw std::domain_error("update_dummy_centroids: label out of range");
    if (b.inputs.rows() == 0) {
      throw std::domain_error("update_dummy_centroids: empty batch for class " +
                              std::to_string(b.label));
    }
    if (seen[b.label]) throw std::domain_error("update_dummy_centroids: duplicate class batch");
    seen[b.label] = true;
  }
  for (std::size_t y = 0; y < c; ++y) {
    if (!seen[y]) {
      throw std::domain_error("update_dummy_centroids: no batch for class " + std::to_string(y));
    }
  }
  DummyCentroids q;
  q.num_classes = c;
  q.alphas = alphas;
  q.values.assign(c * n * c, 0.0);
  parallel_for(class_batches.size(), [&](std::size_t b) {
    const ClassBatch& batch = class_batches[b];
    const Matrix logits = forward_logits(params, batch.inputs);
    std::vector<double> p(c);
    for (std::size_t i = 0; i < n; ++i) {
      double* dst = q.values.data() + (batch.label * n + i) * c;
      std::vector<CompensatedSum> acc(c);
      for (std::size_t r = 0; r < logits.rows(); ++r) {
        kernels::softmax(logits.row(r), alphas.values[i], p);
        for (std::size_t j = 0; j < c; ++j) acc[j].add(p[j]);
      }
      for (std::size_t j = 0; j < c; ++j) {
        dst[j] = acc[j].value() / static_cast<double>(logits.rows());
      }
    }
  });
  return q;
}

ClassPenalty cmim_grad_logits(const Matrix& class_logits, const DummyCentroids& q,
                              std::size_t label, double omega, double lambda,
                              double class_weight) {
  const std::size_t c = q.num_classes;
  const std::size_t n = q.alphas.size();
  const std::size_t m = class_logits.rows();
  if (class_logits.cols() != c) throw ShapeError("cmim_grad_logits: logits width != class count");
  if (label >= c) throw std::domain_error("cmim_grad_logits: label out of range");
  if (m == 0) throw std::domain_error("cmim_grad_logits: empty class batch");

  // log p^{alpha_i} for every (sample, alpha).
  std::vector<double> logp(m * n * c);
  std::vector<double> kl(m * n);
  std::vector<double> log_q(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    auto qi = q.at(label, i);
    for (std::size_t j = 0; j < c; ++j) log_q[i * c + j] = log_floored(qi[j]);
  }
  ClassPenalty out;
  out.mean_kl.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    CompensatedSum mean;
    for (std::size_t r = 0; r < m; ++r) {
      std::span<double> lp(logp.data() + (r * n + i) * c, c);
      kernels::log_softmax(class_logits.row(r), q.alphas.values[i], lp);
      CompensatedSum acc;
      for (std::size_t j = 0; j < c; ++j) acc.add(std::exp(lp[j]) * (lp[j] - log_q[i * c + j]));
      kl[r * n + i] = acc.value();
      mean.add(acc.value());
    }
    out.mean_kl[i] = mean.value() / static_cast<double>(m);
  }

  const double top = *std::max_element(out.mean_kl.begin(), out.mean_kl.end());
  std::vector<double> mix(n);
  CompensatedSum z;
  for (std::size_t i = 0; i < n; ++i) {
    mix[i] = std::exp(omega * (out.mean_kl[i] - top));
    z.add(mix[i]);
  }
  for (double& w : mix) w /= z.value();
  out.term = lambda * class_weight *
             (top + std::log(z.value() / static_cast<double>(n)) / omega);

  out.dlogits = Matrix(m, c);
  for (std::size_t r = 0; r < m; ++r) {
    auto d = out.dlogits.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      const double scale =
          lambda * class_weight * mix[i] * q.alphas.values[i] / static_cast<double>(m);
      if (scale == 0.0) continue;
      const double* lp = logp.data() + (r * n + i) * c;
      const double klr = kl[r * n + i];
      for (std::size_t j = 0; j < c; ++j) {
        d[j] += scale * std::exp(lp[j]) * ((lp[j] - log_q[i * c + j]) - klr);
      }
    }
  }
  return out;
}

DataLoss smoothed_ce(const Matrix& logits, std::span<const int> labels, double epsilon) {
  const std::size_t m = logits.rows();
  const std::size_t c = logits.cols();
  if (labels.size() != m) throw ShapeError("smoothed_ce: label count != rows");
  if (m == 0) throw std::domain_error("smoothed_ce: empty batch");
  DataLoss out;
  out.dlogits = Matrix(m, c);
  std::vector<double> lp(c);
  CompensatedSum total;
  const double uniform = 1.0 / static_cast<double>(c);
  for (std::size_t r = 0; r < m; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw std::domain_error("smoothed_ce: label out of range");
    kernels::log_softmax(logits.row(r), 1.0, lp);
    double loss = -(1.0 - epsilon) * lp[static_cast<std::size_t>(y)];
    if (epsilon > 0.0) {
      CompensatedSum h;
      for (double v : lp) h.add(-v);
      loss += epsilon * uniform * h.value();
    }
    total.add(loss);
    auto d = out.dlogits.row(r);
    for (std::size_t j = 0; j < c; ++j) {
      double target = epsilon * uniform;
      if (j == static_cast<std::size_t>(y)) target += 1.0 - epsilon;
      d[j] = (std::exp(lp[j]) - target) / static_cast<double>(m);
    }
  }
  out.loss = total.value() / static_cast<double>(m);
  return out;
}

ObjectiveAndGrad cmim_objective_and_grad(const ModelParams& params, const Batch& batch,
                                         std::span<const ClassBatch> class_batches,
                                         const DummyCentroids& q, const TrainConfig& cfg,
                                         std::span<const double> class_weights) {
  const std::size_t c = params.num_classes();
  if (q.num_classes != c || q.values.size() != c * q.alphas.size() * c) {
    throw ShapeError("cmim_objective: dummy centroids misaligned with model");
  }
  if (class_weights.size() != c) throw ShapeError("cmim_objective: one class weight per class");

  ObjectiveAndGrad out;
  const ForwardResult fwd = forward_batch(params, batch.inputs);
  const DataLoss ce = smoothed_ce(fwd.logits, batch.labels, 0.0);
  out.grad = backprop_logits(params, fwd.cache, ce.dlogits);
  out.terms.ce_term = ce.loss;

  std::vector<ClassPenalty> penalties(class_batches.size());
  std::vector<ModelParams> grads(class_batches.size());
  parallel_for(class_batches.size(), [&](std::size_t b) {
    const ClassBatch& cb = class_batches[b];
    if (cb.label >= c) throw std::domain_error("cmim_objective: class batch label out of range");
    const ForwardResult f = forward_batch(params, cb.inputs);
    penalties[b] = cmim_grad_logits(f.logits, q, cb.label, cfg.omega, cfg.lambda,
                                    class_weights[cb.label]);
    grads[b] = backprop_logits(params, f.cache, penalties[b].dlogits);
  });
  CompensatedSum penalty;
  for (std::size_t b = 0; b < class_batches.size(); ++b) {
    penalty.add(penalties[b].term);
    accumulate(out.grad, grads[b]);
  }
  out.terms.cmi_term = penalty.value();
  out.terms.total = out.terms.ce_term + out.terms.cmi_term;
  return out;
}

ObjectiveTerms cmim_objective(const ModelParams& params, const Batch& batch,
                              std::span<const ClassBatch> class_batches,
                              const DummyCentroids& q, const TrainConfig& cfg,
                              std::span<const double> class_weights) {
  return cmim_objective_and_grad(params, batch, class_batches, q, cfg, class_weights).terms;
}

double accuracy(const ModelParams& params, const LabeledDataset& data) {
  if (data.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  const Matrix logits = forward_logits(params, data.features);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == data.labels[r]) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(data.size());
}

CmiProfile model_profile(const ModelParams& params, const LabeledDataset& data, double beta,
                         int grid_size, double omega) {
  if (params.num_classes() != data.num_classes) {
    throw ShapeError("model_profile: model has " + std::to_string(params.num_classes()) +
                     " classes, dataset has " + std::to_string(data.num_classes));
  }
  const Matrix probs = predict_probs(params, data.features);
  const auto clusters = ClassClusters::from_outputs(probs.data(), data.labels, data.num_classes);
  return cmi_profile(clusters, AlphaSamples::linspace(beta, static_cast<std::size_t>(grid_size)),
                     omega);
}

namespace {

/// Cycles through a per-epoch shuffle of each class.
class PartitionSampler {
 public:
  PartitionSampler(const LabeledDataset& data, std::mt19937_64& rng) : order_(data.class_index) {
    for (auto& o : order_) std::shuffle(o.begin(), o.end(), rng);
    cursor_.assign(order_.size(), 0);
  }
  std::vector<std::size_t> next(std::size_t y, std::size_t size) {
    std::vector<std::size_t> out;
    out.reserve(size);
    for (std::size_t k = 0; k < size; ++k) {
      out.push_back(order_[y][cursor_[y]]);
      cursor_[y] = (cursor_[y] + 1) % order_[y].size();
    }
    return out;
  }

 private:
  std::vector<std::vector<std::size_t>> order_;
  std::vector<std::size_t> cursor_;
};

TrainResult run_training(Method method, const TrainConfig& cfg, const LabeledDataset& train_set,
                         const LabeledDataset* test_set) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t c = train_set.num_classes;
  if (c < 2) throw std::invalid_argument("training needs at least two classes");
  for (std::size_t y = 0; y < c; ++y) {
    if (train_set.class_index[y].empty()) {
      throw std::invalid_argument("class " + std::to_string(y) + " is absent from the training set");
    }
  }
  if (test_set && (test_set->num_classes != c || test_set->dim() != train_set.dim())) {
    throw ShapeError("test set does not match the training set's shape");
  }

  const bool use_cmi = method == Method::cmim && cfg.lambda > 0.0;
  const double epsilon = method == Method::ls ? cfg.ls_epsilon : 0.0;

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> dims{static_cast<int>(train_set.dim())};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(static_cast<int>(c));
  TrainResult result;
  result.params = init_params(dims, rng);
  SgdState sgd;

  const std::vector<double> class_weights = train_set.class_frequencies();
  const std::size_t class_batch = cfg.class_batch_size(c);
  const auto n_alpha = static_cast<std::size_t>(cfg.n_alpha);
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(train_set.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    AlphaSamples alphas;
    if (use_cmi) {
      alphas = cfg.alpha_mode == AlphaMode::random ? AlphaSamples::random(cfg.beta, n_alpha, rng)
                                                   : AlphaSamples::grid(cfg.beta, n_alpha);
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::optional<PartitionSampler> partition;
    if (use_cmi && cfg.class_batch_mode == ClassBatchMode::partition) partition.emplace(train_set, rng);

    CompensatedSum ce_sum;
    CompensatedSum cmi_sum;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t end = std::min(order.size(), begin + batch_size);
      std::span<const std::size_t> rows(order.data() + begin, end - begin);
      Batch batch;
      batch.inputs = train_set.features.gather_rows(rows);
      for (std::size_t r : rows) batch.labels.push_back(train_set.labels[r]);

      ModelParams grad;
      if (use_cmi) {
        std::vector<ClassBatch> class_batches;
        class_batches.reserve(c);
        for (std::size_t y = 0; y < c; ++y) {
          const auto idx = partition ? partition->next(y, class_batch)
                                     : per_class_batch(train_set, y, class_batch, rng);
          class_batches.push_back({y, train_set.features.gather_rows(idx)});
        }
        const DummyCentroids q = update_dummy_centroids(result.params, class_batches, alphas);
        auto obj = cmim_objective_and_grad(result.params, batch, class_batches, q, cfg,
                                           class_weights);
        ce_sum.add(obj.terms.ce_term);
        cmi_sum.add(obj.terms.cmi_term);
        grad = std::move(obj.grad);
      } else {
        const ForwardResult fwd = forward_batch(result.params, batch.inputs);
        const DataLoss loss = smoothed_ce(fwd.logits, batch.labels, epsilon);
        ce_sum.add(loss.loss);
        grad = backprop_logits(result.params, fwd.cache, loss.dlogits);
      }
      sgd_step(result.params, grad, sgd, lr, cfg.momentum, cfg.weight_decay);
      ++steps;
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.ce_loss = ce_sum.value() / static_cast<double>(steps);
    stats.cmi_term = cmi_sum.value() / static_cast<double>(steps);
    stats.train_acc = accuracy(result.params, train_set);
    stats.test_acc = test_set ? accuracy(result.params, *test_set)
                              : std::numeric_limits<double>::quiet_NaN();
    result.report.epochs.push_back(stats);
  }
  result.report.final_profile =
      model_profile(result.params, train_set, cfg.beta, cfg.profile_grid_size, cfg.omega);
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

TrainResult train(Method method, const TrainConfig& cfg, const LabeledDataset& train_set,
                  const LabeledDataset* test_set) {
  return run_training(method, cfg, train_set, test_set);
}

TrainResult train_cmim(const TrainConfig& cfg, const LabeledDataset& train_set,
                       const LabeledDataset* test_set) {
  return run_training(Method::cmim, cfg, train_set, test_set);
}

TrainResult train_ce(const TrainConfig& cfg, const LabeledDataset& train_set,
                     const LabeledDataset* test_set) {
  return run_training(Method::ce, cfg, train_set, test_set);
}

TrainResult train_ls(const TrainConfig& cfg, const LabeledDataset& train_set,
                     const LabeledDataset* test_set) {
  return run_training(Method::ls, cfg, train_set, test_set);
}

json effective_config(Method method, const TrainConfig& cfg) {
  json echo;
  echo["hidden"] = cfg.hidden;
  echo["epochs"] = cfg.epochs;
  echo["batch_size"] = cfg.batch_size;
  echo["lr"] = cfg.lr;
  echo["momentum"] = cfg.momentum;
  echo["weight_decay"] = cfg.weight_decay;
  echo["lr_milestones"] = cfg.lr_milestones;
  echo["lr_gamma"] = cfg.lr_gamma;
  echo["seed"] = cfg.seed;
  json objective;
  if (method == Method::cmim && cfg.lambda > 0.0) {
    objective["loss"] = "cmim";
    objective["lambda"] = cfg.lambda;
    objective["beta"] = cfg.beta;
    objective["omega"] = cfg.omega;
    objective["n_alpha"] = cfg.n_alpha;
    objective["alpha_mode"] = to_string(cfg.alpha_mode);
    objective["per_class_batch_size"] = cfg.per_class_batch_size;
    objective["class_batch_mode"] = to_string(cfg.class_batch_mode);
  } else if (method == Method::ls && cfg.ls_epsilon > 0.0) {
    objective["loss"] = "ls";
    objective["epsilon"] = cfg.ls_epsilon;
  } else {
    objective["loss"] = "ce";
  }
  echo["objective"] = std::move(objective);
  return echo;
}

Checkpoint make_checkpoint(Method method, const TrainConfig& cfg, const ModelParams& params) {
  Checkpoint ckpt;
  ckpt.params = params;
  ckpt.seed = cfg.seed;
  ckpt.config = effective_config(method, cfg);
  return ckpt;
}

void write_report_csv(std::ostream& out, const TrainReport& report) {
  out << "epoch,ce_loss,cmi_term,train_acc,test_acc\n";
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << fmt_double(e.ce_loss) << ',' << fmt_double(e.cmi_term) << ','
        << fmt_double(e.train_acc) << ',' << fmt_double(e.test_acc) << '\n';
  }
}

}  // namespace cmim
