#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cmim/cmi.hpp"
#include "cmim/data.hpp"
#include "cmim/model.hpp"

namespace cmim {

enum class Method { ce, ls, cmim };
/// How the per-class batches used for the centroid update are drawn:
/// a fresh uniform sample every step, or consecutive chunks of a per-epoch
/// shuffle of each class.
enum class ClassBatchMode { fresh, partition };

std::string to_string(Method m);
std::string to_string(AlphaMode m);
std::string to_string(ClassBatchMode m);
Method parse_method(const std::string& s);
AlphaMode parse_alpha_mode(const std::string& s);
ClassBatchMode parse_class_batch_mode(const std::string& s);

struct TrainConfig {
  double lambda = 0.5;
  double beta = 2.0;
  double omega = 20.0;
  int n_alpha = 50;
  int epochs = 100;
  int batch_size = 64;
  /// 0 selects max(8, batch_size / C).
  int per_class_batch_size = 0;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Fractions of the run after which the learning rate is multiplied by lr_gamma.
  std::vector<double> lr_milestones{0.6, 0.8};
  double lr_gamma = 0.1;
  double ls_epsilon = 0.1;
  std::uint64_t seed = 0;
  AlphaMode alpha_mode = AlphaMode::random;
  ClassBatchMode class_batch_mode = ClassBatchMode::fresh;
  std::vector<int> hidden{32};
  /// Points on [0, beta] for the end-of-training CMI profile.
  int profile_grid_size = 50;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  std::size_t class_batch_size(std::size_t num_classes) const;
  double lr_at(int epoch) const;
};

/// Q[y][i]: centroid of class y's outputs transformed with alphas[i].
struct DummyCentroids {
  std::size_t num_classes = 0;
  AlphaSamples alphas;
  /// num_classes * alphas.size() rows of num_classes entries.
  std::vector<double> values;

  std::span<const double> at(std::size_t y, std::size_t i) const {
    return {values.data() + (y * alphas.size() + i) * num_classes, num_classes};
  }
  ProbVector prob(std::size_t y, std::size_t i) const;
};

struct Batch {
  Matrix inputs;
  std::vector<int> labels;
};

struct ClassBatch {
  std::size_t label = 0;
  Matrix inputs;
};

/// Q[y][i] = mean over class batch y of softmax(alpha_i * logits), which
/// equals the mean power-transformed output. Every class needs exactly one
/// non-empty batch.
DummyCentroids update_dummy_centroids(const ModelParams& params,
                                      std::span<const ClassBatch> class_batches,
                                      const AlphaSamples& alphas);

struct ObjectiveTerms {
  double total = 0.0;
  double ce_term = 0.0;
  double cmi_term = 0.0;
};

/// One class's contribution to the smooth-max penalty and its gradient
/// w.r.t. that class batch's logits, with Q held fixed.
struct ClassPenalty {
  double term = 0.0;
  std::vector<double> mean_kl;
  Matrix dlogits;
};

ClassPenalty cmim_grad_logits(const Matrix& class_logits, const DummyCentroids& q,
                              std::size_t label, double omega, double lambda,
                              double class_weight);

/// Mean CE over batch plus (lambda/omega) sum_y w_y ln((1/N) sum_i
/// exp(omega meanKL_{y,i})).
ObjectiveTerms cmim_objective(const ModelParams& params, const Batch& batch,
                              std::span<const ClassBatch> class_batches,
                              const DummyCentroids& q, const TrainConfig& cfg,
                              std::span<const double> class_weights);

struct ObjectiveAndGrad {
  ObjectiveTerms terms;
  ModelParams grad;
};

ObjectiveAndGrad cmim_objective_and_grad(const ModelParams& params, const Batch& batch,
                                         std::span<const ClassBatch> class_batches,
                                         const DummyCentroids& q, const TrainConfig& cfg,
                                         std::span<const double> class_weights);

/// (1 - eps) H(y, q) + eps H(u, q) averaged over rows, plus its logit
/// gradient. eps = 0 is plain cross-entropy.
struct DataLoss {
  double loss = 0.0;
  Matrix dlogits;
};
DataLoss smoothed_ce(const Matrix& logits, std::span<const int> labels, double epsilon);

struct EpochStats {
  int epoch = 0;
  double ce_loss = 0.0;
  double cmi_term = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  CmiProfile final_profile;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

/// Percentage of rows whose argmax prediction equals the label.
double accuracy(const ModelParams& params, const LabeledDataset& data);

/// End-of-training CMI profile over the training clusters.
CmiProfile model_profile(const ModelParams& params, const LabeledDataset& data, double beta,
                         int grid_size, double omega);

TrainResult train(Method method, const TrainConfig& cfg, const LabeledDataset& train_set,
                  const LabeledDataset* test_set = nullptr);
TrainResult train_cmim(const TrainConfig& cfg, const LabeledDataset& train_set,
                       const LabeledDataset* test_set = nullptr);
TrainResult train_ce(const TrainConfig& cfg, const LabeledDataset& train_set,
                     const LabeledDataset* test_set = nullptr);
TrainResult train_ls(const TrainConfig& cfg, const LabeledDataset& train_set,
                     const LabeledDataset* test_set = nullptr);

/// Config echo stored in checkpoints. It records only what influences the
/// trained weights, so CMIM with lambda = 0 and LS with epsilon = 0 echo
/// exactly as CE.
nlohmann::json effective_config(Method method, const TrainConfig& cfg);
Checkpoint make_checkpoint(Method method, const TrainConfig& cfg, const ModelParams& params);

/// CSV: epoch,ce_loss,cmi_term,train_acc,test_acc.
void write_report_csv(std::ostream& out, const TrainReport& report);

}  // namespace cmim
