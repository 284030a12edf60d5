#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "cmim/data.hpp"
#include "cmim/model.hpp"
#include "cmim/trainer.hpp"

namespace cmim {

/// Frozen teacher visible only through its output distributions. The
/// wrapped parameters are private and never handed to students.
class TeacherOracle {
 public:
  static TeacherOracle from_model(ModelParams params);

  std::size_t num_classes() const noexcept { return classes_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  /// Row-major m x C output probabilities.
  Matrix query(const Matrix& inputs) const;

 private:
  TeacherOracle(std::shared_ptr<const ModelParams> params);
  std::shared_ptr<const ModelParams> params_;
  std::size_t classes_ = 0;
  std::size_t input_dim_ = 0;
};

/// Which class selects the power for a sample when alpha is class-specific.
enum class AlphaKeying { teacher_argmax, ground_truth };

struct AttackConfig {
  std::string name = "KD";
  /// Weight on the KL term; 1 - kd_lambda goes to label cross-entropy.
  double kd_lambda = 0.9;
  /// One entry (shared power) or one per class.
  std::vector<double> alpha{1.0};
  AlphaKeying keying = AlphaKeying::teacher_argmax;
  /// Multiplies the KL term by 1 / alpha^2.
  bool scale_correction = true;
  std::vector<int> student_hidden{32};

  void validate(std::size_t num_classes) const;
};

struct StudentResult {
  ModelParams params;
  /// Test accuracy in percent.
  double accuracy = 0.0;
};

/// Student minimizes (1 - l) H(y, q_s) + l k KL(p_t^a, q_s^a) per sample,
/// with a the power for the sample's keyed class and k = 1/a^2 when
/// scale correction is on. Optimizer settings come from `opt`.
StudentResult train_kd_student(const TeacherOracle& teacher, const AttackConfig& attack,
                               const TrainConfig& opt, const LabeledDataset& train_set,
                               const LabeledDataset& test_set);

/// Trains one LS student per epsilon and keeps the best test accuracy.
StudentResult train_ls_student(const TrainConfig& opt, const std::vector<int>& student_hidden,
                               const std::vector<double>& epsilons,
                               const LabeledDataset& train_set, const LabeledDataset& test_set);

struct AttackResult {
  std::string name;
  double accuracy = 0.0;
};

struct Verdict {
  double ls_accuracy = 0.0;
  std::vector<AttackResult> attacks;
  bool distillable = false;
  std::string best_attack;
};

/// Distillable iff some attack accuracy strictly exceeds the LS accuracy.
/// best_attack is the first attack with the highest accuracy.
Verdict distillability_verdict(double ls_accuracy, const std::vector<AttackResult>& attacks);

struct Defense {
  std::string name;
  std::string checkpoint;
  TeacherOracle teacher;
};

struct VerdictRow {
  std::string defense;
  std::string teacher_ckpt;
  std::string attack;
  double student_acc = 0.0;
  double ls_acc = 0.0;
  bool distillable = false;
};

struct VerdictTable {
  std::vector<VerdictRow> rows;
  /// One verdict per defense, in input order.
  std::vector<Verdict> verdicts;
  /// Weighted sum over classes of the per-class peak CMI on the training
  /// set, one entry per defense.
  std::vector<double> teacher_peak_cmi;
};

struct MatrixOptions {
  TrainConfig opt;
  std::vector<double> ls_epsilons{0.0, 0.05, 0.1, 0.2};
  /// Grid used for the teacher leakage metric.
  double beta = 2.0;
  int grid_size = 50;
};

VerdictTable run_matrix(const std::vector<Defense>& defenses,
                        const std::vector<AttackConfig>& attacks, const MatrixOptions& options,
                        const LabeledDataset& train_set, const LabeledDataset& test_set);

/// Up arrow when the knockoff student beats the LS student.
inline const char* verdict_marker(bool distillable) { return distillable ? "↑" : "↓"; }

/// CSV: defense,teacher_ckpt,attack,student_acc,ls_acc,distillable,marker.
void write_verdict_csv(std::ostream& out, const VerdictTable& table);

}  // namespace cmim
