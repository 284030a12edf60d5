#include "cmim/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "cmim/parallel.hpp"

namespace cmim {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<int> student_dims(const LabeledDataset& data, const std::vector<int>& hidden) {
  std::vector<int> dims{static_cast<int>(data.dim())};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(static_cast<int>(data.num_classes));
  return dims;
}

}  // namespace

TeacherOracle::TeacherOracle(std::shared_ptr<const ModelParams> params)
    : params_(std::move(params)),
      classes_(params_->num_classes()),
      input_dim_(params_->input_dim()) {}

TeacherOracle TeacherOracle::from_model(ModelParams params) {
  validate(params);
  return TeacherOracle(std::make_shared<const ModelParams>(std::move(params)));
}

Matrix TeacherOracle::query(const Matrix& inputs) const { return predict_probs(*params_, inputs); }

void AttackConfig::validate(std::size_t num_classes) const {
  if (!(kd_lambda >= 0.0 && kd_lambda <= 1.0)) {
    throw std::invalid_argument("attack '" + name + "': kd_lambda must be in [0, 1]");
  }
  if (alpha.size() != 1 && alpha.size() != num_classes) {
    throw std::invalid_argument("attack '" + name + "': alpha needs 1 or " +
                                std::to_string(num_classes) + " entries");
  }
  for (double a : alpha) {
    if (!(a > 0.0) || !std::isfinite(a)) {
      throw std::domain_error("attack '" + name + "': alpha must be > 0");
    }
  }
  for (int h : student_hidden) {
    if (h < 1) throw std::invalid_argument("attack '" + name + "': bad student width");
  }
}

StudentResult train_kd_student(const TeacherOracle& teacher, const AttackConfig& attack,
                               const TrainConfig& opt, const LabeledDataset& train_set,
                               const LabeledDataset& test_set) {
  opt.validate();
  const std::size_t c = train_set.num_classes;
  attack.validate(c);
  if (teacher.num_classes() != c) {
    throw ShapeError("teacher has " + std::to_string(teacher.num_classes()) +
                     " classes, dataset has " + std::to_string(c));
  }
  if (teacher.input_dim() != train_set.dim()) throw ShapeError("teacher input width mismatch");

  // Black-box outputs are queried once; the student sees nothing else.
  const Matrix teacher_probs = teacher.query(train_set.features);
  std::vector<double> sample_alpha(train_set.size());
  for (std::size_t r = 0; r < train_set.size(); ++r) {
    std::size_t key = 0;
    if (attack.alpha.size() > 1) {
      key = attack.keying == AlphaKeying::teacher_argmax
                ? argmax(teacher_probs.row(r))
                : static_cast<std::size_t>(train_set.labels[r]);
    }
    sample_alpha[r] = attack.alpha[key];
  }
  Matrix targets(train_set.size(), c);
  for (std::size_t r = 0; r < train_set.size(); ++r) {
    kernels::power_transform(teacher_probs.row(r), sample_alpha[r], targets.row(r));
  }

  // Mirrors the CE training loop draw-for-draw so kd_lambda = 0 reproduces it.
  std::mt19937_64 rng(opt.seed);
  StudentResult result;
  result.params = init_params(student_dims(train_set, attack.student_hidden), rng);
  SgdState sgd;
  const double lam = attack.kd_lambda;
  const auto batch_size = static_cast<std::size_t>(opt.batch_size);
  std::vector<std::size_t> order(train_set.size());
  std::vector<double> lp(c);
  std::vector<double> lpa(c);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    const double lr = opt.lr_at(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
      const std::size_t end = std::min(order.size(), begin + batch_size);
      std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const Matrix inputs = train_set.features.gather_rows(rows);
      const ForwardResult fwd = forward_batch(result.params, inputs);
      const auto m = static_cast<double>(rows.size());
      Matrix dlogits(rows.size(), c);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t r = rows[k];
        const auto y = static_cast<std::size_t>(train_set.labels[r]);
        kernels::log_softmax(fwd.logits.row(k), 1.0, lp);
        auto d = dlogits.row(k);
        for (std::size_t j = 0; j < c; ++j) {
          d[j] = (1.0 - lam) * ((std::exp(lp[j]) - (j == y ? 1.0 : 0.0)) / m);
        }
        if (lam > 0.0) {
          const double a = sample_alpha[r];
          const double kappa = attack.scale_correction ? 1.0 / (a * a) : 1.0;
          kernels::log_softmax(fwd.logits.row(k), a, lpa);
          auto t = targets.row(r);
          // d/dz KL(t, softmax(a z)) = a (softmax(a z) - t)
          for (std::size_t j = 0; j < c; ++j) {
            d[j] += lam * kappa * a * (std::exp(lpa[j]) - t[j]) / m;
          }
        }
      }
      const ModelParams grad = backprop_logits(result.params, fwd.cache, dlogits);
      sgd_step(result.params, grad, sgd, lr, opt.momentum, opt.weight_decay);
    }
  }
  result.accuracy = accuracy(result.params, test_set);
  return result;
}

StudentResult train_ls_student(const TrainConfig& opt, const std::vector<int>& student_hidden,
                               const std::vector<double>& epsilons,
                               const LabeledDataset& train_set, const LabeledDataset& test_set) {
  if (epsilons.empty()) throw std::invalid_argument("train_ls_student: empty epsilon list");
  std::vector<StudentResult> runs(epsilons.size());
  parallel_for(epsilons.size(), [&](std::size_t k) {
    TrainConfig cfg = opt;
    cfg.hidden = student_hidden;
    cfg.ls_epsilon = epsilons[k];
    cfg.profile_grid_size = 1;
    auto trained = train_ls(cfg, train_set, nullptr);
    runs[k].params = std::move(trained.params);
    runs[k].accuracy = accuracy(runs[k].params, test_set);
  });
  std::size_t best = 0;
  for (std::size_t k = 1; k < runs.size(); ++k) {
    if (runs[k].accuracy > runs[best].accuracy) best = k;
  }
  return std::move(runs[best]);
}

Verdict distillability_verdict(double ls_accuracy, const std::vector<AttackResult>& attacks) {
  if (attacks.empty()) throw std::invalid_argument("distillability_verdict: no attacks");
  Verdict v;
  v.ls_accuracy = ls_accuracy;
  v.attacks = attacks;
  std::size_t best = 0;
  for (std::size_t k = 1; k < attacks.size(); ++k) {
    if (attacks[k].accuracy > attacks[best].accuracy) best = k;
  }
  v.best_attack = attacks[best].name;
  v.distillable = attacks[best].accuracy > ls_accuracy;
  return v;
}

VerdictTable run_matrix(const std::vector<Defense>& defenses,
                        const std::vector<AttackConfig>& attacks, const MatrixOptions& options,
                        const LabeledDataset& train_set, const LabeledDataset& test_set) {
  if (defenses.empty()) throw std::invalid_argument("run_matrix: no defenses");
  if (attacks.empty()) throw std::invalid_argument("run_matrix: no attacks");
  const std::size_t c = train_set.num_classes;
  for (const auto& a : attacks) {
    a.validate(c);
    if (a.student_hidden != attacks.front().student_hidden) {
      throw std::invalid_argument("run_matrix: all attacks must share one student architecture");
    }
  }
  for (const auto& d : defenses) {
    if (d.teacher.num_classes() != c) {
      throw ShapeError("defense '" + d.name + "' has a different class count than the dataset");
    }
  }

  const StudentResult ls = train_ls_student(options.opt, attacks.front().student_hidden,
                                            options.ls_epsilons, train_set, test_set);

  const std::size_t cells = defenses.size() * attacks.size();
  std::vector<double> student_acc(cells);
  parallel_for(cells, [&](std::size_t cell) {
    const auto& d = defenses[cell / attacks.size()];
    const auto& a = attacks[cell % attacks.size()];
    student_acc[cell] = train_kd_student(d.teacher, a, options.opt, train_set, test_set).accuracy;
  });

  VerdictTable table;
  for (std::size_t di = 0; di < defenses.size(); ++di) {
    std::vector<AttackResult> results;
    for (std::size_t ai = 0; ai < attacks.size(); ++ai) {
      const double acc = student_acc[di * attacks.size() + ai];
      results.push_back({attacks[ai].name, acc});
      table.rows.push_back({defenses[di].name, defenses[di].checkpoint, attacks[ai].name, acc,
                            ls.accuracy, acc > ls.accuracy});
    }
    table.verdicts.push_back(distillability_verdict(ls.accuracy, results));

    const Matrix probs = defenses[di].teacher.query(train_set.features);
    const auto clusters = ClassClusters::from_outputs(probs.data(), train_set.labels, c);
    const auto profile = cmi_profile(
        clusters, AlphaSamples::linspace(options.beta, static_cast<std::size_t>(options.grid_size)),
        options.opt.omega);
    table.teacher_peak_cmi.push_back(profile.peak_dataset_cmi());
  }
  return table;
}

void write_verdict_csv(std::ostream& out, const VerdictTable& table) {
  out << "defense,teacher_ckpt,attack,student_acc,ls_acc,distillable,marker\n";
  for (const auto& r : table.rows) {
    out << r.defense << ',' << r.teacher_ckpt << ',' << r.attack << ',' << fmt_double(r.student_acc)
        << ',' << fmt_double(r.ls_acc) << ',' << (r.distillable ? 1 : 0) << ','
        << verdict_marker(r.distillable) << '\n';
  }
}

}  // namespace cmim
