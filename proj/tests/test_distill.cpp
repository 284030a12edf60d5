#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <sstream>

#include "cmim/distill.hpp"
#include "cmim/simplex.hpp"
#include "test_util.hpp"

using namespace cmim;
using doctest::Approx;

namespace {

TrainConfig student_opt() {
  TrainConfig c;
  c.epochs = 8;
  c.hidden = {8};
  c.batch_size = 32;
  c.seed = 4;
  return c;
}

TrainTest data() {
  MixtureSpec ms;
  ms.seed = 2;
  ms.classes = 3;
  ms.per_class = 50;
  return generate_gaussian_mixture(ms);
}

TeacherOracle ce_teacher(const TrainTest& d, std::uint64_t seed = 1) {
  auto c = student_opt();
  c.seed = seed;
  c.epochs = 15;
  return TeacherOracle::from_model(train_ce(c, d.train, &d.test).params);
}

AttackConfig kd(double lambda, std::vector<double> alpha) {
  AttackConfig a;
  a.kd_lambda = lambda;
  a.alpha = std::move(alpha);
  a.student_hidden = {8};
  return a;
}

}  // namespace

TEST_CASE("distillability_verdict fixtures") {
  const auto no = distillability_verdict(72.65, {{"KD", 72.53}});
  CHECK_FALSE(no.distillable);
  CHECK(no.best_attack == "KD");
  const auto yes = distillability_verdict(71.94, {{"MKD", 72.08}});
  CHECK(yes.distillable);
  CHECK(yes.best_attack == "MKD");
  CHECK_FALSE(distillability_verdict(50.0, {{"a", 50.0}}).distillable);
  CHECK(distillability_verdict(50.0, {{"a", 60.0}, {"b", 60.0}, {"c", 10.0}}).best_attack == "a");
  CHECK_THROWS(distillability_verdict(50.0, {}));
  CHECK(std::string(verdict_marker(true)) == "↑");
  CHECK(std::string(verdict_marker(false)) == "↓");
}

TEST_CASE("property: verdict is a pure function of its inputs") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> acc(0.0, 100.0);
  for (int t = 0; t < 200; ++t) {
    const double ls = acc(rng);
    std::vector<AttackResult> attacks;
    for (int k = 0; k < 1 + t % 5; ++k) attacks.push_back({"a" + std::to_string(k), acc(rng)});
    const auto v = distillability_verdict(ls, attacks);
    bool any = false;
    double best = -1.0;
    std::string name;
    for (const auto& a : attacks) {
      any = any || a.accuracy > ls;
      if (a.accuracy > best) best = a.accuracy, name = a.name;
    }
    CHECK(v.distillable == any);
    CHECK(v.best_attack == name);
    CHECK(distillability_verdict(ls, attacks).distillable == v.distillable);
  }
}

TEST_CASE("KD with kd_lambda = 0 is the cross-entropy student") {
  const auto d = data();
  const auto teacher = ce_teacher(d);
  const auto opt = student_opt();
  const auto s = train_kd_student(teacher, kd(0.0, {0.5}), opt, d.train, d.test);
  auto ce_cfg = opt;
  ce_cfg.hidden = {8};
  const auto ce = train_ce(ce_cfg, d.train, &d.test);
  CHECK(s.params == ce.params);
  CHECK(s.accuracy == ce.report.epochs.back().test_acc);
}

TEST_CASE("class-specific alpha equal to the scalar is bit-identical") {
  const auto d = data();
  const auto teacher = ce_teacher(d);
  const auto opt = student_opt();
  const auto a = train_kd_student(teacher, kd(0.9, {0.25}), opt, d.train, d.test);
  const auto b = train_kd_student(teacher, kd(0.9, {0.25, 0.25, 0.25}), opt, d.train, d.test);
  CHECK(a.params == b.params);
  const auto c = train_kd_student(teacher, kd(0.9, {0.25}), opt, d.train, d.test);
  CHECK(a.params == c.params);
  CHECK(a.accuracy == c.accuracy);
}

TEST_CASE("attack validation") {
  CHECK_THROWS_AS(kd(0.9, {0.0}).validate(3), std::domain_error);
  CHECK_THROWS_AS(kd(0.9, {-1.0}).validate(3), std::domain_error);
  CHECK_THROWS_AS(kd(0.9, {1.0, 2.0}).validate(3), std::invalid_argument);
  CHECK_THROWS_AS(kd(1.5, {1.0}).validate(3), std::invalid_argument);
  CHECK_NOTHROW(kd(0.9, {1.0, 2.0, 3.0}).validate(3));
}

TEST_CASE("LS student sweep") {
  const auto d = data();
  const auto opt = student_opt();
  const auto zero = train_ls_student(opt, {8}, {0.0}, d.train, d.test);
  auto ce_cfg = opt;
  const auto ce = train_ce(ce_cfg, d.train, &d.test);
  CHECK(zero.params == ce.params);
  CHECK(zero.accuracy == ce.report.epochs.back().test_acc);

  const auto one = train_ls_student(opt, {8}, {0.05}, d.train, d.test);
  const auto both = train_ls_student(opt, {8}, {0.0, 0.05}, d.train, d.test);
  CHECK(both.accuracy == std::max(zero.accuracy, one.accuracy));
  CHECK_THROWS(train_ls_student(opt, {8}, {}, d.train, d.test));
}

TEST_CASE("run_matrix") {
  const auto d = data();
  MatrixOptions mo;
  mo.opt = student_opt();
  mo.ls_epsilons = {0.0, 0.1};
  mo.grid_size = 11;
  std::vector<Defense> defenses{{"CE", "ce.json", ce_teacher(d, 1)}, {"CE2", "ce2.json", ce_teacher(d, 2)}};
  const std::vector<AttackConfig> attacks{kd(0.9, {1.0}), kd(0.9, {0.25})};

  const auto single = run_matrix({defenses[0]}, {attacks[0]}, mo, d.train, d.test);
  REQUIRE(single.rows.size() == 1);
  CHECK(single.rows[0].defense == "CE");
  CHECK(single.verdicts.size() == 1);
  CHECK(single.rows[0].distillable == (single.rows[0].student_acc > single.rows[0].ls_acc));

  const auto t1 = run_matrix(defenses, attacks, mo, d.train, d.test);
  const auto t2 = run_matrix(defenses, attacks, mo, d.train, d.test);
  REQUIRE(t1.rows.size() == 4);
  std::ostringstream a, b;
  write_verdict_csv(a, t1);
  write_verdict_csv(b, t2);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("defense,teacher_ckpt,attack,student_acc,ls_acc,distillable,marker\n", 0) == 0);
  CHECK(t1.teacher_peak_cmi.size() == 2);
  CHECK(t1.teacher_peak_cmi[0] > 0.0);

  auto wide = attacks;
  wide[1].student_hidden = {16};
  CHECK_THROWS(run_matrix(defenses, wide, mo, d.train, d.test));
}

TEST_CASE("simplex projection") {
  const auto v = simplex_point(0.0, 0.0, 1.0);
  CHECK(std::abs(v.x - 0.5) <= 1e-12);
  CHECK(std::abs(v.y - std::sqrt(3.0) / 2) <= 1e-12);
  const auto c = simplex_point(1.0 / 3, 1.0 / 3, 1.0 / 3);
  CHECK(std::abs(c.x - 0.5) <= 1e-12);
  CHECK(std::abs(c.y - std::sqrt(3.0) / 6) <= 1e-12);
  const auto e = simplex_point(0.5, 0.5, 0.0);
  CHECK(std::abs(e.x - 0.5) <= 1e-12);
  CHECK(std::abs(e.y) <= 1e-12);
  const auto o = simplex_point(2.0, 0.0, 0.0);
  CHECK(o.x == 0.0);
  CHECK(o.y == 0.0);
  CHECK_THROWS_AS(simplex_point(0.0, 0.0, 0.0), std::domain_error);

  const Matrix probs(3, 4, {0.7, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.7, 0.25, 0.25, 0.25, 0.25});
  const std::vector<int> labels{0, 3, 2};
  const auto pts = project_three_classes(probs, labels, {0, 1, 3}, 1.0);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].true_class == 0);
  CHECK(pts[1].true_class == 3);
  // Selected (0.1, 0.1, 0.7) renormalized: weights 1/9, 1/9, 7/9.
  CHECK(pts[1].x == Approx(1.0 / 9 + 0.5 * 7.0 / 9).epsilon(1e-14));
  CHECK_THROWS_AS(project_three_classes(probs, labels, {0, 0, 1}, 1.0), std::domain_error);
  CHECK_THROWS_AS(project_three_classes(probs, labels, {0, 1, 4}, 1.0), std::domain_error);
}
