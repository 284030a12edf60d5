#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "cmim/trainer.hpp"
#include "test_util.hpp"

using namespace cmim;
using doctest::Approx;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

std::vector<double> pow_norm(std::span<const double> p, double a) {
  std::vector<double> out(p.size());
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += out[k] = std::pow(std::max(p[k], 1e-12), a);
  for (double& v : out) v /= s;
  return out;
}

double plain_kl(const std::vector<double>& p, std::span<const double> q) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k] > 0) s += p[k] * std::log(p[k] / std::max(q[k], 1e-12));
  return s;
}

struct Instance {
  ModelParams params;
  Batch batch;
  std::vector<ClassBatch> class_batches;
  std::vector<double> weights;
  AlphaSamples alphas;
};

Instance make_instance(std::mt19937_64& rng, std::size_t n_alpha, std::size_t per_class = 3) {
  Instance in;
  in.params = init_params({2, 4, 3}, rng);
  // Larger weights so outputs are far from uniform and penalties matter.
  for (auto& w : in.params.weights)
    for (double& v : w.data()) v *= 3.0;
  in.batch.inputs = random_matrix(rng, 6, 2);
  in.batch.labels = {0, 1, 2, 2, 1, 0};
  for (std::size_t y = 0; y < 3; ++y) in.class_batches.push_back({y, random_matrix(rng, per_class, 2)});
  in.weights = {0.2, 0.5, 0.3};
  in.alphas = AlphaSamples::random(2.0, n_alpha, rng);
  for (double& a : in.alphas.values) a = std::max(a, 0.05);
  return in;
}

/// Objective re-summed term by term from probabilities with pow().
double brute_objective(const ModelParams& params, const Instance& in, const DummyCentroids& q,
                       double lambda, double omega) {
  const Matrix probs = predict_probs(params, in.batch.inputs);
  double ce = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) ce -= std::log(probs(r, in.batch.labels[r]));
  ce /= probs.rows();
  double pen = 0.0;
  for (const auto& cb : in.class_batches) {
    const Matrix pb = predict_probs(params, cb.inputs);
    double mean_exp = 0.0;
    for (std::size_t i = 0; i < q.alphas.size(); ++i) {
      double mk = 0.0;
      for (std::size_t r = 0; r < pb.rows(); ++r) mk += plain_kl(pow_norm(pb.row(r), q.alphas.values[i]), q.at(cb.label, i));
      mk /= pb.rows();
      mean_exp += std::exp(omega * mk) / q.alphas.size();
    }
    pen += in.weights[cb.label] * std::log(mean_exp);
  }
  return ce + lambda / omega * pen;
}

std::vector<double> numeric_grad(const ModelParams& params, double h,
                                 const std::function<double(const ModelParams&)>& f) {
  auto flat = flatten(params);
  std::vector<double> out(flat.size());
  ModelParams work = params;
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const double w = flat[k];
    flat[k] = w + h;
    unflatten(flat, work);
    const double up = f(work);
    flat[k] = w - h;
    unflatten(flat, work);
    const double down = f(work);
    flat[k] = w;
    out[k] = (up - down) / (2 * h);
  }
  return out;
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 6;
  c.n_alpha = 5;
  c.hidden = {8};
  c.batch_size = 32;
  c.profile_grid_size = 11;
  return c;
}

TrainTest small_data(std::uint64_t seed = 3) {
  MixtureSpec ms;
  ms.seed = seed;
  ms.per_class = 40;
  ms.classes = 3;
  return generate_gaussian_mixture(ms);
}

}  // namespace

TEST_CASE("update_dummy_centroids examples") {
  std::mt19937_64 rng(1);
  const auto params = init_params({2, 4, 3}, rng);
  const Matrix row = random_matrix(rng, 1, 2);
  const Matrix same(4, 2, {row(0, 0), row(0, 1), row(0, 0), row(0, 1), row(0, 0), row(0, 1), row(0, 0), row(0, 1)});
  std::vector<ClassBatch> cbs{{0, same}, {1, random_matrix(rng, 3, 2)}, {2, random_matrix(rng, 2, 2)}};
  const auto alphas = AlphaSamples::grid(2.0, 4);
  const auto q = update_dummy_centroids(params, cbs, alphas);
  const Matrix p = predict_probs(params, row);

  SUBCASE("identical outputs give their own transform") {
    for (std::size_t i = 0; i < 4; ++i) {
      const auto want = pow_norm(p.row(0), alphas.values[i]);
      for (std::size_t k = 0; k < 3; ++k) CHECK(q.at(0, i)[k] == Approx(want[k]).epsilon(1e-13));
    }
  }
  SUBCASE("alpha = 1 is the plain mean and alpha = 2 the mean of squares") {
    const Matrix pb = predict_probs(params, cbs[2].inputs);
    const auto one = update_dummy_centroids(params, cbs, AlphaSamples{{1.0, 2.0}, AlphaMode::grid, 2.0});
    const auto s0 = pow_norm(pb.row(0), 2.0);
    const auto s1 = pow_norm(pb.row(1), 2.0);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(one.at(2, 0)[k] == Approx((pb(0, k) + pb(1, k)) / 2).epsilon(1e-13));
      CHECK(one.at(2, 1)[k] == Approx((s0[k] + s1[k]) / 2).epsilon(1e-13));
    }
  }
  SUBCASE("empty or missing class batch") {
    auto bad = cbs;
    bad[1].inputs = Matrix(0, 2);
    CHECK_THROWS_AS(update_dummy_centroids(params, bad, alphas), std::domain_error);
    bad.pop_back();
    CHECK_THROWS_AS(update_dummy_centroids(params, std::span(cbs).first(2), alphas), std::domain_error);
  }
}

TEST_CASE("cmim_objective examples") {
  std::mt19937_64 rng(2);
  auto in = make_instance(rng, 4);
  TrainConfig cfg;
  cfg.omega = 20.0;

  SUBCASE("lambda = 0 leaves only cross-entropy") {
    cfg.lambda = 0.0;
    const auto q = update_dummy_centroids(in.params, in.class_batches, in.alphas);
    const auto t = cmim_objective(in.params, in.batch, in.class_batches, q, cfg, in.weights);
    CHECK(t.total == t.ce_term);
    CHECK(t.cmi_term == 0.0);
  }
  SUBCASE("singleton class batches against a fresh centroid") {
    for (auto& cb : in.class_batches) cb.inputs = cb.inputs.gather_rows(std::vector<std::size_t>{0});
    const auto q = update_dummy_centroids(in.params, in.class_batches, in.alphas);
    const auto t = cmim_objective(in.params, in.batch, in.class_batches, q, cfg, in.weights);
    CHECK(t.cmi_term == Approx(0.0).epsilon(1e-14));
  }
  SUBCASE("matches brute-force re-summation") {
    for (double lambda : {0.5, 2.0}) {
      cfg.lambda = lambda;
      const auto q = update_dummy_centroids(in.params, in.class_batches, in.alphas);
      const auto t = cmim_objective(in.params, in.batch, in.class_batches, q, cfg, in.weights);
      CHECK(t.total == Approx(brute_objective(in.params, in, q, lambda, 20.0)).epsilon(1e-12));
      CHECK(t.cmi_term > 0.0);
    }
  }
  SUBCASE("misaligned centroids") {
    auto q = update_dummy_centroids(in.params, in.class_batches, in.alphas);
    q.values.pop_back();
    CHECK_THROWS_AS(cmim_objective(in.params, in.batch, in.class_batches, q, cfg, in.weights), ShapeError);
  }
}

TEST_CASE("cmim_grad_logits examples") {
  SUBCASE("uniform outputs against a uniform centroid") {
    DummyCentroids q{3, AlphaSamples::grid(2.0, 3), std::vector<double>(27, 1.0 / 3.0)};
    const auto pen = cmim_grad_logits(Matrix(4, 3, 0.7), q, 1, 20.0, 0.5, 0.3);
    for (double v : pen.dlogits.data()) CHECK(v == Approx(0.0).epsilon(1e-16));
  }
  SUBCASE("single alpha and sample against finite differences of the KL") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
      const std::size_t c = 2 + t % 5;
      const double a = 0.2 + 0.15 * t;
      const auto qv = testing::random_prob(rng, c);
      DummyCentroids q{c, AlphaSamples{{a}, AlphaMode::grid, 4.0}, {}};
      for (std::size_t y = 0; y < c; ++y) q.values.insert(q.values.end(), qv.values().begin(), qv.values().end());
      const auto z = testing::random_logits(rng, c, 2.0);
      const auto pen = cmim_grad_logits(Matrix(1, c, z), q, 0, 20.0, 1.0, 1.0);
      const auto kl_at = [&](std::vector<double> zz) {
        for (double& v : zz) v *= a;
        return kl_divergence(softmax(LogitVector(zz)), qv);
      };
      CHECK(pen.term == Approx(kl_at(z)).epsilon(1e-12));
      const double h = 1e-6;
      for (std::size_t j = 0; j < c; ++j) {
        auto up = z, down = z;
        up[j] += h;
        down[j] -= h;
        const double fd = (kl_at(up) - kl_at(down)) / (2 * h);
        CHECK(testing::rel_err(pen.dlogits(0, j), fd, 1e-9) <= 1e-6);
      }
    }
  }
}

TEST_CASE("property: full objective gradient on a 2-4-3 network") {
  std::mt19937_64 rng(4);
  TrainConfig cfg;
  cfg.lambda = 0.5;
  cfg.omega = 20.0;
  for (int t = 0; t < 5; ++t) {
    const auto in = make_instance(rng, 3);
    const auto q = update_dummy_centroids(in.params, in.class_batches, in.alphas);
    const auto obj = cmim_objective_and_grad(in.params, in.batch, in.class_batches, q, cfg, in.weights);
    const auto fd = numeric_grad(in.params, 1e-5, [&](const ModelParams& p) {
      return cmim_objective(p, in.batch, in.class_batches, q, cfg, in.weights).total;
    });
    const auto g = flatten(obj.grad);
    double worst = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) worst = std::max(worst, testing::rel_err(g[k], fd[k], 1e-7));
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("property: the batch centroid minimizes mean KL") {
  std::mt19937_64 rng(5);
  std::size_t violations = 0;
  for (int t = 0; t < 50; ++t) {
    const auto cluster = testing::random_cluster(rng, 2 + t % 12, 2 + t % 6);
    for (double a : {0.5, 1.0, 2.0}) {
      const auto s = class_centroid(cluster, a);
      const auto mean_kl = [&](const ProbVector& q) {
        double m = 0.0;
        for (const auto& p : cluster) m += kl_divergence(power_transform(p, a), q);
        return m / cluster.size();
      };
      const double best = mean_kl(s);
      for (int k = 0; k < 100; ++k) violations += mean_kl(testing::random_prob(rng, s.size())) < best;
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("property: a small exact step does not increase the objective") {
  std::mt19937_64 rng(6);
  TrainConfig cfg;
  cfg.lambda = 0.5;
  for (int t = 0; t < 20; ++t) {
    const auto in = make_instance(rng, 4);
    const auto q = update_dummy_centroids(in.params, in.class_batches, in.alphas);
    const auto obj = cmim_objective_and_grad(in.params, in.batch, in.class_batches, q, cfg, in.weights);
    auto next = in.params;
    SgdState st{zeros_like(next)};
    sgd_step(next, obj.grad, st, 1e-4, 0.0, 0.0);
    CHECK(cmim_objective(next, in.batch, in.class_batches, q, cfg, in.weights).total <= obj.terms.total);
  }
}

TEST_CASE("label smoothing loss") {
  const Matrix logits(2, 3, {1.0, 0.0, -1.0, 0.3, 0.2, 2.0});
  const std::vector<int> y{0, 2};
  const auto zero = smoothed_ce(logits, y, 0.0);
  double ce = 0.0;
  for (std::size_t r = 0; r < 2; ++r) {
    const auto p = softmax(LogitVector(std::vector<double>(logits.row(r).begin(), logits.row(r).end())));
    ce += cross_entropy(static_cast<std::size_t>(y[r]), p) / 2;
  }
  CHECK(zero.loss == Approx(ce).epsilon(1e-14));

  // Hand evaluation: (1 - e) H(y, q) + e H(u, q) with q = softmax(1, 0, -1).
  const Matrix one = logits.gather_rows(std::vector<std::size_t>{0});
  const double lse = std::log(std::exp(1.0) + 1.0 + std::exp(-1.0));
  const double h_y = lse - 1.0;
  const double h_u = lse - 0.0;
  CHECK(smoothed_ce(one, std::vector<int>{0}, 0.05).loss == Approx(0.95 * h_y + 0.05 * h_u).epsilon(1e-14));

  const auto full = smoothed_ce(one, std::vector<int>{0}, 1.0);
  CHECK(full.loss == Approx(h_u).epsilon(1e-14));
  // Gradient q - u pushes the largest logit down and the smallest up.
  CHECK(full.dlogits(0, 0) > 0.0);
  CHECK(full.dlogits(0, 2) < 0.0);
  CHECK_THROWS_AS(smoothed_ce(logits, std::vector<int>{0}, 0.0), ShapeError);
}

TEST_CASE("config validation and schedule") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lambda = -1.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("lambda"), std::invalid_argument);
  c = TrainConfig{};
  c.n_alpha = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("n_alpha"), std::invalid_argument);
  c = TrainConfig{};
  c.epochs = 10;
  CHECK(c.lr_at(0) == 0.1);
  CHECK(c.lr_at(5) == 0.1);
  CHECK(c.lr_at(6) == Approx(0.01));
  CHECK(c.lr_at(8) == Approx(0.001));
  CHECK(c.class_batch_size(4) == 16);
  CHECK(c.class_batch_size(20) == 8);
  CHECK(parse_method("cmim") == Method::cmim);
  CHECK_THROWS(parse_method("sgd"));
}

TEST_CASE("lambda = 0 is bit-identical to cross-entropy training") {
  const auto data = small_data();
  auto cfg = small_config();
  cfg.lambda = 0.0;
  const auto a = train_cmim(cfg, data.train, &data.test);
  const auto b = train_ce(cfg, data.train, &data.test);
  CHECK(a.params == b.params);
  CHECK(a.report.epochs == b.report.epochs);
  CHECK(serialize_checkpoint(make_checkpoint(Method::cmim, cfg, a.params)) ==
        serialize_checkpoint(make_checkpoint(Method::ce, cfg, b.params)));
}

TEST_CASE("training is deterministic and reports every epoch") {
  const auto data = small_data();
  for (Method m : {Method::cmim, Method::ls}) {
    auto cfg = small_config();
    cfg.alpha_mode = AlphaMode::grid;
    const auto a = train(m, cfg, data.train, &data.test);
    const auto b = train(m, cfg, data.train, &data.test);
    CHECK(a.params == b.params);
    CHECK(a.report.epochs == b.report.epochs);
    REQUIRE(a.report.epochs.size() == 6);
    CHECK(a.report.epochs.back().epoch == 6);
    CHECK(a.report.final_profile.alpha_grid.size() == 11);
  }
  auto cfg = small_config();
  cfg.class_batch_mode = ClassBatchMode::partition;
  const auto p = train_cmim(cfg, data.train, &data.test);
  CHECK(p.report.epochs.back().cmi_term > 0.0);

  std::ostringstream csv;
  write_report_csv(csv, p.report);
  CHECK(csv.str().rfind("epoch,ce_loss,cmi_term,train_acc,test_acc\n1,", 0) == 0);
}

TEST_CASE("training rejects an absent class") {
  auto data = small_data();
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < data.train.size(); ++r)
    if (data.train.labels[r] != 1) keep.push_back(r);
  std::vector<int> labels;
  for (std::size_t r : keep) labels.push_back(data.train.labels[r]);
  const auto missing = make_dataset(data.train.features.gather_rows(keep), labels, 3);
  CHECK_THROWS_WITH(train_cmim(small_config(), missing), doctest::Contains("absent"));
}

TEST_CASE("effective config echo") {
  TrainConfig c;
  CHECK(effective_config(Method::cmim, c)["objective"]["loss"] == "cmim");
  c.lambda = 0.0;
  CHECK(effective_config(Method::cmim, c) == effective_config(Method::ce, c));
  c.ls_epsilon = 0.0;
  CHECK(effective_config(Method::ls, c) == effective_config(Method::ce, c));
}
