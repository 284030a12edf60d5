#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "cmim/prob.hpp"
#include "test_util.hpp"

using namespace cmim;
using doctest::Approx;

namespace {

double max_abs_diff(const ProbVector& a, const ProbVector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("ProbVector validation") {
  CHECK_NOTHROW(ProbVector{0.2, 0.8});
  CHECK_THROWS_AS(ProbVector({0.5, 0.6}), std::domain_error);
  CHECK_THROWS_AS(ProbVector({-0.1, 1.1}), std::domain_error);
  CHECK_THROWS_AS(ProbVector(std::vector<double>{}), std::domain_error);
  CHECK_THROWS_AS(ProbVector::normalized({0.0, 0.0}), std::domain_error);
}

TEST_CASE("power_transform examples") {
  SUBCASE("alpha = 1 is the identity") {
    const auto out = power_transform({0.2, 0.8}, 1.0);
    CHECK(out[0] == Approx(0.2).epsilon(1e-14));
    CHECK(out[1] == Approx(0.8).epsilon(1e-14));
  }
  SUBCASE("uniform is a fixed point") {
    for (double a : {0.0, 0.3, 1.0, 7.5}) {
      const auto out = power_transform(ProbVector::uniform(5), a);
      for (double v : out.values()) CHECK(v == Approx(0.2).epsilon(1e-14));
    }
  }
  SUBCASE("squared three-class vector") {
    // 0.25 / (0.25 + 0.0625 + 0.0625) = 2/3
    const auto out = power_transform({0.5, 0.25, 0.25}, 2.0);
    CHECK(out[0] == Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(out[1] == Approx(1.0 / 6.0).epsilon(1e-14));
    CHECK(out[2] == Approx(1.0 / 6.0).epsilon(1e-14));
  }
  SUBCASE("alpha = 0 yields exactly uniform") {
    const auto out = power_transform({0.9, 0.1}, 0.0);
    CHECK(out[0] == 0.5);
    CHECK(out[1] == 0.5);
    const auto hot = power_transform(ProbVector::one_hot(4, 2), 0.0);
    for (double v : hot.values()) CHECK(v == 0.25);
  }
  SUBCASE("negative alpha is a domain error") {
    CHECK_THROWS_AS(power_transform({0.5, 0.5}, -0.1), std::domain_error);
    CHECK_THROWS_AS(power_transform({0.5, 0.5}, std::nan("")), std::domain_error);
  }
  SUBCASE("one-hot with large alpha stays finite") {
    const auto out = power_transform(ProbVector::one_hot(3, 1), 50.0);
    CHECK(out[1] == Approx(1.0));
  }
}

TEST_CASE("softmax examples") {
  const auto half = softmax({0.0, 0.0});
  CHECK(half[0] == 0.5);
  CHECK(half[1] == 0.5);
  const auto third = softmax({std::log(2.0), 0.0});
  CHECK(third[0] == Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(third[1] == Approx(1.0 / 3.0).epsilon(1e-15));
  const auto sat = softmax({1000.0, 0.0});
  CHECK(std::isfinite(sat[0]));
  CHECK(sat[0] == 1.0);
  CHECK(sat[1] < 1e-300);
  CHECK_THROWS_AS(LogitVector({1.0, INFINITY}), std::domain_error);
}

TEST_CASE("kl_divergence examples") {
  const ProbVector p{0.3, 0.7};
  CHECK(kl_divergence(p, p) == Approx(0.0).epsilon(1e-15));
  CHECK(kl_divergence({1.0, 0.0}, {0.5, 0.5}) == Approx(std::log(2.0)).epsilon(1e-14));
  // 0.5 ln(0.5/1) + 0.5 ln(0.5/1e-12)
  const double clamped = kl_divergence({0.5, 0.5}, {1.0, 0.0});
  CHECK(std::isfinite(clamped));
  CHECK(clamped == Approx(0.5 * std::log(0.5) + 0.5 * std::log(0.5 / 1e-12)).epsilon(1e-12));
  CHECK_THROWS_AS(kl_divergence({0.5, 0.5}, {0.2, 0.3, 0.5}), ShapeError);
}

TEST_CASE("cross_entropy examples") {
  CHECK(cross_entropy(std::size_t{0}, ProbVector{0.7, 0.3}) == Approx(0.356675).epsilon(1e-6));
  CHECK(cross_entropy(std::size_t{0}, ProbVector{0.7, 0.3}) == Approx(-std::log(0.7)).epsilon(1e-15));
  CHECK(cross_entropy(std::size_t{0}, ProbVector{1.0, 0.0}) == 0.0);
  CHECK(cross_entropy(ProbVector{0.5, 0.5}, ProbVector{0.5, 0.5}) == Approx(std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(cross_entropy(std::size_t{2}, ProbVector{0.5, 0.5}), std::domain_error);
}

TEST_CASE("nll_moments examples") {
  // Zero entries are clamped to 1e-12, so a one-hot vector is zero only up
  // to (C - 1) * eps * ln(1/eps)^k.
  const auto hot = nll_moments(ProbVector::one_hot(4, 1));
  const double floor_surprisal = std::log(1e12);
  CHECK(hot.m1 == Approx(3e-12 * floor_surprisal).epsilon(1e-12));
  CHECK(hot.m2 == Approx(3e-12 * floor_surprisal * floor_surprisal).epsilon(1e-12));
  CHECK(hot.m2 < 1e-8);
  for (std::size_t c : {2u, 3u, 10u}) {
    const auto u = nll_moments(ProbVector::uniform(c));
    const double l = std::log(static_cast<double>(c));
    CHECK(u.m1 == Approx(l).epsilon(1e-14));
    CHECK(u.m2 == Approx(l * l).epsilon(1e-14));
  }
  // 1.5 ln 2 and 2.5 (ln 2)^2
  const auto mom = nll_moments({0.5, 0.25, 0.25});
  CHECK(mom.m1 == Approx(1.0397207708399179).epsilon(1e-14));
  CHECK(mom.m2 == Approx(1.2011325347955035).epsilon(1e-14));
}

TEST_CASE("nll_covariance examples") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto p = testing::random_prob(rng, 6);
    const auto mom = nll_moments(p);
    CHECK(nll_covariance(p, p) == Approx(mom.m2 - mom.m1 * mom.m1).epsilon(1e-12));
    CHECK(nll_covariance(p, ProbVector::uniform(6)) == Approx(0.0).epsilon(1e-15));
  }
  // Term-by-term evaluation in an independent script.
  CHECK(nll_covariance({0.5, 0.25, 0.25}, {0.25, 0.5, 0.25}) ==
        Approx(-0.060056626739775174).epsilon(1e-13));
  CHECK_THROWS_AS(nll_covariance({0.5, 0.5}, {1.0}), ShapeError);
}

TEST_CASE("property: power transform of softmax equals softmax of scaled logits") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> classes(2, 16);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const LogitVector z(testing::random_logits(rng, classes(rng)));
    for (double a : {0.1, 0.25, 1.0, 2.0, 4.0}) {
      worst = std::max(worst, max_abs_diff(power_transform(softmax(z), a), softmax(z.scaled(a))));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("property: power transform group law") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 300; ++t) {
    const auto p = testing::random_prob(rng, 2 + t % 9);
    std::uniform_real_distribution<double> ad(0.05, 3.0);
    const double a = ad(rng);
    const double b = ad(rng);
    CHECK(max_abs_diff(power_transform(power_transform(p, a), b), power_transform(p, a * b)) <= 1e-10);
  }
}

TEST_CASE("property: KL non-negativity and cross-entropy decomposition") {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 500; ++t) {
    const std::size_t c = 2 + t % 12;
    const auto p = testing::random_prob(rng, c, 5.0);
    const auto q = testing::random_prob(rng, c, 5.0);
    const double kl = kl_divergence(p, q);
    CHECK(kl >= 0.0);
    CHECK(kl_divergence(p, p) <= 1e-15);
    CHECK(cross_entropy(p, q) == Approx(nll_moments(p).m1 + kl).epsilon(1e-10));
  }
}

TEST_CASE("compensated summation beats naive accumulation") {
  std::vector<double> xs{1.0};
  for (int i = 0; i < 1000; ++i) xs.push_back(1e-16);
  CHECK(compensated_sum(xs) == Approx(1.0 + 1e-13).epsilon(1e-15));
}
