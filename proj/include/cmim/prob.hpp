#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cmim {

/// Floor applied to probability entries before any log or power.
inline constexpr double kProbEpsilon = 1e-12;

/// Raised when two operands disagree on length or matrix shape.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) noexcept;
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double compensated_sum(std::span<const double> xs) noexcept;

/// A point on the C-class probability simplex. Construction validates
/// non-negativity and unit mass (within 1e-9).
class ProbVector {
 public:
  ProbVector() = default;
  explicit ProbVector(std::vector<double> values);
  ProbVector(std::initializer_list<double> values)
      : ProbVector(std::vector<double>(values)) {}

  /// Renormalizes non-negative weights; throws if all are zero.
  static ProbVector normalized(std::vector<double> weights);
  static ProbVector uniform(std::size_t classes);
  static ProbVector one_hot(std::size_t classes, std::size_t index);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& vec() const noexcept { return values_; }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> values_;
};

/// Pre-softmax scores.
class LogitVector {
 public:
  LogitVector() = default;
  explicit LogitVector(std::vector<double> values);
  LogitVector(std::initializer_list<double> values)
      : LogitVector(std::vector<double>(values)) {}

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  LogitVector scaled(double factor) const;

 private:
  std::vector<double> values_;
};

// Raw-span kernels. These skip ProbVector validation and are used on hot
// paths (training, estimators) where inputs are produced internally.
namespace kernels {

/// out = softmax(scale * z), max-subtracted.
void softmax(std::span<const double> z, double scale, std::span<double> out);
/// out = log_softmax(scale * z).
void log_softmax(std::span<const double> z, double scale,
                 std::span<double> out);
/// out = P^alpha with entries floored at kProbEpsilon.
void power_transform(std::span<const double> p, double alpha,
                     std::span<double> out);
double kl_divergence(std::span<const double> p, std::span<const double> q);

}  // namespace kernels

/// Entrywise p^alpha renormalized. alpha = 0 yields the uniform vector.
ProbVector power_transform(const ProbVector& p, double alpha);

ProbVector softmax(const LogitVector& z);

/// KL(p || q) in nats; q is floored at kProbEpsilon and 0 ln 0 = 0.
double kl_divergence(const ProbVector& p, const ProbVector& q);

/// -ln q[label].
double cross_entropy(std::size_t label, const ProbVector& q);
/// -sum p ln q.
double cross_entropy(const ProbVector& p, const ProbVector& q);

/// First and second moments of the surprisal -ln p[j] under p.
/// m1 is the Shannon entropy.
struct NllMoments {
  double m1 = 0.0;
  double m2 = 0.0;
};
NllMoments nll_moments(const ProbVector& p);

/// Covariance under p of the surprisals -ln p[j] and -ln q[j].
double nll_covariance(const ProbVector& p, const ProbVector& q);

}  // namespace cmim
