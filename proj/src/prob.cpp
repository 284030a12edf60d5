#include "cmim/prob.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cmim {

namespace {

double floored(double x) noexcept { return x < kProbEpsilon ? kProbEpsilon : x; }

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length mismatch (" +
                     std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

void CompensatedSum::add(double x) noexcept {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    comp_ += (sum_ - t) + x;
  } else {
    comp_ += (x - t) + sum_;
  }
  sum_ = t;
}

double compensated_sum(std::span<const double> xs) noexcept {
  CompensatedSum acc;
  for (double x : xs) acc.add(x);
  return acc.value();
}

ProbVector::ProbVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw std::domain_error("ProbVector: empty");
  for (double v : values_) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::domain_error("ProbVector: negative or non-finite entry");
    }
  }
  const double total = compensated_sum(values_);
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::domain_error("ProbVector: entries sum to " +
                            std::to_string(total) + ", expected 1");
  }
}

ProbVector ProbVector::normalized(std::vector<double> weights) {
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw std::domain_error("ProbVector::normalized: bad weight");
    }
  }
  const double total = compensated_sum(weights);
  if (!(total > 0.0)) throw std::domain_error("ProbVector::normalized: zero mass");
  for (double& w : weights) w /= total;
  return ProbVector(std::move(weights));
}

ProbVector ProbVector::uniform(std::size_t classes) {
  if (classes == 0) throw std::domain_error("ProbVector::uniform: zero classes");
  return ProbVector(std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
}

ProbVector ProbVector::one_hot(std::size_t classes, std::size_t index) {
  if (index >= classes) throw std::domain_error("ProbVector::one_hot: index out of range");
  std::vector<double> v(classes, 0.0);
  v[index] = 1.0;
  return ProbVector(std::move(v));
}

LogitVector::LogitVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw std::domain_error("LogitVector: empty");
  for (double v : values_) {
    if (!std::isfinite(v)) throw std::domain_error("LogitVector: non-finite entry");
  }
}

LogitVector LogitVector::scaled(double factor) const {
  std::vector<double> out(values_);
  for (double& v : out) v *= factor;
  return LogitVector(std::move(out));
}

namespace kernels {

void log_softmax(std::span<const double> z, double scale, std::span<double> out) {
  require_same_size(z.size(), out.size(), "log_softmax");
  double top = -std::numeric_limits<double>::infinity();
  for (double v : z) top = std::max(top, scale * v);
  CompensatedSum acc;
  for (double v : z) acc.add(std::exp(scale * v - top));
  const double lse = top + std::log(acc.value());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = scale * z[i] - lse;
}

void softmax(std::span<const double> z, double scale, std::span<double> out) {
  require_same_size(z.size(), out.size(), "softmax");
  double top = -std::numeric_limits<double>::infinity();
  for (double v : z) top = std::max(top, scale * v);
  CompensatedSum acc;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(scale * z[i] - top);
    acc.add(out[i]);
  }
  const double total = acc.value();
  for (double& v : out) v /= total;
}

void power_transform(std::span<const double> p, double alpha, std::span<double> out) {
  if (!std::isfinite(alpha) || alpha < 0.0) {
    throw std::domain_error("power_transform: alpha must be finite and >= 0");
  }
  require_same_size(p.size(), out.size(), "power_transform");
  if (alpha == 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(p.size()));
    return;
  }
  // exp(alpha ln p - max) keeps large alpha from underflowing every entry.
  std::vector<double> logp(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) logp[i] = std::log(floored(p[i]));
  softmax(logp, alpha, out);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require_same_size(p.size(), q.size(), "kl_divergence");
  CompensatedSum acc;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc.add(p[i] * (std::log(p[i]) - std::log(floored(q[i]))));
  }
  return std::max(0.0, acc.value());
}

}  // namespace kernels

ProbVector power_transform(const ProbVector& p, double alpha) {
  std::vector<double> out(p.size());
  kernels::power_transform(p.values(), alpha, out);
  return ProbVector(std::move(out));
}

ProbVector softmax(const LogitVector& z) {
  std::vector<double> out(z.size());
  kernels::softmax(z.values(), 1.0, out);
  return ProbVector(std::move(out));
}

double kl_divergence(const ProbVector& p, const ProbVector& q) {
  return kernels::kl_divergence(p.values(), q.values());
}

double cross_entropy(std::size_t label, const ProbVector& q) {
  if (label >= q.size()) throw std::domain_error("cross_entropy: label out of range");
  return -std::log(floored(q[label]));
}

double cross_entropy(const ProbVector& p, const ProbVector& q) {
  require_same_size(p.size(), q.size(), "cross_entropy");
  CompensatedSum acc;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc.add(-p[i] * std::log(floored(q[i])));
  }
  return acc.value();
}

NllMoments nll_moments(const ProbVector& p) {
  CompensatedSum m1;
  CompensatedSum m2;
  for (double v : p.values()) {
    const double pv = floored(v);
    const double s = -std::log(pv);
    m1.add(pv * s);
    m2.add(pv * s * s);
  }
  return {m1.value(), m2.value()};
}

double nll_covariance(const ProbVector& p, const ProbVector& q) {
  require_same_size(p.size(), q.size(), "nll_covariance");
  const double m1 = nll_moments(p).m1;
  CompensatedSum mean_q;
  for (std::size_t i = 0; i < p.size(); ++i) {
    mean_q.add(floored(p[i]) * -std::log(floored(q[i])));
  }
  const double centre_q = mean_q.value();
  CompensatedSum acc;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double pj = floored(p[j]);
    acc.add(pj * (-std::log(pj) - m1) * (-std::log(floored(q[j])) - centre_q));
  }
  return acc.value();
}

}  // namespace cmim
