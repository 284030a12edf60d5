#include "cmim/cmi.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "cmim/parallel.hpp"

namespace cmim {

namespace {

void require_non_empty(std::span<const ProbVector> cluster, const char* what) {
  if (cluster.empty()) throw std::domain_error(std::string(what) + ": empty cluster");
}

std::vector<std::vector<double>> transformed_members(std::span<const ProbVector> cluster,
                                                     double alpha) {
  std::vector<std::vector<double>> out;
  out.reserve(cluster.size());
  const std::size_t c = cluster.front().size();
  for (const auto& q : cluster) {
    if (q.size() != c) throw ShapeError("cluster members differ in class count");
    std::vector<double> t(c);
    kernels::power_transform(q.values(), alpha, t);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<double> mean_of(const std::vector<std::vector<double>>& rows) {
  const std::size_t c = rows.front().size();
  std::vector<double> centre(c);
  for (std::size_t j = 0; j < c; ++j) {
    CompensatedSum acc;
    for (const auto& r : rows) acc.add(r[j]);
    centre[j] = acc.value() / static_cast<double>(rows.size());
  }
  return centre;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ClassClusters::ClassClusters(std::vector<std::vector<ProbVector>> clusters)
    : clusters_(std::move(clusters)) {
  for (const auto& c : clusters_) total_ += c.size();
}

ClassClusters ClassClusters::from_outputs(std::span<const double> probs,
                                          std::span<const int> labels,
                                          std::size_t num_classes) {
  if (num_classes == 0 || probs.size() != labels.size() * num_classes) {
    throw ShapeError("ClassClusters::from_outputs: probs is not labels x classes");
  }
  std::vector<std::vector<ProbVector>> clusters(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::domain_error("ClassClusters::from_outputs: label out of range");
    }
    auto row = probs.subspan(i * num_classes, num_classes);
    clusters[static_cast<std::size_t>(y)].emplace_back(
        std::vector<double>(row.begin(), row.end()));
  }
  return ClassClusters(std::move(clusters));
}

double ClassClusters::weight(std::size_t y) const {
  if (total_ == 0) throw std::domain_error("ClassClusters: no samples");
  return static_cast<double>(count(y)) / static_cast<double>(total_);
}

AlphaSamples AlphaSamples::grid(double beta, std::size_t n) {
  if (n == 0 || !(beta > 0.0)) throw std::domain_error("AlphaSamples::grid: need n >= 1, beta > 0");
  AlphaSamples s{{}, AlphaMode::grid, beta};
  s.values.reserve(n);
  for (std::size_t i = 1; i <= n; ++i) {
    s.values.push_back(static_cast<double>(i) * beta / static_cast<double>(n));
  }
  return s;
}

AlphaSamples AlphaSamples::linspace(double beta, std::size_t n) {
  if (n == 0 || !(beta > 0.0)) {
    throw std::domain_error("AlphaSamples::linspace: need n >= 1, beta > 0");
  }
  AlphaSamples s{{}, AlphaMode::grid, beta};
  if (n == 1) {
    s.values.push_back(0.0);
    return s;
  }
  for (std::size_t i = 0; i < n; ++i) {
    s.values.push_back(beta * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  s.values.back() = beta;
  return s;
}

AlphaSamples AlphaSamples::random(double beta, std::size_t n, std::mt19937_64& rng) {
  if (n == 0 || !(beta > 0.0)) {
    throw std::domain_error("AlphaSamples::random: need n >= 1, beta > 0");
  }
  AlphaSamples s{{}, AlphaMode::random, beta};
  std::uniform_real_distribution<double> dist(0.0, beta);
  s.values.reserve(n);
  for (std::size_t i = 0; i < n; ++i) s.values.push_back(dist(rng));
  return s;
}

double CmiProfile::aggregate_smooth_max() const {
  CompensatedSum acc;
  for (std::size_t y = 0; y < num_classes(); ++y) {
    acc.add(class_weights[y] * per_class_smooth_max[y]);
  }
  return acc.value();
}

double CmiProfile::peak_dataset_cmi() const {
  CompensatedSum acc;
  for (std::size_t y = 0; y < num_classes(); ++y) {
    const auto& row = per_class_cmi[y];
    acc.add(class_weights[y] * *std::max_element(row.begin(), row.end()));
  }
  return acc.value();
}

ProbVector class_centroid(std::span<const ProbVector> cluster, double alpha) {
  require_non_empty(cluster, "class_centroid");
  return ProbVector::normalized(mean_of(transformed_members(cluster, alpha)));
}

double class_cmi(std::span<const ProbVector> cluster, double alpha) {
  require_non_empty(cluster, "class_cmi");
  if (alpha == 0.0) return 0.0;
  const auto members = transformed_members(cluster, alpha);
  const auto centre = mean_of(members);
  CompensatedSum acc;
  for (const auto& m : members) acc.add(kernels::kl_divergence(m, centre));
  return acc.value() / static_cast<double>(members.size());
}

double dataset_cmi(const ClassClusters& clusters, std::span<const double> alpha_by_class) {
  if (alpha_by_class.size() != clusters.num_classes()) {
    throw ShapeError("dataset_cmi: one alpha per class required");
  }
  CompensatedSum acc;
  for (std::size_t y = 0; y < clusters.num_classes(); ++y) {
    if (clusters.count(y) == 0) continue;
    acc.add(clusters.weight(y) * class_cmi(clusters.cluster(y), alpha_by_class[y]));
  }
  return acc.value();
}

double smooth_max(std::span<const double> values, double omega) {
  if (values.empty()) throw std::domain_error("smooth_max: empty input");
  if (!(omega > 0.0)) throw std::domain_error("smooth_max: omega must be > 0");
  const double top = *std::max_element(values.begin(), values.end());
  CompensatedSum acc;
  for (double v : values) acc.add(std::exp(omega * (v - top)));
  return top + std::log(acc.value() / static_cast<double>(values.size())) / omega;
}

CmiProfile cmi_profile(const ClassClusters& clusters, const AlphaSamples& grid,
                       double omega) {
  if (grid.values.empty()) throw std::domain_error("cmi_profile: empty grid");
  const std::size_t c = clusters.num_classes();
  if (c == 0 || clusters.total() == 0) throw std::domain_error("cmi_profile: no clusters");
  CmiProfile profile;
  profile.alpha_grid = grid.values;
  profile.omega = omega;
  profile.per_class_cmi.assign(c, std::vector<double>(grid.size(), 0.0));
  profile.per_class_smooth_max.assign(c, 0.0);
  profile.class_weights.assign(c, 0.0);
  for (std::size_t y = 0; y < c; ++y) {
    if (clusters.count(y) == 0) throw std::domain_error("cmi_profile: empty cluster for class " + std::to_string(y));
    profile.class_weights[y] = clusters.weight(y);
  }
  parallel_for(c, [&](std::size_t y) {
    auto& row = profile.per_class_cmi[y];
    for (std::size_t k = 0; k < grid.size(); ++k) {
      row[k] = class_cmi(clusters.cluster(y), grid.values[k]);
    }
    profile.per_class_smooth_max[y] = smooth_max(row, omega);
  });
  profile.aggregate_cmi.assign(grid.size(), 0.0);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CompensatedSum acc;
    for (std::size_t y = 0; y < c; ++y) {
      acc.add(profile.class_weights[y] * profile.per_class_cmi[y][k]);
    }
    profile.aggregate_cmi[k] = acc.value();
  }
  return profile;
}

double cmi_alpha_derivative(std::span<const ProbVector> cluster, double alpha) {
  require_non_empty(cluster, "cmi_alpha_derivative");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw std::domain_error("cmi_alpha_derivative: alpha must be > 0");
  }
  const auto members = transformed_members(cluster, alpha);
  const ProbVector centre = ProbVector::normalized(mean_of(members));
  CompensatedSum acc;
  for (const auto& m : members) {
    const ProbVector pm(m);
    const NllMoments mom = nll_moments(pm);
    acc.add((mom.m2 - mom.m1 * mom.m1) - nll_covariance(pm, centre));
  }
  return acc.value() / (static_cast<double>(members.size()) * alpha);
}

void write_profile_csv(std::ostream& out, const CmiProfile& profile) {
  const std::size_t c = profile.num_classes();
  out << "alpha";
  for (std::size_t y = 0; y < c; ++y) out << ",class_" << y;
  out << ",aggregate\n";
  for (std::size_t k = 0; k < profile.alpha_grid.size(); ++k) {
    out << fmt_double(profile.alpha_grid[k]);
    for (std::size_t y = 0; y < c; ++y) out << ',' << fmt_double(profile.per_class_cmi[y][k]);
    out << ',' << fmt_double(profile.aggregate_cmi[k]) << '\n';
  }
  out << "smooth_max";
  for (std::size_t y = 0; y < c; ++y) out << ',' << fmt_double(profile.per_class_smooth_max[y]);
  out << ',' << fmt_double(profile.aggregate_smooth_max()) << '\n';
}

}  // namespace cmim
