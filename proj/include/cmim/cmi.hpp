#pragma once

#include <cstddef>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "cmim/prob.hpp"

namespace cmim {

/// Model outputs grouped by ground-truth label: clusters[y] holds the
/// output distributions of every sample labelled y.
class ClassClusters {
 public:
  ClassClusters() = default;
  explicit ClassClusters(std::vector<std::vector<ProbVector>> clusters);

  /// Groups rows of a row-major m x C probability matrix by label.
  static ClassClusters from_outputs(std::span<const double> probs,
                                    std::span<const int> labels,
                                    std::size_t num_classes);

  std::size_t num_classes() const noexcept { return clusters_.size(); }
  std::size_t total() const noexcept { return total_; }
  std::size_t count(std::size_t y) const { return clusters_.at(y).size(); }
  std::span<const ProbVector> cluster(std::size_t y) const { return clusters_.at(y); }
  /// |D_y| / m.
  double weight(std::size_t y) const;

 private:
  std::vector<std::vector<ProbVector>> clusters_;
  std::size_t total_ = 0;
};

enum class AlphaMode { grid, random };

/// Powers at which clusters are transformed; every value lies in [0, beta].
struct AlphaSamples {
  std::vector<double> values;
  AlphaMode mode = AlphaMode::grid;
  double beta = 0.0;

  /// alpha_i = i * beta / n for i = 1..n.
  static AlphaSamples grid(double beta, std::size_t n);
  /// n evenly spaced points from 0 to beta inclusive ({0} when n == 1).
  static AlphaSamples linspace(double beta, std::size_t n);
  /// n independent draws from U[0, beta].
  static AlphaSamples random(double beta, std::size_t n, std::mt19937_64& rng);

  std::size_t size() const noexcept { return values.size(); }
};

/// Per-class CMI sampled over an alpha grid.
struct CmiProfile {
  std::vector<double> alpha_grid;
  /// per_class_cmi[y][k] is the class-y CMI at alpha_grid[k].
  std::vector<std::vector<double>> per_class_cmi;
  std::vector<double> aggregate_cmi;
  std::vector<double> per_class_smooth_max;
  std::vector<double> class_weights;
  double omega = 0.0;

  std::size_t num_classes() const noexcept { return per_class_cmi.size(); }
  /// Weighted sum of per-class smooth maxima.
  double aggregate_smooth_max() const;
  /// Weighted sum of per-class grid maxima, i.e. max over per-class alpha
  /// vectors of the dataset CMI restricted to the grid.
  double peak_dataset_cmi() const;
};

/// Mean of the power-transformed cluster members.
ProbVector class_centroid(std::span<const ProbVector> cluster, double alpha);

/// Mean KL from each transformed member to the transformed centroid.
double class_cmi(std::span<const ProbVector> cluster, double alpha);

/// Label-frequency weighted sum of class CMIs, one power per class.
double dataset_cmi(const ClassClusters& clusters,
                   std::span<const double> alpha_by_class);

/// (1/omega) ln((1/N) sum exp(omega v_i)), evaluated with max-subtraction.
double smooth_max(std::span<const double> values, double omega);

CmiProfile cmi_profile(const ClassClusters& clusters, const AlphaSamples& grid,
                       double omega);

/// d/dalpha of class_cmi computed in closed form from surprisal moments.
double cmi_alpha_derivative(std::span<const ProbVector> cluster, double alpha);

/// CSV: header alpha,class_0..class_{C-1},aggregate, one row per grid point,
/// then a row whose first cell is "smooth_max".
void write_profile_csv(std::ostream& out, const CmiProfile& profile);

}  // namespace cmim
