#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmim/matrix.hpp"

namespace cmim {

enum class Split { train, test };

/// Per-column affine map applied to features: (x - mean) / scale.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> scale;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Immutable labelled sample. class_index[y] lists the rows with label y
/// in ascending order and the lists partition [0, size()).
struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::vector<std::vector<std::size_t>> class_index;
  Split split = Split::train;
  /// label_names[k] is the original label mapped to dense index k.
  std::vector<std::string> label_names;
  std::optional<FeatureStats> stats;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  /// |D_y| / m for every class.
  std::vector<double> class_frequencies() const;
};

/// Builds class_index and checks label range.
LabeledDataset make_dataset(Matrix features, std::vector<int> labels,
                            std::size_t num_classes, Split split = Split::train);

struct TrainTest {
  LabeledDataset train;
  LabeledDataset test;
};

struct MixtureSpec {
  std::uint64_t seed = 0;
  int classes = 4;
  int per_class = 250;
  int dim = 2;
  /// Radius of the sphere the class means are placed on.
  double separation = 3.0;
  /// Isotropic standard deviation around each mean.
  double noise = 1.0;
};

/// Isotropic Gaussian clusters around seeded means on a sphere of radius
/// `separation`; 80/20 stratified train/test split.
TrainTest generate_gaussian_mixture(const MixtureSpec& spec);
/// Class means used by generate_gaussian_mixture, C x dim.
Matrix mixture_means(const MixtureSpec& spec);

struct CsvLoadOptions {
  std::string label_column = "label";
  /// Reuse an existing label mapping (e.g. the train split's); labels
  /// outside it are an error.
  std::optional<std::vector<std::string>> label_names;
  /// Reuse standardization statistics instead of fitting them.
  std::optional<FeatureStats> stats;
  bool standardize = true;
  Split split = Split::train;
};

/// Rectangular numeric CSV with a header row. Quoted fields are not
/// supported. Labels are mapped to [0, C) in sorted order (numeric order
/// when every label is an integer).
LabeledDataset load_csv_dataset(const std::filesystem::path& path,
                                const CsvLoadOptions& options = {});
inline LabeledDataset load_csv_dataset(const std::filesystem::path& path,
                                       const std::string& label_column) {
  CsvLoadOptions opts;
  opts.label_column = label_column;
  return load_csv_dataset(path, opts);
}

/// Writes features f0..f{d-1} plus the label column (original names).
void write_csv_dataset(const std::filesystem::path& path, const LabeledDataset& data,
                       const std::string& label_column = "label");

/// Sidecar mapping file: header "label,index", one row per class.
void write_label_map(const std::filesystem::path& path,
                     const std::vector<std::string>& label_names);
std::vector<std::string> read_label_map(const std::filesystem::path& path);

/// `size` row indices of class y, uniformly without replacement, or with
/// replacement when size exceeds the class count.
std::vector<std::size_t> per_class_batch(const LabeledDataset& data, std::size_t y,
                                         std::size_t size, std::mt19937_64& rng);

}  // namespace cmim
