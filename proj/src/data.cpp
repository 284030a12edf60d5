#include "cmim/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace cmim {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<long long> parse_int(const std::string& s) {
  long long v = 0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  return v;
}

/// Column means and population standard deviations; constant columns get
/// scale 1 so they standardize to 0.
FeatureStats fit_stats(const Matrix& features) {
  const std::size_t dim = features.cols();
  FeatureStats fitted{std::vector<double>(dim), std::vector<double>(dim)};
  const auto m = static_cast<double>(features.rows());
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < features.rows(); ++i) mean += features(i, j);
    mean /= m;
    double var = 0.0;
    for (std::size_t i = 0; i < features.rows(); ++i) {
      const double dv = features(i, j) - mean;
      var += dv * dv;
    }
    const double sd = std::sqrt(var / m);
    fitted.mean[j] = mean;
    fitted.scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  return fitted;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<double> LabeledDataset::class_frequencies() const {
  std::vector<double> freq(num_classes, 0.0);
  for (std::size_t y = 0; y < num_classes; ++y) {
    freq[y] = static_cast<double>(class_index[y].size()) / static_cast<double>(size());
  }
  return freq;
}

LabeledDataset make_dataset(Matrix features, std::vector<int> labels, std::size_t num_classes,
                            Split split) {
  if (features.rows() != labels.size()) {
    throw DataError("dataset: " + std::to_string(features.rows()) + " feature rows but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (num_classes == 0) throw DataError("dataset: zero classes");
  LabeledDataset d;
  d.features = std::move(features);
  d.labels = std::move(labels);
  d.num_classes = num_classes;
  d.split = split;
  d.class_index.assign(num_classes, {});
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    const int y = d.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DataError("dataset: label " + std::to_string(y) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    d.class_index[static_cast<std::size_t>(y)].push_back(i);
  }
  for (std::size_t y = 0; y < num_classes; ++y) d.label_names.push_back(std::to_string(y));
  return d;
}

Matrix mixture_means(const MixtureSpec& spec) {
  if (spec.classes < 2) throw DataError("gaussian mixture: need at least 2 classes");
  if (spec.per_class < 2) throw DataError("gaussian mixture: need at least 2 samples per class");
  if (spec.dim < 1) throw DataError("gaussian mixture: dim must be >= 1");
  if (!(spec.separation >= 0.0) || !(spec.noise > 0.0) || !std::isfinite(spec.separation) ||
      !std::isfinite(spec.noise)) {
    throw DataError("gaussian mixture: separation must be >= 0 and noise > 0");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto c = static_cast<std::size_t>(spec.classes);
  const auto d = static_cast<std::size_t>(spec.dim);
  Matrix means(c, d);
  for (std::size_t y = 0; y < c; ++y) {
    auto row = means.row(y);
    double norm = 0.0;
    while (norm < 1e-8) {
      norm = 0.0;
      for (double& v : row) {
        v = gauss(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (double& v : row) v *= spec.separation / norm;
  }
  return means;
}

TrainTest generate_gaussian_mixture(const MixtureSpec& spec) {
  const Matrix means = mixture_means(spec);
  // Sample stream is separate from the mean stream so the means do not
  // depend on per_class.
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, spec.noise);
  const auto c = static_cast<std::size_t>(spec.classes);
  const auto d = static_cast<std::size_t>(spec.dim);
  const auto per = static_cast<std::size_t>(spec.per_class);
  const std::size_t n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(per))), 1, per - 1);

  std::vector<std::pair<std::vector<double>, int>> train_rows;
  std::vector<std::pair<std::vector<double>, int>> test_rows;
  for (std::size_t y = 0; y < c; ++y) {
    for (std::size_t i = 0; i < per; ++i) {
      std::vector<double> x(d);
      for (std::size_t j = 0; j < d; ++j) x[j] = means(y, j) + gauss(rng);
      (i < n_train ? train_rows : test_rows).emplace_back(std::move(x), static_cast<int>(y));
    }
  }
  std::shuffle(train_rows.begin(), train_rows.end(), rng);
  std::shuffle(test_rows.begin(), test_rows.end(), rng);

  auto build = [&](const auto& rows, Split split) {
    Matrix f(rows.size(), d);
    std::vector<int> labels;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy(rows[i].first.begin(), rows[i].first.end(), f.row(i).begin());
      labels.push_back(rows[i].second);
    }
    return make_dataset(std::move(f), std::move(labels), c, split);
  };
  return {build(train_rows, Split::train), build(test_rows, Split::test)};
}

LabeledDataset load_csv_dataset(const std::filesystem::path& path, const CsvLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file (header required)");
  const auto header = split_line(line);
  const auto label_it = std::find(header.begin(), header.end(), options.label_column);
  if (label_it == header.end()) {
    throw DataError(path.string() + ": no label column named '" + options.label_column + "'");
  }
  const auto label_col = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t dim = header.size() - 1;
  if (dim == 0) throw DataError(path.string() + ": no feature columns");

  std::vector<double> values;
  std::vector<std::string> raw_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " cells, found " +
                      std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (j == label_col) {
        if (cells[j].empty()) {
          throw DataError(path.string() + ":" + std::to_string(line_no) + ": empty label");
        }
        raw_labels.push_back(cells[j]);
        continue;
      }
      const auto v = parse_double(cells[j]);
      if (!v) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell '" +
                        cells[j] + "' in column '" + header[j] + "'");
      }
      values.push_back(*v);
    }
  }
  if (raw_labels.empty()) throw DataError(path.string() + ": no data rows");

  std::vector<std::string> names;
  if (options.label_names) {
    names = *options.label_names;
  } else {
    std::set<std::string> distinct(raw_labels.begin(), raw_labels.end());
    names.assign(distinct.begin(), distinct.end());
    const bool all_int = std::all_of(names.begin(), names.end(),
                                     [](const std::string& s) { return parse_int(s).has_value(); });
    if (all_int) {
      std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
        return *parse_int(a) < *parse_int(b);
      });
    }
  }
  std::map<std::string, int> index;
  for (std::size_t k = 0; k < names.size(); ++k) index.emplace(names[k], static_cast<int>(k));
  std::vector<int> labels;
  labels.reserve(raw_labels.size());
  for (const auto& s : raw_labels) {
    const auto it = index.find(s);
    if (it == index.end()) throw DataError(path.string() + ": unknown label '" + s + "'");
    labels.push_back(it->second);
  }

  Matrix features(raw_labels.size(), dim, std::move(values));
  FeatureStats stats;
  if (options.standardize) {
    stats = options.stats ? *options.stats : fit_stats(features);
    if (stats.mean.size() != dim || stats.scale.size() != dim) {
      throw DataError(path.string() + ": standardization stats have wrong width");
    }
    for (std::size_t i = 0; i < features.rows(); ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        features(i, j) = (features(i, j) - stats.mean[j]) / stats.scale[j];
      }
    }
  }
  auto data = make_dataset(std::move(features), std::move(labels), names.size(), options.split);
  data.label_names = std::move(names);
  if (options.standardize) data.stats = std::move(stats);
  return data;
}

void write_csv_dataset(const std::filesystem::path& path, const LabeledDataset& data,
                       const std::string& label_column) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (std::size_t j = 0; j < data.dim(); ++j) out << 'f' << j << ',';
  out << label_column << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.features.row(i)) out << fmt_double(v) << ',';
    out << data.label_names.at(static_cast<std::size_t>(data.labels[i])) << '\n';
  }
}

void write_label_map(const std::filesystem::path& path, const std::vector<std::string>& label_names) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "label,index\n";
  for (std::size_t k = 0; k < label_names.size(); ++k) out << label_names[k] << ',' << k << '\n';
}

std::vector<std::string> read_label_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label map " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_line(line) != std::vector<std::string>{"label", "index"}) {
    throw DataError(path.string() + ": expected header 'label,index'");
  }
  std::map<long long, std::string> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    const auto idx = cells.size() == 2 ? parse_int(cells[1]) : std::nullopt;
    if (!idx || *idx < 0) throw DataError(path.string() + ": bad row '" + line + "'");
    rows[*idx] = cells[0];
  }
  std::vector<std::string> names;
  for (const auto& [idx, name] : rows) {
    if (idx != static_cast<long long>(names.size())) {
      throw DataError(path.string() + ": indices must be dense from 0");
    }
    names.push_back(name);
  }
  return names;
}

std::vector<std::size_t> per_class_batch(const LabeledDataset& data, std::size_t y,
                                         std::size_t size, std::mt19937_64& rng) {
  if (y >= data.num_classes || data.class_index[y].empty()) {
    throw DataError("per_class_batch: class " + std::to_string(y) + " absent from dataset");
  }
  const auto& members = data.class_index[y];
  std::vector<std::size_t> out;
  out.reserve(size);
  if (size > members.size()) {
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    for (std::size_t i = 0; i < size; ++i) out.push_back(members[pick(rng)]);
    return out;
  }
  std::vector<std::size_t> pool(members);
  for (std::size_t i = 0; i < size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
    out.push_back(pool[i]);
  }
  return out;
}

}  // namespace cmim
