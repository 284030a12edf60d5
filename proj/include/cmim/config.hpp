#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmim/data.hpp"
#include "cmim/distill.hpp"
#include "cmim/trainer.hpp"
#include "json.hpp"

namespace cmim {

/// Invalid configuration; field() is the dotted path of the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct DatasetSpec {
  enum class Kind { synthetic, csv } kind = Kind::synthetic;
  MixtureSpec mixture;
  std::string train_path;
  std::string test_path;
  std::string label_column = "label";
  std::string label_map;
};

struct TrainJob {
  Method method = Method::cmim;
  TrainConfig train;
  DatasetSpec dataset;
  std::string output_dir;
};

struct TeacherSpec {
  std::string name;
  std::string checkpoint;
};

struct DistillJob {
  std::vector<TeacherSpec> teachers;
  DatasetSpec dataset;
  /// Optimizer settings shared by every student.
  TrainConfig student;
  std::vector<double> ls_epsilons{0.0, 0.05, 0.1, 0.2};
  std::vector<AttackConfig> attacks;
  double beta = 2.0;
  int grid_size = 50;
  std::string output_dir;
};

/// Relative paths inside the document are resolved against base_dir.
TrainJob parse_train_job(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const TrainJob& job);
DistillJob parse_distill_job(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const DistillJob& job);

DatasetSpec parse_dataset_spec(const nlohmann::json& doc, const std::string& field,
                               const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const DatasetSpec& spec);

/// Reads a JSON document; parse failures become ConfigError.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Materializes the train/test split described by spec. CSV datasets
/// without a test file get an empty test split.
TrainTest load_dataset(const DatasetSpec& spec);

}  // namespace cmim
