#include "cmim/cli.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmim/config.hpp"
#include "cmim/parallel.hpp"
#include "cmim/simplex.hpp"

namespace cmim {

namespace fs = std::filesystem;

namespace {

/// Wraps an input problem that maps to exit code 2.
struct InvalidInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GlobalFlags {
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  unsigned threads = 1;
};

fs::path output_dir(const GlobalFlags& g, const std::string& from_config) {
  fs::path dir = !g.out_dir.empty() ? fs::path(g.out_dir) : fs::path(from_config);
  if (dir.empty()) throw ConfigError("output_dir", "required field is missing (or pass --out-dir)");
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

Checkpoint load_teacher(const std::string& path) {
  if (!fs::exists(path)) throw InvalidInput("checkpoint not found: " + path);
  try {
    return load_checkpoint(path);
  } catch (const CheckpointError& e) {
    throw InvalidInput(e.what());
  }
}

/// A .json path is a dataset spec (or a train config carrying one); any
/// other path is a CSV file.
TrainTest dataset_from_flag(const std::string& path, const std::string& label_column) {
  if (!fs::exists(path)) throw InvalidInput("dataset not found: " + path);
  if (fs::path(path).extension() == ".json") {
    const auto doc = read_json_file(path);
    const auto base = fs::path(path).parent_path();
    if (doc.is_object() && doc.contains("dataset")) {
      return load_dataset(parse_dataset_spec(doc.at("dataset"), "dataset", base));
    }
    return load_dataset(parse_dataset_spec(doc, "", base));
  }
  DatasetSpec spec;
  spec.kind = DatasetSpec::Kind::csv;
  spec.train_path = path;
  spec.label_column = label_column;
  return load_dataset(spec);
}

const LabeledDataset& pick_split(const TrainTest& data, const std::string& split) {
  const LabeledDataset& d = split == "test" ? data.test : data.train;
  if (d.size() == 0) throw InvalidInput("dataset has no " + split + " rows");
  return d;
}

void require_classes(const ModelParams& params, const LabeledDataset& data) {
  if (params.num_classes() != data.num_classes) {
    throw InvalidInput("class count mismatch: checkpoint has " +
                       std::to_string(params.num_classes()) + ", dataset has " +
                       std::to_string(data.num_classes));
  }
  if (params.input_dim() != data.dim()) {
    throw InvalidInput("feature width mismatch: checkpoint expects " +
                       std::to_string(params.input_dim()) + ", dataset has " +
                       std::to_string(data.dim()));
  }
}

int cmd_train(const std::string& config_path, const GlobalFlags& g, std::ostream& out) {
  const auto doc = read_json_file(config_path);
  TrainJob job = parse_train_job(doc, fs::path(config_path).parent_path());
  if (g.seed) job.train.seed = *g.seed;
  const fs::path dir = output_dir(g, job.output_dir);
  const TrainTest data = load_dataset(job.dataset);

  const TrainResult result = train(job.method, job.train, data.train,
                                   data.test.size() > 0 ? &data.test : nullptr);
  save_checkpoint(dir / "model.ckpt.json", make_checkpoint(job.method, job.train, result.params));
  {
    auto f = open_out(dir / "report.csv");
    write_report_csv(f, result.report);
  }
  {
    auto f = open_out(dir / "profile.csv");
    write_profile_csv(f, result.report.final_profile);
  }
  if (job.dataset.kind == DatasetSpec::Kind::csv) write_label_map(dir / "label_map.csv", data.train.label_names);
  const auto& last = result.report.epochs.back();
  out << "trained " << to_string(job.method) << ": train_acc=" << last.train_acc
      << " test_acc=" << last.test_acc
      << " peak_cmi=" << result.report.final_profile.peak_dataset_cmi() << " -> " << dir.string()
      << "\n";
  return kExitOk;
}

int cmd_distill(const std::string& config_path, const GlobalFlags& g, std::ostream& out) {
  const auto doc = read_json_file(config_path);
  DistillJob job = parse_distill_job(doc, fs::path(config_path).parent_path());
  if (g.seed) job.student.seed = *g.seed;
  std::vector<Defense> defenses;
  for (const auto& t : job.teachers) {
    Checkpoint ckpt = load_teacher(t.checkpoint);
    defenses.push_back({t.name, t.checkpoint, TeacherOracle::from_model(std::move(ckpt.params))});
  }
  const fs::path dir = output_dir(g, job.output_dir);
  const TrainTest data = load_dataset(job.dataset);
  if (data.test.size() == 0) throw ConfigError("dataset.test", "distillation needs a test split");
  for (const auto& d : defenses) {
    if (d.teacher.num_classes() != data.train.num_classes || d.teacher.input_dim() != data.train.dim()) {
      throw InvalidInput("teacher '" + d.name + "' does not match the dataset shape");
    }
  }
  MatrixOptions opts;
  opts.opt = job.student;
  opts.ls_epsilons = job.ls_epsilons;
  opts.beta = job.beta;
  opts.grid_size = job.grid_size;
  const VerdictTable table = run_matrix(defenses, job.attacks, opts, data.train, data.test);
  {
    auto f = open_out(dir / "verdicts.csv");
    write_verdict_csv(f, table);
  }
  for (std::size_t k = 0; k < defenses.size(); ++k) {
    const Verdict& v = table.verdicts[k];
    out << defenses[k].name << ": ls_acc=" << v.ls_accuracy << " best=" << v.best_attack << ' '
        << verdict_marker(v.distillable) << (v.distillable ? " distillable" : " undistillable")
        << " teacher_peak_cmi=" << table.teacher_peak_cmi[k] << "\n";
  }
  return kExitOk;
}

int cmd_profile(const std::string& ckpt_path, const std::string& dataset, const std::string& label_column,
                const std::string& split, double beta, int grid_size, double omega,
                const GlobalFlags& g, std::ostream& out) {
  if (!(beta > 0.0)) throw InvalidInput("--beta must be > 0");
  if (grid_size < 1) throw InvalidInput("--grid-size must be >= 1");
  if (!(omega > 0.0)) throw InvalidInput("--omega must be > 0");
  const Checkpoint ckpt = load_teacher(ckpt_path);
  const TrainTest data = dataset_from_flag(dataset, label_column);
  const LabeledDataset& d = pick_split(data, split);
  require_classes(ckpt.params, d);
  const fs::path dir = output_dir(g, ".");
  const CmiProfile profile = model_profile(ckpt.params, d, beta, grid_size, omega);
  {
    auto f = open_out(dir / "profile.csv");
    write_profile_csv(f, profile);
  }
  out << "smooth_max";
  for (std::size_t y = 0; y < profile.num_classes(); ++y) {
    out << " class_" << y << '=' << profile.per_class_smooth_max[y];
  }
  out << " aggregate=" << profile.aggregate_smooth_max() << "\n";
  return kExitOk;
}

int cmd_simplex(const std::string& ckpt_path, const std::string& dataset, const std::string& label_column,
                const std::string& split, const std::vector<int>& classes, double alpha,
                const GlobalFlags& g, std::ostream& out) {
  if (classes.size() != 3) throw InvalidInput("--classes needs exactly three class ids");
  if (!(alpha >= 0.0)) throw InvalidInput("--alpha must be >= 0");
  const Checkpoint ckpt = load_teacher(ckpt_path);
  const TrainTest data = dataset_from_flag(dataset, label_column);
  const LabeledDataset& d = pick_split(data, split);
  require_classes(ckpt.params, d);
  const std::array<int, 3> ids{classes[0], classes[1], classes[2]};
  for (int k = 0; k < 3; ++k) {
    if (ids[k] < 0 || static_cast<std::size_t>(ids[k]) >= d.num_classes) {
      throw InvalidInput("class id " + std::to_string(ids[k]) + " out of range");
    }
  }
  if (ids[0] == ids[1] || ids[0] == ids[2] || ids[1] == ids[2]) {
    throw InvalidInput("--classes must be three distinct ids");
  }
  const fs::path dir = output_dir(g, ".");
  const Matrix probs = predict_probs(ckpt.params, d.features);
  const auto points = project_three_classes(probs, d.labels, ids, alpha);
  {
    auto f = open_out(dir / "simplex.csv");
    write_simplex_csv(f, points);
  }
  out << "projected " << points.size() << " samples -> " << (dir / "simplex.csv").string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Train, distill and analyse CMI-minimized classifiers", "cmim"};
  app.require_subcommand(1);
  GlobalFlags g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Override the seed from the config");
  app.add_option("--out-dir", g.out_dir, "Directory for outputs (overrides config output_dir)");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string config;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier from a JSON config");
  train_cmd->add_option("config", config, "Config file")->required();
  auto* distill_cmd = app.add_subcommand("distill", "Run the knockoff distillation matrix");
  distill_cmd->add_option("config", config, "Config file")->required();

  std::string checkpoint;
  std::string dataset;
  std::string label_column = "label";
  std::string split = "train";
  double beta = 2.0;
  int grid_size = 50;
  double omega = 20.0;
  auto* profile_cmd = app.add_subcommand("profile", "CMI versus power profile of a checkpoint");
  profile_cmd->add_option("--checkpoint", checkpoint)->required();
  profile_cmd->add_option("--dataset", dataset, "Dataset spec (.json) or CSV file")->required();
  profile_cmd->add_option("--label-column", label_column);
  profile_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));
  profile_cmd->add_option("--beta", beta);
  profile_cmd->add_option("--grid-size", grid_size);
  profile_cmd->add_option("--omega", omega);

  std::vector<int> classes;
  double alpha = 4.0;
  auto* simplex_cmd = app.add_subcommand("simplex", "Project three-class outputs onto a 2D simplex");
  simplex_cmd->add_option("--checkpoint", checkpoint)->required();
  simplex_cmd->add_option("--dataset", dataset, "Dataset spec (.json) or CSV file")->required();
  simplex_cmd->add_option("--label-column", label_column);
  simplex_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "test"}));
  simplex_cmd->add_option("--classes", classes, "Three distinct class ids")->required()->expected(3);
  simplex_cmd->add_option("--alpha", alpha, "Power applied before projecting");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
  if (seed_opt->count() > 0) g.seed = seed;
  const unsigned previous_threads = num_threads();
  set_num_threads(g.threads);

  int code = kExitOk;
  try {
    if (*train_cmd) code = cmd_train(config, g, out);
    else if (*distill_cmd) code = cmd_distill(config, g, out);
    else if (*profile_cmd) code = cmd_profile(checkpoint, dataset, label_column, split, beta, grid_size, omega, g, out);
    else if (*simplex_cmd) code = cmd_simplex(checkpoint, dataset, label_column, split, classes, alpha, g, out);
  } catch (const ConfigError& e) {
    err << "invalid config: " << e.what() << "\n";
    code = kExitInvalid;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    code = kExitInvalid;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    code = kExitInvalid;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << "\n";
    code = kExitFailure;
  }
  set_num_threads(previous_threads);
  return code;
}

}  // namespace cmim
