#include "cmim/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace cmim {

namespace {

using nlohmann::json;

/// Reads fields of one JSON object and rejects keys nobody asked for.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return obj_.contains(key); }

  const json& required(const std::string& key) {
    seen_.insert(key);
    if (!obj_.contains(key)) throw ConfigError(field(key), "required field is missing");
    return obj_.at(key);
  }

  template <typename T>
  T get(const std::string& key) {
    const json& v = required(key);
    return convert<T>(v, field(key));
  }

  template <typename T>
  void optional(const std::string& key, T& out) {
    seen_.insert(key);
    if (obj_.contains(key)) out = convert<T>(obj_.at(key), field(key));
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown field");
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& name) {
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError(name, "expected a number");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw ConfigError(name, "expected an integer");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(name, "expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(name, "expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(name, std::string("wrong type: ") + e.what());
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_absolute() || base.empty()) return path.string();
  return (base / path).lexically_normal().string();
}

template <typename Fn>
void rethrow_as(const std::string& field, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field, e.what());
  } catch (const std::domain_error& e) {
    throw ConfigError(field, e.what());
  }
}

void read_train_config(FieldReader& r, TrainConfig& cfg) {
  r.optional("lambda", cfg.lambda);
  r.optional("beta", cfg.beta);
  r.optional("omega", cfg.omega);
  r.optional("n_alpha", cfg.n_alpha);
  r.optional("epochs", cfg.epochs);
  r.optional("batch_size", cfg.batch_size);
  r.optional("per_class_batch_size", cfg.per_class_batch_size);
  r.optional("lr", cfg.lr);
  r.optional("momentum", cfg.momentum);
  r.optional("weight_decay", cfg.weight_decay);
  r.optional("lr_milestones", cfg.lr_milestones);
  r.optional("lr_gamma", cfg.lr_gamma);
  r.optional("ls_epsilon", cfg.ls_epsilon);
  r.optional("seed", cfg.seed);
  r.optional("hidden", cfg.hidden);
  r.optional("profile_grid_size", cfg.profile_grid_size);
  std::string mode = to_string(cfg.alpha_mode);
  r.optional("alpha_mode", mode);
  rethrow_as(r.field("alpha_mode"), [&] { cfg.alpha_mode = parse_alpha_mode(mode); });
  std::string cb = to_string(cfg.class_batch_mode);
  r.optional("class_batch_mode", cb);
  rethrow_as(r.field("class_batch_mode"), [&] { cfg.class_batch_mode = parse_class_batch_mode(cb); });
  r.finish();
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    // validate() messages start with the bare field name.
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    throw ConfigError(r.field(msg.substr(0, colon)),
                      colon == std::string::npos ? msg : msg.substr(colon + 2));
  }
}

json train_config_json(const TrainConfig& cfg) {
  return {{"lambda", cfg.lambda},
          {"beta", cfg.beta},
          {"omega", cfg.omega},
          {"n_alpha", cfg.n_alpha},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"per_class_batch_size", cfg.per_class_batch_size},
          {"lr", cfg.lr},
          {"momentum", cfg.momentum},
          {"weight_decay", cfg.weight_decay},
          {"lr_milestones", cfg.lr_milestones},
          {"lr_gamma", cfg.lr_gamma},
          {"ls_epsilon", cfg.ls_epsilon},
          {"seed", cfg.seed},
          {"hidden", cfg.hidden},
          {"profile_grid_size", cfg.profile_grid_size},
          {"alpha_mode", to_string(cfg.alpha_mode)},
          {"class_batch_mode", to_string(cfg.class_batch_mode)}};
}

}  // namespace

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
}

DatasetSpec parse_dataset_spec(const json& doc, const std::string& field,
                               const std::filesystem::path& base_dir) {
  FieldReader r(doc, field);
  DatasetSpec spec;
  const auto kind = r.get<std::string>("kind");
  if (kind == "synthetic") {
    spec.kind = DatasetSpec::Kind::synthetic;
    r.optional("seed", spec.mixture.seed);
    r.optional("classes", spec.mixture.classes);
    r.optional("per_class", spec.mixture.per_class);
    r.optional("dim", spec.mixture.dim);
    r.optional("separation", spec.mixture.separation);
    r.optional("noise", spec.mixture.noise);
    if (spec.mixture.classes < 2) throw ConfigError(r.field("classes"), "must be >= 2");
    if (spec.mixture.per_class < 2) throw ConfigError(r.field("per_class"), "must be >= 2");
    if (spec.mixture.dim < 1) throw ConfigError(r.field("dim"), "must be >= 1");
    if (!(spec.mixture.noise > 0.0)) throw ConfigError(r.field("noise"), "must be > 0");
    if (!(spec.mixture.separation >= 0.0)) throw ConfigError(r.field("separation"), "must be >= 0");
  } else if (kind == "csv") {
    spec.kind = DatasetSpec::Kind::csv;
    spec.train_path = resolve(base_dir, r.get<std::string>("train"));
    r.optional("test", spec.test_path);
    spec.test_path = resolve(base_dir, spec.test_path);
    r.optional("label_column", spec.label_column);
    r.optional("label_map", spec.label_map);
    spec.label_map = resolve(base_dir, spec.label_map);
  } else {
    throw ConfigError(r.field("kind"), "expected synthetic or csv (got '" + kind + "')");
  }
  r.finish();
  return spec;
}

json to_json(const DatasetSpec& spec) {
  if (spec.kind == DatasetSpec::Kind::synthetic) {
    return {{"kind", "synthetic"},
            {"seed", spec.mixture.seed},
            {"classes", spec.mixture.classes},
            {"per_class", spec.mixture.per_class},
            {"dim", spec.mixture.dim},
            {"separation", spec.mixture.separation},
            {"noise", spec.mixture.noise}};
  }
  json j{{"kind", "csv"}, {"train", spec.train_path}, {"label_column", spec.label_column}};
  if (!spec.test_path.empty()) j["test"] = spec.test_path;
  if (!spec.label_map.empty()) j["label_map"] = spec.label_map;
  return j;
}

TrainJob parse_train_job(const json& doc, const std::filesystem::path& base_dir) {
  FieldReader r(doc, "");
  TrainJob job;
  const auto method = r.get<std::string>("method");
  rethrow_as("method", [&] { job.method = parse_method(method); });
  job.dataset = parse_dataset_spec(r.required("dataset"), "dataset", base_dir);
  r.optional("output_dir", job.output_dir);
  job.output_dir = resolve(base_dir, job.output_dir);
  if (r.has("train")) {
    FieldReader t(r.required("train"), "train");
    read_train_config(t, job.train);
  }
  r.finish();
  return job;
}

json to_json(const TrainJob& job) {
  json j{{"method", to_string(job.method)},
         {"dataset", to_json(job.dataset)},
         {"train", train_config_json(job.train)}};
  if (!job.output_dir.empty()) j["output_dir"] = job.output_dir;
  return j;
}

DistillJob parse_distill_job(const json& doc, const std::filesystem::path& base_dir) {
  FieldReader r(doc, "");
  DistillJob job;
  const json& teachers = r.required("teachers");
  if (!teachers.is_array() || teachers.empty()) {
    throw ConfigError("teachers", "expected a non-empty array");
  }
  for (std::size_t k = 0; k < teachers.size(); ++k) {
    FieldReader t(teachers[k], "teachers[" + std::to_string(k) + "]");
    TeacherSpec spec;
    spec.name = t.get<std::string>("name");
    spec.checkpoint = resolve(base_dir, t.get<std::string>("checkpoint"));
    t.finish();
    job.teachers.push_back(std::move(spec));
  }
  job.dataset = parse_dataset_spec(r.required("dataset"), "dataset", base_dir);
  if (r.has("student")) {
    FieldReader s(r.required("student"), "student");
    read_train_config(s, job.student);
  }
  r.optional("ls_epsilons", job.ls_epsilons);
  if (job.ls_epsilons.empty()) throw ConfigError("ls_epsilons", "must not be empty");
  for (double e : job.ls_epsilons) {
    if (!(e >= 0.0 && e < 1.0)) throw ConfigError("ls_epsilons", "entries must be in [0, 1)");
  }
  const json& attacks = r.required("attacks");
  if (!attacks.is_array() || attacks.empty()) throw ConfigError("attacks", "expected a non-empty array");
  for (std::size_t k = 0; k < attacks.size(); ++k) {
    const std::string path = "attacks[" + std::to_string(k) + "]";
    FieldReader a(attacks[k], path);
    AttackConfig cfg;
    cfg.name = a.get<std::string>("name");
    a.optional("kd_lambda", cfg.kd_lambda);
    if (a.has("alpha")) {
      const json& alpha = a.required("alpha");
      cfg.alpha = alpha.is_array() ? FieldReader::convert<std::vector<double>>(alpha, a.field("alpha"))
                                   : std::vector<double>{FieldReader::convert<double>(alpha, a.field("alpha"))};
    }
    std::string keying = cfg.keying == AlphaKeying::teacher_argmax ? "teacher_argmax" : "ground_truth";
    a.optional("keying", keying);
    if (keying == "teacher_argmax") {
      cfg.keying = AlphaKeying::teacher_argmax;
    } else if (keying == "ground_truth") {
      cfg.keying = AlphaKeying::ground_truth;
    } else {
      throw ConfigError(a.field("keying"), "expected teacher_argmax or ground_truth");
    }
    a.optional("scale_correction", cfg.scale_correction);
    cfg.student_hidden = job.student.hidden;
    a.finish();
    if (!(cfg.kd_lambda >= 0.0 && cfg.kd_lambda <= 1.0)) {
      throw ConfigError(a.field("kd_lambda"), "must be in [0, 1]");
    }
    for (double v : cfg.alpha) {
      if (!(v > 0.0)) throw ConfigError(a.field("alpha"), "entries must be > 0");
    }
    job.attacks.push_back(std::move(cfg));
  }
  r.optional("beta", job.beta);
  r.optional("grid_size", job.grid_size);
  if (!(job.beta > 0.0)) throw ConfigError("beta", "must be > 0");
  if (job.grid_size < 1) throw ConfigError("grid_size", "must be >= 1");
  r.optional("output_dir", job.output_dir);
  job.output_dir = resolve(base_dir, job.output_dir);
  r.finish();
  return job;
}

json to_json(const DistillJob& job) {
  json teachers = json::array();
  for (const auto& t : job.teachers) teachers.push_back({{"name", t.name}, {"checkpoint", t.checkpoint}});
  json attacks = json::array();
  for (const auto& a : job.attacks) {
    json alpha = a.alpha.size() == 1 ? json(a.alpha.front()) : json(a.alpha);
    attacks.push_back({{"name", a.name},
                       {"kd_lambda", a.kd_lambda},
                       {"alpha", alpha},
                       {"keying", a.keying == AlphaKeying::teacher_argmax ? "teacher_argmax" : "ground_truth"},
                       {"scale_correction", a.scale_correction}});
  }
  json j{{"teachers", teachers},
         {"dataset", to_json(job.dataset)},
         {"student", train_config_json(job.student)},
         {"ls_epsilons", job.ls_epsilons},
         {"attacks", attacks},
         {"beta", job.beta},
         {"grid_size", job.grid_size}};
  if (!job.output_dir.empty()) j["output_dir"] = job.output_dir;
  return j;
}

TrainTest load_dataset(const DatasetSpec& spec) {
  if (spec.kind == DatasetSpec::Kind::synthetic) return generate_gaussian_mixture(spec.mixture);
  CsvLoadOptions opts;
  opts.label_column = spec.label_column;
  if (!spec.label_map.empty()) opts.label_names = read_label_map(spec.label_map);
  TrainTest out;
  out.train = load_csv_dataset(spec.train_path, opts);
  if (!spec.test_path.empty()) {
    CsvLoadOptions test_opts = opts;
    test_opts.label_names = out.train.label_names;
    test_opts.stats = out.train.stats;
    test_opts.split = Split::test;
    out.test = load_csv_dataset(spec.test_path, test_opts);
  } else {
    out.test = make_dataset(Matrix(0, out.train.dim()), {}, out.train.num_classes, Split::test);
    out.test.label_names = out.train.label_names;
  }
  return out;
}

}  // namespace cmim
