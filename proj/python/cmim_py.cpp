#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cmim/cmi.hpp"
#include "cmim/distill.hpp"
#include "cmim/simplex.hpp"
#include "cmim/trainer.hpp"

namespace py = pybind11;
using namespace cmim;

namespace {

std::vector<ProbVector> to_cluster(const std::vector<std::vector<double>>& rows) {
  std::vector<ProbVector> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.emplace_back(r);
  return out;
}

ClassClusters to_clusters(const std::vector<std::vector<std::vector<double>>>& groups) {
  std::vector<std::vector<ProbVector>> out;
  for (const auto& g : groups) out.push_back(to_cluster(g));
  return ClassClusters(std::move(out));
}

Matrix to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

py::array_t<double> to_array(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

py::dict profile_dict(const CmiProfile& p) {
  py::dict d;
  d["alpha_grid"] = p.alpha_grid;
  d["per_class_cmi"] = p.per_class_cmi;
  d["aggregate_cmi"] = p.aggregate_cmi;
  d["per_class_smooth_max"] = p.per_class_smooth_max;
  d["class_weights"] = p.class_weights;
  d["peak_dataset_cmi"] = p.peak_dataset_cmi();
  return d;
}

LabeledDataset to_dataset(const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                          const std::vector<int>& y, std::size_t num_classes) {
  return make_dataset(to_matrix(x), y, num_classes);
}

}  // namespace

PYBIND11_MODULE(_cmim, m) {
  m.doc() = "CMI-minimized training, CMI estimation and distillation checks";

  m.def("power_transform", [](const std::vector<double>& p, double alpha) {
    return power_transform(ProbVector(p), alpha).vec();
  }, py::arg("p"), py::arg("alpha"));
  m.def("softmax", [](const std::vector<double>& z) { return softmax(LogitVector(z)).vec(); });
  m.def("kl_divergence", [](const std::vector<double>& p, const std::vector<double>& q) {
    return kl_divergence(ProbVector(p), ProbVector(q));
  });
  m.def("cross_entropy", [](std::size_t label, const std::vector<double>& q) {
    return cross_entropy(label, ProbVector(q));
  });
  m.def("nll_moments", [](const std::vector<double>& p) {
    const auto mom = nll_moments(ProbVector(p));
    return py::make_tuple(mom.m1, mom.m2);
  });
  m.def("nll_covariance", [](const std::vector<double>& p, const std::vector<double>& q) {
    return nll_covariance(ProbVector(p), ProbVector(q));
  });

  m.def("class_centroid", [](const std::vector<std::vector<double>>& cluster, double alpha) {
    return class_centroid(to_cluster(cluster), alpha).vec();
  });
  m.def("class_cmi", [](const std::vector<std::vector<double>>& cluster, double alpha) {
    return class_cmi(to_cluster(cluster), alpha);
  });
  m.def("cmi_alpha_derivative", [](const std::vector<std::vector<double>>& cluster, double alpha) {
    return cmi_alpha_derivative(to_cluster(cluster), alpha);
  });
  m.def("dataset_cmi", [](const std::vector<std::vector<std::vector<double>>>& clusters,
                          const std::vector<double>& alphas) {
    return dataset_cmi(to_clusters(clusters), alphas);
  });
  m.def("smooth_max", [](const std::vector<double>& values, double omega) {
    return smooth_max(values, omega);
  }, py::arg("values"), py::arg("omega"));
  m.def("cmi_profile", [](const std::vector<std::vector<std::vector<double>>>& clusters, double beta,
                          std::size_t grid_size, double omega) {
    return profile_dict(cmi_profile(to_clusters(clusters), AlphaSamples::linspace(beta, grid_size), omega));
  }, py::arg("clusters"), py::arg("beta") = 2.0, py::arg("grid_size") = 50, py::arg("omega") = 20.0);

  m.def("distillability_verdict", [](double ls_accuracy,
                                     const std::vector<std::pair<std::string, double>>& attacks) {
    std::vector<AttackResult> rs;
    for (const auto& [name, acc] : attacks) rs.push_back({name, acc});
    const Verdict v = distillability_verdict(ls_accuracy, rs);
    py::dict d;
    d["ls_accuracy"] = v.ls_accuracy;
    d["distillable"] = v.distillable;
    d["best_attack"] = v.best_attack;
    d["marker"] = verdict_marker(v.distillable);
    return d;
  });
  m.def("simplex_point", [](double p1, double p2, double p3) {
    const auto pt = simplex_point(p1, p2, p3);
    return py::make_tuple(pt.x, pt.y);
  });

  m.def("generate_gaussian_mixture", [](std::uint64_t seed, int classes, int per_class, int dim,
                                        double separation, double noise) {
    const auto tt = generate_gaussian_mixture({seed, classes, per_class, dim, separation, noise});
    py::dict d;
    d["train_x"] = to_array(tt.train.features);
    d["train_y"] = tt.train.labels;
    d["test_x"] = to_array(tt.test.features);
    d["test_y"] = tt.test.labels;
    return d;
  }, py::arg("seed") = 0, py::arg("classes") = 4, py::arg("per_class") = 250, py::arg("dim") = 2,
     py::arg("separation") = 3.0, py::arg("noise") = 1.0);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lambda_", &TrainConfig::lambda)
      .def_readwrite("beta", &TrainConfig::beta)
      .def_readwrite("omega", &TrainConfig::omega)
      .def_readwrite("n_alpha", &TrainConfig::n_alpha)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("per_class_batch_size", &TrainConfig::per_class_batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("lr_milestones", &TrainConfig::lr_milestones)
      .def_readwrite("lr_gamma", &TrainConfig::lr_gamma)
      .def_readwrite("ls_epsilon", &TrainConfig::ls_epsilon)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("hidden", &TrainConfig::hidden)
      .def_readwrite("profile_grid_size", &TrainConfig::profile_grid_size);

  m.def("train", [](const std::string& method, const TrainConfig& cfg,
                    const py::array_t<double, py::array::c_style | py::array::forcecast>& train_x,
                    const std::vector<int>& train_y, std::size_t num_classes) {
    const Method meth = parse_method(method);
    const LabeledDataset data = to_dataset(train_x, train_y, num_classes);
    TrainResult result;
    {
      py::gil_scoped_release release;
      result = train(meth, cfg, data, nullptr);
    }
    py::list epochs;
    for (const auto& e : result.report.epochs) {
      py::dict row;
      row["epoch"] = e.epoch;
      row["ce_loss"] = e.ce_loss;
      row["cmi_term"] = e.cmi_term;
      row["train_acc"] = e.train_acc;
      epochs.append(row);
    }
    py::dict d;
    d["checkpoint"] = serialize_checkpoint(make_checkpoint(meth, cfg, result.params));
    d["epochs"] = epochs;
    d["profile"] = profile_dict(result.report.final_profile);
    return d;
  }, py::arg("method"), py::arg("config"), py::arg("train_x"), py::arg("train_y"),
     py::arg("num_classes"));

  m.def("predict_probs", [](const std::string& checkpoint,
                            const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
    return to_array(predict_probs(parse_checkpoint(checkpoint).params, to_matrix(x)));
  }, py::arg("checkpoint"), py::arg("x"));
}
