#include "cmim/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cmim/prob.hpp"

namespace cmim {

namespace {

using nlohmann::json;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

ModelParams init_params(const std::vector<int>& layer_dims, std::mt19937_64& rng) {
  if (layer_dims.size() < 2) throw std::invalid_argument("init_params: need at least input and output dims");
  for (int d : layer_dims) {
    if (d <= 0) throw std::invalid_argument("init_params: layer dims must be positive");
  }
  ModelParams p;
  p.layer_dims = layer_dims;
  for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
    const auto in = static_cast<std::size_t>(layer_dims[k]);
    const auto out = static_cast<std::size_t>(layer_dims[k + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix w(in, out);
    for (double& v : w.data()) v = dist(rng);
    std::vector<double> b(out);
    for (double& v : b) v = dist(rng);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z;
  z.layer_dims = params.layer_dims;
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    z.weights.emplace_back(params.weights[k].rows(), params.weights[k].cols());
    z.biases.emplace_back(params.biases[k].size(), 0.0);
  }
  return z;
}

void validate(const ModelParams& params) {
  const auto& dims = params.layer_dims;
  if (dims.size() < 2) throw std::invalid_argument("ModelParams: need at least two layer dims");
  if (params.weights.size() != dims.size() - 1 || params.biases.size() != dims.size() - 1) {
    throw std::invalid_argument("ModelParams: layer count does not match layer_dims");
  }
  for (std::size_t k = 0; k < params.weights.size(); ++k) {
    const auto in = static_cast<std::size_t>(dims[k]);
    const auto out = static_cast<std::size_t>(dims[k + 1]);
    if (dims[k] <= 0 || dims[k + 1] <= 0 || params.weights[k].rows() != in ||
        params.weights[k].cols() != out || params.biases[k].size() != out) {
      throw std::invalid_argument("ModelParams: layer " + std::to_string(k) +
                                  " does not map " + std::to_string(dims[k]) + " -> " +
                                  std::to_string(dims[k + 1]));
    }
  }
}

std::vector<double> flatten(const ModelParams& params) {
  std::vector<double> flat;
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    auto w = params.weights[k].data();
    flat.insert(flat.end(), w.begin(), w.end());
    flat.insert(flat.end(), params.biases[k].begin(), params.biases[k].end());
  }
  return flat;
}

void unflatten(std::span<const double> flat, ModelParams& params) {
  std::size_t pos = 0;
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    for (double& v : params.weights[k].data()) {
      require(pos < flat.size(), "unflatten: too few values");
      v = flat[pos++];
    }
    for (double& v : params.biases[k]) {
      require(pos < flat.size(), "unflatten: too few values");
      v = flat[pos++];
    }
  }
  require(pos == flat.size(), "unflatten: too many values");
}

namespace {

// out = in W + b
Matrix affine(const Matrix& in, const Matrix& w, const std::vector<double>& b) {
  Matrix out(in.rows(), w.cols());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto dst = out.row(r);
    std::copy(b.begin(), b.end(), dst.begin());
    auto src = in.row(r);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      const double x = src[i];
      if (x == 0.0) continue;
      auto wr = w.row(i);
      for (std::size_t j = 0; j < w.cols(); ++j) dst[j] += x * wr[j];
    }
  }
  return out;
}

Matrix run(const ModelParams& params, const Matrix& inputs, ForwardCache* cache) {
  validate(params);
  require(inputs.cols() == params.input_dim(),
          "forward_batch: input width " + std::to_string(inputs.cols()) + " != " +
              std::to_string(params.input_dim()));
  if (cache) {
    cache->activations.clear();
    cache->pre_activations.clear();
    cache->activations.push_back(inputs);
  }
  Matrix h = inputs;
  const std::size_t layers = params.num_layers();
  for (std::size_t k = 0; k < layers; ++k) {
    Matrix z = affine(h, params.weights[k], params.biases[k]);
    if (k + 1 == layers) return z;
    if (cache) cache->pre_activations.push_back(z);
    for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
    if (cache) cache->activations.push_back(z);
    h = std::move(z);
  }
  return h;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    kernels::softmax(logits.row(r), 1.0, probs.row(r));
  }
  return probs;
}

}  // namespace

ForwardResult forward_batch(const ModelParams& params, const Matrix& inputs) {
  ForwardResult res;
  res.logits = run(params, inputs, &res.cache);
  res.probs = softmax_rows(res.logits);
  return res;
}

Matrix forward_logits(const ModelParams& params, const Matrix& inputs) {
  return run(params, inputs, nullptr);
}

Matrix predict_probs(const ModelParams& params, const Matrix& inputs) {
  return softmax_rows(run(params, inputs, nullptr));
}

ModelParams backprop_logits(const ModelParams& params, const ForwardCache& cache,
                            const Matrix& dlogits) {
  const std::size_t layers = params.num_layers();
  require(cache.activations.size() == layers, "backprop_logits: cache does not match params");
  const std::size_t m = cache.activations.front().rows();
  require(dlogits.rows() == m && dlogits.cols() == params.num_classes(),
          "backprop_logits: dlogits shape mismatch");
  ModelParams grad = zeros_like(params);
  Matrix delta = dlogits;
  for (std::size_t k = layers; k-- > 0;) {
    const Matrix& in = cache.activations[k];
    Matrix& gw = grad.weights[k];
    auto& gb = grad.biases[k];
    for (std::size_t r = 0; r < m; ++r) {
      auto d = delta.row(r);
      auto x = in.row(r);
      for (std::size_t j = 0; j < d.size(); ++j) gb[j] += d[j];
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] == 0.0) continue;
        auto gwr = gw.row(i);
        for (std::size_t j = 0; j < d.size(); ++j) gwr[j] += x[i] * d[j];
      }
    }
    if (k == 0) break;
    const Matrix& w = params.weights[k];
    const Matrix& pre = cache.pre_activations[k - 1];
    Matrix prev(m, w.rows());
    for (std::size_t r = 0; r < m; ++r) {
      auto d = delta.row(r);
      auto out = prev.row(r);
      auto z = pre.row(r);
      for (std::size_t i = 0; i < w.rows(); ++i) {
        if (z[i] <= 0.0) continue;
        auto wr = w.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < d.size(); ++j) acc += wr[j] * d[j];
        out[i] = acc;
      }
    }
    delta = std::move(prev);
  }
  return grad;
}

void accumulate(ModelParams& dst, const ModelParams& src) {
  require(dst.num_layers() == src.num_layers(), "accumulate: layer count mismatch");
  for (std::size_t k = 0; k < dst.num_layers(); ++k) {
    auto d = dst.weights[k].data();
    auto s = src.weights[k].data();
    require(d.size() == s.size() && dst.biases[k].size() == src.biases[k].size(),
            "accumulate: shape mismatch");
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    for (std::size_t i = 0; i < dst.biases[k].size(); ++i) dst.biases[k][i] += src.biases[k][i];
  }
}

void sgd_step(ModelParams& params, const ModelParams& grad, SgdState& state, double lr,
              double momentum, double weight_decay) {
  if (state.velocity.weights.empty()) state.velocity = zeros_like(params);
  auto step = [&](std::span<double> w, std::span<const double> g, std::span<double> v) {
    require(w.size() == g.size() && w.size() == v.size(), "sgd_step: shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + (g[i] + weight_decay * w[i]);
      w[i] -= lr * v[i];
    }
  };
  require(grad.num_layers() == params.num_layers(), "sgd_step: layer count mismatch");
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    step(params.weights[k].data(), grad.weights[k].data(), state.velocity.weights[k].data());
    step(params.biases[k], grad.biases[k], state.velocity.biases[k]);
  }
}

// Checkpoint document:
// {
//   "format": "cmim-checkpoint", "format_version": 1,
//   "layer_dims": [d0, ..., C], "activation": "relu",
//   "layers": [{"weight": {"shape": [in, out], "data": [row-major]},
//               "bias": {"shape": [out], "data": [...]}}, ...],
//   "seed": <uint64>, "config": {...}
// }

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  validate(ckpt.params);
  json doc;
  doc["format"] = "cmim-checkpoint";
  doc["format_version"] = ckpt.format_version;
  doc["layer_dims"] = ckpt.params.layer_dims;
  doc["activation"] = "relu";
  json layers = json::array();
  for (std::size_t k = 0; k < ckpt.params.num_layers(); ++k) {
    const Matrix& w = ckpt.params.weights[k];
    json layer;
    layer["weight"] = {{"shape", {w.rows(), w.cols()}}, {"data", w.vec()}};
    layer["bias"] = {{"shape", {ckpt.params.biases[k].size()}}, {"data", ckpt.params.biases[k]}};
    layers.push_back(std::move(layer));
  }
  doc["layers"] = std::move(layers);
  doc["seed"] = ckpt.seed;
  doc["config"] = ckpt.config;
  return doc.dump(1) + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint is corrupt or truncated: ") + e.what());
  }
  try {
    if (!doc.is_object() || doc.value("format", "") != "cmim-checkpoint") {
      throw CheckpointError("not a cmim checkpoint (missing \"format\": \"cmim-checkpoint\")");
    }
    const int version = doc.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointVersionError("unsupported checkpoint format_version " +
                                   std::to_string(version) + " (expected " +
                                   std::to_string(kCheckpointVersion) + ")");
    }
    if (doc.value("activation", "relu") != "relu") {
      throw CheckpointError("unsupported activation " + doc.at("activation").dump());
    }
    Checkpoint ckpt;
    ckpt.format_version = version;
    ckpt.params.layer_dims = doc.at("layer_dims").get<std::vector<int>>();
    for (const auto& layer : doc.at("layers")) {
      const auto shape = layer.at("weight").at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw CheckpointError("weight shape must have two entries");
      ckpt.params.weights.emplace_back(shape[0], shape[1],
                                       layer.at("weight").at("data").get<std::vector<double>>());
      auto bias = layer.at("bias").at("data").get<std::vector<double>>();
      const auto bshape = layer.at("bias").at("shape").get<std::vector<std::size_t>>();
      if (bshape.size() != 1 || bshape[0] != bias.size()) {
        throw CheckpointError("bias shape does not match its data");
      }
      ckpt.params.biases.push_back(std::move(bias));
    }
    validate(ckpt.params);
    ckpt.seed = doc.at("seed").get<std::uint64_t>();
    ckpt.config = doc.value("config", json::object());
    return ckpt;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string text = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace cmim
