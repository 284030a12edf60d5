#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmim/matrix.hpp"
#include "json.hpp"

namespace cmim {

/// Fully connected rectifier network ending in a softmax head.
/// weights[k] is dims[k] x dims[k+1]; logits = h W + b.
struct ModelParams {
  std::vector<int> layer_dims;
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;

  std::size_t num_layers() const noexcept { return weights.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(layer_dims.front()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(layer_dims.back()); }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
ModelParams init_params(const std::vector<int>& layer_dims, std::mt19937_64& rng);
ModelParams zeros_like(const ModelParams& params);
/// Throws std::invalid_argument when shapes do not chain.
void validate(const ModelParams& params);

std::vector<double> flatten(const ModelParams& params);
void unflatten(std::span<const double> flat, ModelParams& params);

struct ForwardCache {
  /// activations[0] is the input; activations[k] is the rectified output of
  /// hidden layer k.
  std::vector<Matrix> activations;
  /// Pre-activations of every hidden layer.
  std::vector<Matrix> pre_activations;
};

struct ForwardResult {
  Matrix logits;
  Matrix probs;
  ForwardCache cache;
};

ForwardResult forward_batch(const ModelParams& params, const Matrix& inputs);
/// Logits only, no cache retained.
Matrix forward_logits(const ModelParams& params, const Matrix& inputs);
Matrix predict_probs(const ModelParams& params, const Matrix& inputs);

/// Reverse-mode gradient of a loss whose gradient w.r.t. the logits is
/// dlogits. The result has the same shapes as params.
ModelParams backprop_logits(const ModelParams& params, const ForwardCache& cache,
                            const Matrix& dlogits);

/// Adds src into dst; shapes must match.
void accumulate(ModelParams& dst, const ModelParams& src);

struct SgdState {
  ModelParams velocity;
};

/// v = momentum v + (g + weight_decay w); w -= lr v.
void sgd_step(ModelParams& params, const ModelParams& grad, SgdState& state, double lr,
              double momentum, double weight_decay);

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  int format_version = kCheckpointVersion;
  ModelParams params;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cmim
