#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "scenecaps/attributes.hpp"

namespace scenecaps {

/// Column-per-sample training data.
struct Dataset {
  Eigen::MatrixXd inputs;   // input_dim × n
  Eigen::MatrixXd targets;  // output_dim × n

  std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
  Dataset subset(std::span<const std::size_t> columns) const;
};

/// Per-dimension affine standardization x ↦ (x − shift) · scale.
struct Standardizer {
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;

  bool empty() const { return shift.size() == 0; }
  static Standardizer identity(std::size_t dim);
  static Standardizer fit(const Eigen::MatrixXd& columns);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd invert(const Eigen::MatrixXd& z) const;
};

enum class Optimizer { sgd, momentum, adam };

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t steps = 1000;
  std::uint64_t seed = 1;
  Optimizer optimizer = Optimizer::momentum;
  double momentum = 0.9;
  double final_rate_fraction = 1.0;  // linear decay of the rate to this fraction
  bool standardize = true;           // fit input/target standardizers before training
  std::size_t log_every = 100;

  void validate() const;
};

struct TrainResult {
  double final_loss = 0.0;            // MSE over the training set, target units
  std::vector<double> loss_history;   // mean standardized batch loss per log interval
  std::size_t steps = 0;
};

/// Fully connected regression network with 4 weight layers, tanh hidden
/// activations and an identity output layer.
class DenseModel {
 public:
  using Layers = std::array<std::size_t, 5>;

  DenseModel() = default;
  DenseModel(const Layers& layers, std::uint64_t seed);

  const Layers& layers() const { return layers_; }
  std::size_t input_dim() const { return layers_[0]; }
  std::size_t output_dim() const { return layers_[4]; }

  std::vector<double> forward(std::span<const double> input) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const;

  /// Standardized-space MSE of one batch and its gradient w.r.t. parameters().
  double loss_and_grad(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Eigen::VectorXd& grad) const;
  Eigen::MatrixXd forward_standardized(const Eigen::MatrixXd& x) const;

  Eigen::VectorXd& parameters() { return theta_; }
  const Eigen::VectorXd& parameters() const { return theta_; }

  Standardizer input_standardizer;
  Standardizer output_standardizer;

  static constexpr const char* kind() { return "dense"; }
  nlohmann::json shape_json() const;
  static DenseModel from_shape_json(const nlohmann::json& j);

  friend bool operator==(const DenseModel& a, const DenseModel& b);

 private:
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const;

  Layers layers_{};
  Eigen::VectorXd theta_;
};

struct ConvStage {
  std::size_t channels = 8;
  std::size_t kernel = 3;
};

struct ConvConfig {
  std::size_t patch = 28;
  std::vector<ConvStage> stages{{8, 5}, {16, 3}};
  std::size_t hidden = 64;
  std::size_t outputs = 1;
};

/// Convolutional regressor: stages of valid convolution + ReLU + 2×2 max-pool,
/// then a ReLU dense layer and a linear output layer. Input is a P×P patch.
class ConvModel {
 public:
  ConvModel() = default;
  ConvModel(const ConvConfig& config, std::uint64_t seed);

  const ConvConfig& config() const { return config_; }
  std::size_t input_dim() const { return config_.patch * config_.patch; }
  std::size_t output_dim() const { return config_.outputs; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(theta_.size()); }

  std::vector<double> forward(std::span<const double> patch) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const;

  double loss_and_grad(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, Eigen::VectorXd& grad) const;
  Eigen::MatrixXd forward_standardized(const Eigen::MatrixXd& x) const;

  Eigen::VectorXd& parameters() { return theta_; }
  const Eigen::VectorXd& parameters() const { return theta_; }

  Standardizer input_standardizer;
  Standardizer output_standardizer;

  static constexpr const char* kind() { return "conv"; }
  nlohmann::json shape_json() const;
  static ConvModel from_shape_json(const nlohmann::json& j);

  friend bool operator==(const ConvModel& a, const ConvModel& b);

 private:
  struct StageShape {
    std::size_t in_channels, in_size, out_size, pooled_size, weight_offset, bias_offset;
  };
  struct SampleCache;

  void build_layout();
  Eigen::VectorXd forward_one(const Eigen::VectorXd& x, SampleCache* cache) const;

  ConvConfig config_;
  std::vector<StageShape> shapes_;
  std::size_t flat_dim_ = 0;
  std::size_t hidden_w_ = 0, hidden_b_ = 0, out_w_ = 0, out_b_ = 0;
  Eigen::VectorXd theta_;
};

/// Mini-batch gradient descent on MSE. Deterministic under config.seed.
template <class Model>
TrainResult train(Model& model, const Dataset& data, const TrainConfig& config);

/// Maximum relative error between analytic and central-difference parameter
/// gradients of the single-sample loss; relative error is
/// |a − n| / max(|a| + |n|, 1e-6). max_params = 0 checks every parameter.
template <class Model>
double grad_check(const Model& model, std::span<const double> input, std::span<const double> target, double epsilon,
                  std::size_t max_params = 0, std::uint64_t seed = 7);

/// Mean squared error of the model over a dataset, in target units.
template <class Model>
double evaluate_mse(const Model& model, const Dataset& data);

/// Rounds every parameter to the nearest 32-bit float, the precision of weight files.
void snap_to_float(Eigen::VectorXd& values);

// Weight files: "<stem>.bin" holds magic "SCWT", format version, model kind,
// layer dims and little-endian float32 parameters; "<stem>.json" is the sidecar
// with shape, standardizers and free-form metadata.
template <class Model>
void save_model(const Model& model, const std::filesystem::path& stem, const nlohmann::json& metadata = {});
template <class Model>
Model load_model(const std::filesystem::path& stem, nlohmann::json* metadata = nullptr);

}  // namespace scenecaps
