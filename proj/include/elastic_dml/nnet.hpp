#pragma once

// Small feedforward regression learners. Hidden layers are affine + ReLU
// (+ inverted dropout while training); the output layer is affine followed by
// one of the role-specific activations and a fixed positive output scale.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "elastic_dml/parallel.hpp"

namespace elastic_dml::nnet {

enum class Activation { identity, softplus, negative_softplus };
enum class Loss { l1, l2 };
enum class Schedule { constant, exponential, inverse_sqrt };

std::string to_string(Activation a);
std::string to_string(Loss l);
std::string to_string(Schedule s);
Activation activation_from_string(const std::string& s);
Loss loss_from_string(const std::string& s);
Schedule schedule_from_string(const std::string& s);

/// ln(1 + e^z) without overflow, floored at the smallest normal double.
double softplus(double z);
double sigmoid(double z);

struct NetworkSpec {
  int input_dim = 1;
  std::vector<int> hidden_dims{64, 64};
  int output_dim = 1;
  Activation output_activation = Activation::identity;
  double dropout_rate = 0.1;
  /// Outputs are multiplied by this after the activation, so targets of
  /// order `output_scale` need pre-activations of order one.
  double output_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainConfig {
  Loss loss = Loss::l2;
  double learning_rate = 1e-3;
  int epochs = 30;
  int batch_size = 128;
  double weight_decay = 0.0;
  Schedule schedule = Schedule::constant;
  /// Per-step multiplicative decay exp(alpha) for the exponential schedule.
  double decay = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Column-major rows: each column of `features` and `targets` is one sample.
struct Dataset {
  int input_dim = 0;
  int target_dim = 0;
  Eigen::MatrixXd features;
  Eigen::MatrixXd targets;
  std::vector<double> weights;
  /// Free-form provenance tag per row (the DML stage stores article parity).
  std::vector<int> tags;

  Dataset() = default;
  Dataset(int input_dim, int target_dim, std::size_t reserve = 0);

  std::size_t size() const { return weights.size(); }
  void add(std::span<const double> x, std::span<const double> y, double weight = 1.0, int tag = 0);
  /// Shrinks storage to the rows actually added.
  void finalize();
  /// Throws ErrorKind::numerical on non-finite entries, ErrorKind::dimension
  /// on inconsistent shapes.
  void validate() const;

 private:
  std::size_t capacity_ = 0;
};

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

class Network {
 public:
  Network() = default;
  /// He-initialized weights drawn from `spec.seed`.
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  int input_dim() const { return spec_.input_dim; }
  int output_dim() const { return spec_.output_dim; }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// Per-feature standardization applied before the first layer.
  void set_normalization(Eigen::VectorXd mean, Eigen::VectorXd inv_std);
  bool has_normalization() const { return normalized_; }
  const Eigen::VectorXd& input_mean() const { return mean_; }
  const Eigen::VectorXd& input_inv_std() const { return inv_std_; }

  std::vector<double> forward(std::span<const double> x) const;
  double forward_scalar(std::span<const double> x) const;
  /// Inference on a batch (one sample per column). Work is split into fixed
  /// chunks so serial and parallel execution agree bit for bit.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& inputs, Exec exec = Exec::parallel) const;
  /// Pre-activation outputs (identity head, no scale) for a batch.
  Eigen::MatrixXd predict_raw(const Eigen::MatrixXd& inputs) const;

  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> values);

  nlohmann::json to_json() const;
  static Network from_json(const nlohmann::json& j);

  /// Applies the output activation and scale to a pre-activation value.
  double activate(double z) const;
  /// d activate / dz.
  double activate_derivative(double z) const;

 private:
  NetworkSpec spec_;
  std::vector<Layer> layers_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd inv_std_;
  bool normalized_ = false;
};

/// Per-batch objective. `outputs` holds the activated network outputs of the
/// rows in `rows` (one column each). The callback writes dLoss/dOutput into
/// `d_outputs` and returns the summed loss of the batch; the trainer divides
/// both by the batch size.
using Objective = std::function<double(std::span<const std::size_t> rows,
                                       const Eigen::MatrixXd& outputs,
                                       Eigen::MatrixXd& d_outputs)>;

/// Weighted mean over output dimensions of |e| or e^2 against dataset targets.
Objective target_objective(const Dataset& data, Loss loss);

struct TrainResult {
  Network network;
  double final_loss = 0.0;
  int steps = 0;
};

/// Mini-batch Adam with decoupled weight decay. Deterministic for a given
/// (spec, data, config). Input normalization is fitted from the data unless
/// the network already carries one.
TrainResult train(Network net, const Dataset& data, const TrainConfig& config);
TrainResult train(Network net, const Dataset& data, const TrainConfig& config,
                  const Objective& objective);

/// Mean objective over the whole dataset in inference mode.
double evaluate_loss(const Network& net, const Dataset& data, const Objective& objective);

/// Analytic parameter gradient of the loss on a single sample (no dropout).
std::vector<double> parameter_gradient(const Network& net, std::span<const double> x,
                                       std::span<const double> y, Loss loss);

/// Largest relative discrepancy between analytic and central-difference
/// parameter gradients for one sample.
double gradient_check(const Network& net, std::span<const double> x, std::span<const double> y,
                      Loss loss, double epsilon = 1e-6);

}  // namespace elastic_dml::nnet
