#include "elastic_dml/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "elastic_dml/error.hpp"
#include "elastic_dml/rng.hpp"

namespace elastic_dml::nnet {

namespace {

constexpr int kFormatVersion = 1;
constexpr Eigen::Index kPredictChunk = 256;

struct Tape {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  std::vector<Eigen::MatrixXd> masks;   // dropout masks of hidden layers (scaled)
};

Eigen::MatrixXd normalize(const Network& net, const Eigen::MatrixXd& x) {
  if (!net.has_normalization()) return x;
  return (x.colwise() - net.input_mean()).array().colwise() * net.input_inv_std().array();
}

/// Runs the network and records what backprop needs. Returns the
/// pre-activation of the output layer.
Eigen::MatrixXd forward_tape(const Network& net, const Eigen::MatrixXd& x, Tape* tape,
                             Stream* dropout_rng) {
  const auto& layers = net.layers();
  const double rate = net.spec().dropout_rate;
  Eigen::MatrixXd a = normalize(net, x);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = layers[l].weight * a;
    z.colwise() += layers[l].bias;
    if (tape != nullptr) {
      tape->inputs.push_back(a);
      tape->pre.push_back(z);
    }
    if (l + 1 == layers.size()) return z;
    a = z.cwiseMax(0.0);
    if (dropout_rng != nullptr && rate > 0.0) {
      Eigen::MatrixXd mask(a.rows(), a.cols());
      const double keep_scale = 1.0 / (1.0 - rate);
      for (Eigen::Index j = 0; j < mask.cols(); ++j) {
        for (Eigen::Index i = 0; i < mask.rows(); ++i) {
          mask(i, j) = dropout_rng->uniform() < rate ? 0.0 : keep_scale;
        }
      }
      a.array() *= mask.array();
      if (tape != nullptr) tape->masks.push_back(std::move(mask));
    }
  }
  return a;  // unreachable for networks with at least one layer
}

Eigen::MatrixXd activate_matrix(const Network& net, const Eigen::MatrixXd& z) {
  return z.unaryExpr([&net](double v) { return net.activate(v); });
}

/// Backpropagates dLoss/dOutput (activated) into parameter gradients.
void backward(const Network& net, const Tape& tape, const Eigen::MatrixXd& d_out,
              std::vector<Layer>& grads) {
  const auto& layers = net.layers();
  const std::size_t n = layers.size();
  const Eigen::MatrixXd& z_out = tape.pre.back();
  Eigen::MatrixXd delta = d_out.array() * z_out.unaryExpr([&net](double v) {
    return net.activate_derivative(v);
  }).array();
  for (std::size_t l = n; l-- > 0;) {
    grads[l].weight.noalias() = delta * tape.inputs[l].transpose();
    grads[l].bias = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = layers[l].weight.transpose() * delta;
    if (!tape.masks.empty()) back.array() *= tape.masks[l - 1].array();
    back.array() *= (tape.pre[l - 1].array() > 0.0).cast<double>();
    delta = std::move(back);
  }
}

std::vector<Layer> zero_like(const std::vector<Layer>& layers) {
  std::vector<Layer> out(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out[l].weight = Eigen::MatrixXd::Zero(layers[l].weight.rows(), layers[l].weight.cols());
    out[l].bias = Eigen::VectorXd::Zero(layers[l].bias.size());
  }
  return out;
}

double point_loss(double e, Loss loss) { return loss == Loss::l1 ? std::abs(e) : e * e; }
double point_loss_derivative(double e, Loss loss) {
  if (loss == Loss::l2) return 2.0 * e;
  return e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& m, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(rows[j]));
  }
  return out;
}

double learning_rate_at(const TrainConfig& c, int step) {
  switch (c.schedule) {
    case Schedule::constant: return c.learning_rate;
    case Schedule::exponential: return c.learning_rate * std::pow(c.decay, step);
    case Schedule::inverse_sqrt: return c.learning_rate / std::sqrt(static_cast<double>(step) + 1.0);
  }
  return c.learning_rate;
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_json_vector(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::softplus: return "softplus";
    case Activation::negative_softplus: return "negative_softplus";
  }
  return "identity";
}

std::string to_string(Loss l) { return l == Loss::l1 ? "l1" : "l2"; }

std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::constant: return "constant";
    case Schedule::exponential: return "exponential";
    case Schedule::inverse_sqrt: return "inverse_sqrt";
  }
  return "constant";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "softplus") return Activation::softplus;
  if (s == "negative_softplus") return Activation::negative_softplus;
  fail(ErrorKind::config, "unknown activation '" + s + "'");
}

Loss loss_from_string(const std::string& s) {
  if (s == "l1" || s == "L1") return Loss::l1;
  if (s == "l2" || s == "L2") return Loss::l2;
  fail(ErrorKind::config, "unknown loss '" + s + "'");
}

Schedule schedule_from_string(const std::string& s) {
  if (s == "constant") return Schedule::constant;
  if (s == "exponential") return Schedule::exponential;
  if (s == "inverse_sqrt") return Schedule::inverse_sqrt;
  fail(ErrorKind::config, "unknown schedule '" + s + "'");
}

double softplus(double z) {
  const double v = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  return std::max(v, std::numeric_limits<double>::min());
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void NetworkSpec::validate() const {
  if (input_dim < 1) fail(ErrorKind::config, "network input_dim must be >= 1");
  if (output_dim < 1) fail(ErrorKind::config, "network output_dim must be >= 1");
  for (int h : hidden_dims) {
    if (h < 1) fail(ErrorKind::config, "network hidden dims must be >= 1");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail(ErrorKind::config, "dropout_rate must lie in [0, 1)");
  if (!(output_scale > 0.0) || !std::isfinite(output_scale)) fail(ErrorKind::config, "output_scale must be > 0");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) fail(ErrorKind::config, "learning_rate must be >= 0");
  if (epochs < 0) fail(ErrorKind::config, "epochs must be >= 0");
  if (batch_size < 1) fail(ErrorKind::config, "batch_size must be >= 1");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::config, "weight_decay must be >= 0");
  if (!(decay > 0.0 && decay <= 1.0)) fail(ErrorKind::config, "schedule decay must lie in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail(ErrorKind::config, "adam betas must lie in [0, 1)");
  }
}

Dataset::Dataset(int in_dim, int out_dim, std::size_t reserve)
    : input_dim(in_dim), target_dim(out_dim), capacity_(reserve) {
  features.resize(in_dim, static_cast<Eigen::Index>(reserve));
  targets.resize(out_dim, static_cast<Eigen::Index>(reserve));
  weights.reserve(reserve);
  tags.reserve(reserve);
}

void Dataset::add(std::span<const double> x, std::span<const double> y, double weight, int tag) {
  if (static_cast<int>(x.size()) != input_dim || static_cast<int>(y.size()) != target_dim) {
    fail(ErrorKind::dimension, "dataset row has wrong dimensionality");
  }
  const std::size_t n = weights.size();
  if (n == capacity_) {
    capacity_ = std::max<std::size_t>(16, capacity_ * 2);
    features.conservativeResize(input_dim, static_cast<Eigen::Index>(capacity_));
    targets.conservativeResize(target_dim, static_cast<Eigen::Index>(capacity_));
  }
  const auto col = static_cast<Eigen::Index>(n);
  features.col(col) = Eigen::Map<const Eigen::VectorXd>(x.data(), input_dim);
  targets.col(col) = Eigen::Map<const Eigen::VectorXd>(y.data(), target_dim);
  weights.push_back(weight);
  tags.push_back(tag);
}

void Dataset::finalize() {
  const auto n = static_cast<Eigen::Index>(weights.size());
  features.conservativeResize(input_dim, n);
  targets.conservativeResize(target_dim, n);
  capacity_ = weights.size();
}

void Dataset::validate() const {
  const auto n = static_cast<Eigen::Index>(weights.size());
  if (features.rows() != input_dim || targets.rows() != target_dim || features.cols() < n ||
      targets.cols() < n || tags.size() != weights.size()) {
    fail(ErrorKind::dimension, "dataset storage is inconsistent");
  }
  if (!features.leftCols(n).allFinite() || !targets.leftCols(n).allFinite()) {
    fail(ErrorKind::numerical, "dataset contains non-finite values");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorKind::numerical, "dataset weights must be finite and >= 0");
  }
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  Stream rng(spec_.seed, Purpose::network_init, {});
  int fan_in = spec_.input_dim;
  std::vector<int> dims = spec_.hidden_dims;
  dims.push_back(spec_.output_dim);
  for (std::size_t l = 0; l < dims.size(); ++l) {
    Layer layer;
    layer.weight.resize(dims[l], fan_in);
    const bool output = l + 1 == dims.size();
    const double sd = std::sqrt((output ? 1.0 : 2.0) / fan_in);
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = rng.normal(0.0, sd);
    }
    layer.bias = Eigen::VectorXd::Zero(dims[l]);
    layers_.push_back(std::move(layer));
    fan_in = dims[l];
  }
}

void Network::set_normalization(Eigen::VectorXd mean, Eigen::VectorXd inv_std) {
  if (mean.size() != spec_.input_dim || inv_std.size() != spec_.input_dim) {
    fail(ErrorKind::dimension, "normalization size does not match input_dim");
  }
  mean_ = std::move(mean);
  inv_std_ = std::move(inv_std);
  normalized_ = true;
}

double Network::activate(double z) const {
  switch (spec_.output_activation) {
    case Activation::identity: return spec_.output_scale * z;
    case Activation::softplus: return spec_.output_scale * softplus(z);
    case Activation::negative_softplus: return -spec_.output_scale * softplus(z);
  }
  return z;
}

double Network::activate_derivative(double z) const {
  switch (spec_.output_activation) {
    case Activation::identity: return spec_.output_scale;
    case Activation::softplus: return spec_.output_scale * sigmoid(z);
    case Activation::negative_softplus: return -spec_.output_scale * sigmoid(z);
  }
  return 1.0;
}

std::vector<double> Network::forward(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != spec_.input_dim) {
    fail(ErrorKind::dimension, "forward: expected " + std::to_string(spec_.input_dim) +
                                   " inputs, got " + std::to_string(x.size()));
  }
  const Eigen::MatrixXd in = Eigen::Map<const Eigen::VectorXd>(x.data(), spec_.input_dim);
  const Eigen::MatrixXd out = activate_matrix(*this, forward_tape(*this, in, nullptr, nullptr));
  return {out.data(), out.data() + out.size()};
}

double Network::forward_scalar(std::span<const double> x) const {
  if (spec_.output_dim != 1) fail(ErrorKind::dimension, "forward_scalar on a multi-output network");
  return forward(x).front();
}

Eigen::MatrixXd Network::predict_raw(const Eigen::MatrixXd& inputs) const {
  if (inputs.rows() != spec_.input_dim) fail(ErrorKind::dimension, "predict: input rows != input_dim");
  return forward_tape(*this, inputs, nullptr, nullptr);
}

Eigen::MatrixXd Network::predict(const Eigen::MatrixXd& inputs, Exec exec) const {
  if (inputs.rows() != spec_.input_dim) fail(ErrorKind::dimension, "predict: input rows != input_dim");
  const Eigen::Index n = inputs.cols();
  Eigen::MatrixXd out(spec_.output_dim, n);
  const Eigen::Index chunks = (n + kPredictChunk - 1) / kPredictChunk;
  auto run_chunk = [&](Eigen::Index c) {
    const Eigen::Index begin = c * kPredictChunk;
    const Eigen::Index width = std::min(kPredictChunk, n - begin);
    out.middleCols(begin, width) =
        activate_matrix(*this, forward_tape(*this, inputs.middleCols(begin, width), nullptr, nullptr));
  };
  if (exec == Exec::parallel && chunks > 1) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    for (Eigen::Index c = 0; c < chunks; ++c) run_chunk(c);
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<double> Network::parameters() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
  return out;
}

void Network::set_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) fail(ErrorKind::dimension, "parameter vector has wrong length");
  std::size_t k = 0;
  for (auto& l : layers_) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(k), l.weight.size(), l.weight.data());
    k += static_cast<std::size_t>(l.weight.size());
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(k), l.bias.size(), l.bias.data());
    k += static_cast<std::size_t>(l.bias.size());
  }
}

nlohmann::json Network::to_json() const {
  nlohmann::json j;
  j["format"] = "elastic_dml.network";
  j["version"] = kFormatVersion;
  j["spec"] = {{"input_dim", spec_.input_dim},
               {"hidden_dims", spec_.hidden_dims},
               {"output_dim", spec_.output_dim},
               {"output_activation", to_string(spec_.output_activation)},
               {"dropout_rate", spec_.dropout_rate},
               {"output_scale", spec_.output_scale},
               {"seed", spec_.seed}};
  if (normalized_) {
    j["normalization"] = {{"mean", to_vector(mean_)}, {"inv_std", to_vector(inv_std_)}};
  }
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    // column-major, matching Eigen's storage
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size())},
                      {"bias", to_vector(l.bias)}});
  }
  j["layers"] = std::move(layers);
  return j;
}

Network Network::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "elastic_dml.network") fail(ErrorKind::schema, "not a network dump");
    if (j.at("version").get<int>() != kFormatVersion) fail(ErrorKind::schema, "unsupported network dump version");
    const auto& s = j.at("spec");
    NetworkSpec spec;
    spec.input_dim = s.at("input_dim").get<int>();
    spec.hidden_dims = s.at("hidden_dims").get<std::vector<int>>();
    spec.output_dim = s.at("output_dim").get<int>();
    spec.output_activation = activation_from_string(s.at("output_activation").get<std::string>());
    spec.dropout_rate = s.at("dropout_rate").get<double>();
    spec.output_scale = s.at("output_scale").get<double>();
    spec.seed = s.at("seed").get<std::uint64_t>();
    Network net(spec);
    const auto& layers = j.at("layers");
    if (layers.size() != net.layers_.size()) fail(ErrorKind::schema, "network dump layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& layer = net.layers_[l];
      const auto w = layers[l].at("weight").get<std::vector<double>>();
      if (layers[l].at("rows").get<Eigen::Index>() != layer.weight.rows() ||
          layers[l].at("cols").get<Eigen::Index>() != layer.weight.cols() ||
          static_cast<Eigen::Index>(w.size()) != layer.weight.size()) {
        fail(ErrorKind::schema, "network dump layer shape mismatch");
      }
      std::copy(w.begin(), w.end(), layer.weight.data());
      layer.bias = from_json_vector(layers[l].at("bias"));
      if (layer.bias.size() != layer.weight.rows()) fail(ErrorKind::schema, "network dump bias shape mismatch");
    }
    if (j.contains("normalization")) {
      net.set_normalization(from_json_vector(j["normalization"].at("mean")),
                            from_json_vector(j["normalization"].at("inv_std")));
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::schema, std::string("malformed network dump: ") + e.what());
  }
}

Objective target_objective(const Dataset& data, Loss loss) {
  return [&data, loss](std::span<const std::size_t> rows, const Eigen::MatrixXd& out,
                       Eigen::MatrixXd& d_out) {
    const double inv_dim = 1.0 / static_cast<double>(out.rows());
    double total = 0.0;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      const auto row = static_cast<Eigen::Index>(rows[j]);
      const double w = data.weights[rows[j]];
      for (Eigen::Index k = 0; k < out.rows(); ++k) {
        const double e = out(k, col) - data.targets(k, row);
        total += w * inv_dim * point_loss(e, loss);
        d_out(k, col) = w * inv_dim * point_loss_derivative(e, loss);
      }
    }
    return total;
  };
}

TrainResult train(Network net, const Dataset& data, const TrainConfig& config) {
  return train(std::move(net), data, config, target_objective(data, config.loss));
}

TrainResult train(Network net, const Dataset& data, const TrainConfig& config,
                  const Objective& objective) {
  config.validate();
  data.validate();
  if (data.size() == 0) fail(ErrorKind::config, "cannot train on an empty dataset");
  if (data.input_dim != net.input_dim()) fail(ErrorKind::dimension, "dataset input_dim != network input_dim");

  const auto n = static_cast<Eigen::Index>(data.size());
  if (!net.has_normalization()) {
    const Eigen::MatrixXd x = data.features.leftCols(n);
    Eigen::VectorXd mean = x.rowwise().mean();
    Eigen::VectorXd inv_std(mean.size());
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
      const double var = (x.row(i).array() - mean(i)).square().mean();
      inv_std(i) = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }
    net.set_normalization(std::move(mean), std::move(inv_std));
  }

  std::vector<Layer> grads = zero_like(net.layers());
  std::vector<Layer> m1 = zero_like(net.layers());
  std::vector<Layer> m2 = zero_like(net.layers());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  int step = 0;
  double beta1_pow = 1.0;
  double beta2_pow = 1.0;
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Stream shuffle(config.seed, Purpose::shuffle, {static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i - 1)));
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(batch, order.size() - start));
      const Eigen::MatrixXd x = gather_columns(data.features, rows);
      Stream dropout(config.seed, Purpose::dropout, {static_cast<std::uint64_t>(step)});
      Tape tape;
      const Eigen::MatrixXd z = forward_tape(net, x, &tape, &dropout);
      const Eigen::MatrixXd out = activate_matrix(net, z);
      Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(out.rows(), out.cols());
      const double inv_b = 1.0 / static_cast<double>(rows.size());
      const double loss = objective(rows, out, d_out) * inv_b;
      if (!std::isfinite(loss) || !d_out.allFinite()) {
        std::ostringstream msg;
        msg << "training diverged: loss " << loss << " at epoch " << epoch << ", step " << step
            << " (lr " << learning_rate_at(config, step) << ", batch of " << rows.size() << ")";
        fail(ErrorKind::numerical, msg.str());
      }
      d_out *= inv_b;
      backward(net, tape, d_out, grads);

      const double lr = learning_rate_at(config, step);
      beta1_pow *= config.beta1;
      beta2_pow *= config.beta2;
      const double step_size = lr * std::sqrt(1.0 - beta2_pow) / (1.0 - beta1_pow);
      auto& layers = net.layers();
      for (std::size_t l = 0; l < layers.size(); ++l) {
        m1[l].weight = config.beta1 * m1[l].weight + (1.0 - config.beta1) * grads[l].weight;
        m2[l].weight = config.beta2 * m2[l].weight + (1.0 - config.beta2) * grads[l].weight.cwiseAbs2();
        m1[l].bias = config.beta1 * m1[l].bias + (1.0 - config.beta1) * grads[l].bias;
        m2[l].bias = config.beta2 * m2[l].bias + (1.0 - config.beta2) * grads[l].bias.cwiseAbs2();
        if (config.weight_decay > 0.0) layers[l].weight *= (1.0 - lr * config.weight_decay);
        layers[l].weight.array() -=
            step_size * m1[l].weight.array() / (m2[l].weight.array().sqrt() + config.adam_epsilon);
        layers[l].bias.array() -=
            step_size * m1[l].bias.array() / (m2[l].bias.array().sqrt() + config.adam_epsilon);
      }
      ++step;
    }
  }
  result.steps = step;
  result.final_loss = evaluate_loss(net, data, objective);
  if (!std::isfinite(result.final_loss)) fail(ErrorKind::numerical, "training ended with a non-finite loss");
  result.network = std::move(net);
  return result;
}

double evaluate_loss(const Network& net, const Dataset& data, const Objective& objective) {
  const std::size_t n = data.size();
  if (n == 0) return 0.0;
  double total = 0.0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(kPredictChunk)) {
    const std::size_t width = std::min<std::size_t>(static_cast<std::size_t>(kPredictChunk), n - start);
    rows.resize(width);
    std::iota(rows.begin(), rows.end(), start);
    const Eigen::MatrixXd out = net.predict(data.features.middleCols(static_cast<Eigen::Index>(start),
                                                                     static_cast<Eigen::Index>(width)),
                                            Exec::serial);
    Eigen::MatrixXd d_out(out.rows(), out.cols());
    total += objective(rows, out, d_out);
  }
  return total / static_cast<double>(n);
}

std::vector<double> parameter_gradient(const Network& net, std::span<const double> x,
                                       std::span<const double> y, Loss loss) {
  if (static_cast<int>(x.size()) != net.input_dim() || static_cast<int>(y.size()) != net.output_dim()) {
    fail(ErrorKind::dimension, "gradient: sample does not match network dimensions");
  }
  const Eigen::MatrixXd in = Eigen::Map<const Eigen::VectorXd>(x.data(), net.input_dim());
  Tape tape;
  const Eigen::MatrixXd z = forward_tape(net, in, &tape, nullptr);
  const Eigen::MatrixXd out = activate_matrix(net, z);
  Eigen::MatrixXd d_out(out.rows(), 1);
  const double inv_dim = 1.0 / static_cast<double>(out.rows());
  for (Eigen::Index k = 0; k < out.rows(); ++k) {
    d_out(k, 0) = inv_dim * point_loss_derivative(out(k, 0) - y[static_cast<std::size_t>(k)], loss);
  }
  std::vector<Layer> grads = zero_like(net.layers());
  backward(net, tape, d_out, grads);
  std::vector<double> flat;
  flat.reserve(net.parameter_count());
  for (const auto& g : grads) {
    flat.insert(flat.end(), g.weight.data(), g.weight.data() + g.weight.size());
    flat.insert(flat.end(), g.bias.data(), g.bias.data() + g.bias.size());
  }
  return flat;
}

double gradient_check(const Network& net, std::span<const double> x, std::span<const double> y,
                      Loss loss, double epsilon) {
  const std::vector<double> analytic = parameter_gradient(net, x, y, loss);
  auto sample_loss = [&](const Network& n) {
    const auto out = n.forward(x);
    double total = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) total += point_loss(out[k] - y[k], loss);
    return total / static_cast<double>(out.size());
  };
  Network probe = net;
  std::vector<double> params = net.parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double original = params[i];
    params[i] = original + epsilon;
    probe.set_parameters(params);
    const double up = sample_loss(probe);
    params[i] = original - epsilon;
    probe.set_parameters(params);
    const double down = sample_loss(probe);
    params[i] = original;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
  }
  return worst;
}

}  // namespace elastic_dml::nnet
