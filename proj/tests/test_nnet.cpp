#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "elastic_dml/error.hpp"
#include "elastic_dml/nnet.hpp"
#include "elastic_dml/rng.hpp"

using namespace elastic_dml;
using namespace elastic_dml::nnet;

namespace {

Network linear_net(double w, double b) {
  NetworkSpec s;
  s.input_dim = 1;
  s.hidden_dims = {};
  s.dropout_rate = 0.0;
  Network net(s);
  net.set_parameters(std::vector<double>{w, b});
  return net;
}

// Constant predictor: a single zero input, so only the bias can move.
double fit_constant(const std::vector<double>& y, Loss loss) {
  Dataset data(1, 1);
  for (double v : y) data.add(std::vector<double>{0.0}, std::vector<double>{v});
  data.finalize();
  TrainConfig tc;
  tc.loss = loss;
  tc.learning_rate = 0.1;
  tc.epochs = 10000;
  tc.batch_size = static_cast<int>(y.size());
  tc.schedule = Schedule::exponential;
  tc.decay = 0.9993;
  const auto r = train(linear_net(0.0, 0.0), data, tc);
  return r.network.forward_scalar(std::vector<double>{0.0});
}

}  // namespace

TEST_CASE("activations") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus(800.0) == 800.0);
  CHECK(softplus(-800.0) > 0.0);
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(std::isfinite(sigmoid(-1000.0)));

  NetworkSpec s;
  s.input_dim = 1;
  s.hidden_dims = {};
  s.dropout_rate = 0.0;
  Network id(s);
  id.set_parameters(std::vector<double>{1.0, 0.0});
  CHECK(id.forward_scalar(std::vector<double>{2.0}) == 2.0);
  s.output_activation = Activation::softplus;
  Network sp(s);
  sp.set_parameters(std::vector<double>{1.0, 0.0});
  CHECK(sp.forward_scalar(std::vector<double>{0.0}) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
}

TEST_CASE("output sign follows the activation") {
  Stream rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    NetworkSpec s;
    s.input_dim = 3;
    s.hidden_dims = {8};
    s.seed = static_cast<std::uint64_t>(trial);
    s.output_activation = trial % 2 == 0 ? Activation::negative_softplus : Activation::softplus;
    Network net(s);
    const std::vector<double> x{rng.normal(0, 5), rng.normal(0, 5), rng.normal(0, 5)};
    const double y = net.forward_scalar(x);
    if (trial % 2 == 0) {
      CHECK(y < 0.0);
    } else {
      CHECK(y > 0.0);
    }
  }
}

TEST_CASE("dimension and config errors") {
  NetworkSpec s;
  s.input_dim = 2;
  Network net(s);
  CHECK_THROWS_AS(net.forward(std::vector<double>{1.0}), Error);
  s.input_dim = 0;
  CHECK_THROWS_AS(Network{s}, Error);
  TrainConfig tc;
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  tc.decay = 0.0;
  CHECK_THROWS_AS(tc.validate(), Error);

  Dataset d(1, 1);
  d.add(std::vector<double>{std::nan("")}, std::vector<double>{1.0});
  d.finalize();
  try {
    d.validate();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numerical);
  }
  Dataset empty(1, 1);
  CHECK_THROWS_AS(train(linear_net(0, 0), empty, TrainConfig{}), Error);
}

TEST_CASE("linear fit matches least squares") {
  Stream rng(17);
  Dataset data(1, 1);
  std::vector<double> xs;
  std::vector<double> ys;
  for (int i = 0; i < 400; ++i) {
    const double x = rng.uniform(-2.0, 2.0);
    const double y = 3.0 * x + rng.normal(0.0, 0.05);
    xs.push_back(x);
    ys.push_back(y);
    data.add(std::vector<double>{x}, std::vector<double>{y});
  }
  data.finalize();
  double mx = 0, my = 0;
  for (int i = 0; i < 400; ++i) {
    mx += xs[i] / 400;
    my += ys[i] / 400;
  }
  double sxy = 0, sxx = 0;
  for (int i = 0; i < 400; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  const double ols = sxy / sxx;

  TrainConfig tc;
  tc.learning_rate = 0.05;
  tc.epochs = 300;
  tc.batch_size = 400;
  const auto r = train(linear_net(0.1, 0.0), data, tc);
  const double slope = r.network.forward_scalar(std::vector<double>{1.0}) -
                       r.network.forward_scalar(std::vector<double>{0.0});
  CHECK(std::abs(slope - ols) < 0.01);
  CHECK(std::abs(slope - 3.0) < 0.01);
}

TEST_CASE("L1 finds the median, L2 the mean") {
  const std::vector<double> y{1.0, 2.0, 3.0, 4.0, 100.0};
  CHECK(std::abs(fit_constant(y, Loss::l1) - 3.0) < 1e-2);
  CHECK(std::abs(fit_constant(y, Loss::l2) - 22.0) < 1e-3);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  NetworkSpec s;
  s.input_dim = 2;
  s.hidden_dims = {5};
  Network net(s);
  Dataset data(2, 1);
  for (int i = 0; i < 20; ++i) data.add(std::vector<double>{i * 1.0, -i * 0.5}, std::vector<double>{i * 2.0});
  data.finalize();
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.epochs = 3;
  tc.weight_decay = 0.1;
  const auto r = train(net, data, tc);
  CHECK(r.network.parameters() == net.parameters());
}

TEST_CASE("training is deterministic and inference ignores dropout") {
  Stream rng(5);
  Dataset data(3, 2);
  for (int i = 0; i < 300; ++i) {
    const std::vector<double> x{rng.normal(), rng.normal(), rng.normal()};
    data.add(x, std::vector<double>{x[0] * x[1], std::abs(x[2])});
  }
  data.finalize();
  NetworkSpec s;
  s.input_dim = 3;
  s.output_dim = 2;
  s.hidden_dims = {16, 16};
  s.dropout_rate = 0.3;
  s.seed = 4;
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 32;
  tc.seed = 8;
  const auto a = train(Network(s), data, tc);
  const auto b = train(Network(s), data, tc);
  CHECK(a.network.parameters() == b.network.parameters());
  CHECK(a.final_loss == b.final_loss);

  const std::vector<double> x{0.1, 0.2, 0.3};
  CHECK(a.network.forward(x) == a.network.forward(x));
  const Eigen::MatrixXd batch = data.features;
  const Eigen::MatrixXd p1 = a.network.predict(batch, Exec::serial);
  const Eigen::MatrixXd p2 = a.network.predict(batch, Exec::parallel);
  CHECK((p1.array() == p2.array()).all());
  const double single = a.network.forward(std::vector<double>(batch.col(7).data(), batch.col(7).data() + 3))[0];
  CHECK(p1(0, 7) == doctest::Approx(single).epsilon(1e-12));
}

TEST_CASE("json round trip is bitwise stable") {
  NetworkSpec s;
  s.input_dim = 4;
  s.hidden_dims = {7, 3};
  s.output_dim = 2;
  s.output_activation = Activation::negative_softplus;
  s.output_scale = 12.5;
  s.seed = 99;
  Network net(s);
  Eigen::VectorXd mean(4), inv(4);
  mean << 0.1, 0.2, 1.0 / 3.0, -7.0;
  inv << 1.0, 2.0, 0.7, 1e-3;
  net.set_normalization(mean, inv);
  const Network back = Network::from_json(nlohmann::json::parse(net.to_json().dump()));
  CHECK(back.parameters() == net.parameters());
  CHECK(back.input_mean() == net.input_mean());
  CHECK(back.input_inv_std() == net.input_inv_std());
  CHECK(back.to_json().dump() == net.to_json().dump());
  const std::vector<double> x{1, 2, 3, 4};
  CHECK(back.forward(x) == net.forward(x));

  auto broken = net.to_json();
  broken["version"] = 999;
  CHECK_THROWS_AS(Network::from_json(broken), Error);
  broken = net.to_json();
  broken["layers"][0]["weight"].erase(0);
  CHECK_THROWS_AS(Network::from_json(broken), Error);
}

TEST_CASE("analytic gradients") {
  // linear net, L2: gradient is 2 (yhat - y) [x, 1]
  const Network lin = linear_net(1.5, -0.5);
  const auto g = parameter_gradient(lin, std::vector<double>{2.0}, std::vector<double>{1.0}, Loss::l2);
  const double yhat = 1.5 * 2.0 - 0.5;
  CHECK(g[0] == 2.0 * (yhat - 1.0) * 2.0);
  CHECK(g[1] == 2.0 * (yhat - 1.0));
  const auto zero = parameter_gradient(lin, std::vector<double>{2.0}, std::vector<double>{yhat}, Loss::l2);
  CHECK(zero[0] == 0.0);
  CHECK(zero[1] == 0.0);

  Stream rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    NetworkSpec s;
    s.input_dim = 1 + trial % 4;
    s.hidden_dims = {3 + trial % 5, 2 + trial % 3};
    s.output_dim = 1 + trial % 3;
    s.output_activation = static_cast<Activation>(trial % 3);
    s.output_scale = 0.5 + trial % 4;
    s.seed = static_cast<std::uint64_t>(trial);
    Network net(s);
    // random biases too: zero biases behind a dead layer put units exactly on the ReLU kink
    std::vector<double> params(net.parameter_count());
    for (double& v : params) v = rng.normal(0.0, 0.7);
    net.set_parameters(params);
    std::vector<double> x(static_cast<std::size_t>(s.input_dim));
    std::vector<double> y(static_cast<std::size_t>(s.output_dim));
    for (double& v : x) v = rng.normal();
    for (double& v : y) v = rng.normal(0.0, 3.0);
    const Loss loss = trial % 2 == 0 ? Loss::l2 : Loss::l1;
    worst = std::max(worst, gradient_check(net, x, y, loss));
  }
  CHECK(worst < 1e-4);
}
