#pragma once

// Data generators with known answers, shared by the unit and acceptance
// tests. They draw from <random> so they stay independent of the library's
// own streams.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "elastic_dml/dml.hpp"

namespace oracles {

// q = theta d + g(z) + u, d = m(z) + v with g and m sharing the confounder.
struct PartialLinearSample {
  Eigen::MatrixXd z;  // 5 x n
  std::vector<double> d;
  std::vector<double> q;
};

inline double pl_m(const Eigen::VectorXd& z) { return std::tanh(z(0)) + 0.5 * z(1); }
inline double pl_g(const Eigen::VectorXd& z) {
  return 5.0 * pl_m(z) + std::sin(z(3)) + 0.5 * z(4) * z(4);
}

inline PartialLinearSample partial_linear(int n, double theta, unsigned seed, double v_sd = 4.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  PartialLinearSample s;
  s.z.resize(5, n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < 5; ++k) s.z(k, i) = normal(gen);
    const Eigen::VectorXd zi = s.z.col(i);
    const double d = pl_m(zi) + v_sd * normal(gen);
    s.d.push_back(d);
    s.q.push_back(theta * d + pl_g(zi) + normal(gen));
  }
  return s;
}

// Effect-stage rows with exact nuisances: q = q~ ((1 - d) / (1 - d~))^eps
// for the elastic head, q = q~ + slope (d - d~) for the linear head. The
// only input feature is a constant plus two noise columns.
inline elastic_dml::dml::EffectData injected_effect_data(int n, int horizon, double effect,
                                                         elastic_dml::dml::HeadKind head,
                                                         unsigned seed) {
  using namespace elastic_dml;
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  dml::EffectData out;
  out.data = nnet::Dataset(3, horizon, static_cast<std::size_t>(n));
  out.discount.resize(horizon, n);
  out.q_tilde.resize(horizon, n);
  out.d_tilde.resize(horizon, n);
  std::vector<double> q(static_cast<std::size_t>(horizon));
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < horizon; ++k) {
      const double qt = 20.0 + 80.0 * unit(gen);
      const double dt = 0.05 + 0.3 * unit(gen);
      const double d = std::clamp(dt + 0.15 * normal(gen), 0.0, 0.6);
      out.q_tilde(k, j) = qt;
      out.d_tilde(k, j) = dt;
      out.discount(k, j) = d;
      q[static_cast<std::size_t>(k)] = head == dml::HeadKind::elastic
                                           ? qt * std::pow((1.0 - d) / (1.0 - dt), effect)
                                           : qt + effect * (d - dt);
    }
    const std::vector<double> x{1.0, normal(gen), normal(gen)};
    out.data.add(x, q, 1.0, j % 2);
    out.source_parity.push_back(1 - j % 2);
    out.rows.push_back({static_cast<std::size_t>(j), 0, j % 2});
  }
  out.data.finalize();
  return out;
}

}  // namespace oracles
