#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "elastic_dml/econ.hpp"
#include "elastic_dml/error.hpp"
#include "elastic_dml/rng.hpp"
#include "elastic_dml/sim.hpp"

using namespace elastic_dml;
using namespace elastic_dml::econ;

namespace {

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::io;
}

// Poisson panel from log E[y] = eps * log(1 - d) + u_i + c_t.
TwfeData poisson_panel(double eps, int units, int periods, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> unit_effect(2.5, 0.5);
  std::normal_distribution<double> period_effect(0.0, 0.3);
  std::uniform_int_distribution<int> step(0, 5);
  std::vector<double> u(static_cast<std::size_t>(units));
  std::vector<double> c(static_cast<std::size_t>(periods));
  for (double& v : u) v = unit_effect(gen);
  for (double& v : c) v = period_effect(gen);
  TwfeData data;
  data.n_units = units;
  data.n_periods = periods;
  for (int i = 0; i < units; ++i) {
    for (int t = 0; t < periods; ++t) {
      const double d = 0.1 * step(gen);
      const double x = std::log1p(-d);
      std::poisson_distribution<int> y(std::exp(eps * x + u[static_cast<std::size_t>(i)] + c[static_cast<std::size_t>(t)]));
      data.unit.push_back(i);
      data.period.push_back(t);
      data.x.push_back(x);
      data.y.push_back(y(gen));
    }
  }
  return data;
}

// Two articles, ten weeks, hand-set demand and discounts.
Panel tiny_panel() {
  Panel p;
  p.n_weeks = 40;
  for (int i = 0; i < 2; ++i) {
    ArticleStatic a;
    a.article_id = i;
    a.base_price = 10.0;
    p.statics.push_back(a);
    std::vector<SeriesPoint> s;
    for (int t = 0; t < 40; ++t) {
      SeriesPoint pt;
      pt.week = t;
      pt.demand = i == 0 ? 42.0 : 10.0 + 5.0 * std::sin(2.0 * M_PI * t / 30.0);
      pt.discount = t % 2 == 0 ? 0.0 : 0.5;
      pt.price = 10.0 * (1 - pt.discount);
      s.push_back(pt);
    }
    p.series.push_back(s);
  }
  return p;
}

}  // namespace

TEST_CASE("elasticity algebra") {
  CHECK(elasticity_demand(100, 10, 5, -1) == doctest::Approx(200).epsilon(1e-15));
  CHECK(elasticity_demand(100, 10, 20, -2) == doctest::Approx(25).epsilon(1e-15));
  for (double e : {-3.0, 0.0, 1.7}) CHECK(elasticity_demand(100, 10, 10, e) == 100.0);
  CHECK(implied_elasticity(100, 200, 10, 5) == doctest::Approx(-1).epsilon(1e-15));
  CHECK(implied_elasticity(100, 100, 10, 5) == 0.0);
  CHECK(kind_of([] { elasticity_demand(0, 10, 5, -1); }) == ErrorKind::domain);
  CHECK(kind_of([] { elasticity_demand(1, -1, 5, -1); }) == ErrorKind::domain);
  CHECK(kind_of([] { implied_elasticity(1, 2, 5, 5); }) == ErrorKind::undefined_elasticity);
}

TEST_CASE("round trip over random tuples") {
  Stream rng(31);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double q0 = std::exp(rng.uniform(-3, 6));
    const double p0 = std::exp(rng.uniform(-2, 4));
    double p1 = std::exp(rng.uniform(-2, 4));
    if (std::abs(std::log(p1 / p0)) < 1e-3) p1 = p0 * 1.5;
    const double eps = rng.uniform(-5, 1);
    const double q1 = elasticity_demand(q0, p0, p1, eps);
    worst = std::max(worst, std::abs(implied_elasticity(q0, q1, p0, p1) - eps));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("closed form solves dq/q = eps dp/p") {
  // RK4 on dq/dp = eps q / p
  for (double eps : {-2.5, -1.0, -0.3, 0.7}) {
    const double q0 = 80.0, p0 = 12.0, p1 = 4.5;
    const int steps = 20000;
    const double h = (p1 - p0) / steps;
    double q = q0, p = p0;
    auto f = [eps](double pp, double qq) { return eps * qq / pp; };
    for (int i = 0; i < steps; ++i) {
      const double k1 = f(p, q);
      const double k2 = f(p + h / 2, q + h / 2 * k1);
      const double k3 = f(p + h / 2, q + h / 2 * k2);
      const double k4 = f(p + h, q + h * k3);
      q += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
      p += h;
    }
    const double closed = elasticity_demand(q0, p0, p1, eps);
    CHECK(std::abs(q - closed) / closed < 1e-6);
  }
}

TEST_CASE("TWFE recovers the elasticity") {
  for (double eps : {-2.0, 0.0}) {
    const TwfeData data = poisson_panel(eps, 200, 50, 7);
    const ElasticityFit fit = twfe_poisson_fit(data);
    CHECK(fit.status == FitStatus::converged);
    CHECK(std::abs(fit.epsilon - eps) <= 0.05);
    CHECK(fit.gradient_norm < 1e-8);
    CHECK(fit.period_effects[0] == 0.0);
    CHECK(fit.observations == 10000);
  }
}

TEST_CASE("TWFE serial and parallel agree") {
  const TwfeData data = poisson_panel(-1.2, 60, 20, 3);
  const auto a = twfe_poisson_fit(data, {}, Exec::serial);
  const auto b = twfe_poisson_fit(data, {}, Exec::parallel);
  CHECK(a.epsilon == b.epsilon);
  CHECK(a.unit_effects == b.unit_effects);
  CHECK(a.period_effects == b.period_effects);
}

TEST_CASE("fitted means are invariant to the normalization shift") {
  const TwfeData data = poisson_panel(-1.5, 30, 12, 11);
  const ElasticityFit fit = twfe_poisson_fit(data);
  ElasticityFit shifted = fit;
  for (double& u : shifted.unit_effects) u += 0.8;
  for (double& c : shifted.period_effects) c -= 0.8;
  for (std::size_t i = 0; i < data.y.size(); ++i) {
    CHECK(shifted.mean(data.unit[i], data.period[i], data.x[i]) ==
          doctest::Approx(fit.mean(data.unit[i], data.period[i], data.x[i])).epsilon(1e-12));
  }
}

TEST_CASE("Poisson score vanishes at the fit") {
  const TwfeData data = poisson_panel(-0.8, 40, 15, 5);
  const ElasticityFit fit = twfe_poisson_fit(data);
  REQUIRE(fit.status == FitStatus::converged);
  double total = 0.0;
  double score_eps = 0.0;
  std::vector<double> score_u(40, 0.0);
  std::vector<double> score_c(15, 0.0);
  for (std::size_t i = 0; i < data.y.size(); ++i) {
    const double r = data.y[i] - fit.mean(data.unit[i], data.period[i], data.x[i]);
    score_eps += r * data.x[i];
    score_u[static_cast<std::size_t>(data.unit[i])] += r;
    score_c[static_cast<std::size_t>(data.period[i])] += r;
    total += data.y[i];
  }
  CHECK(std::abs(score_eps) / total < 1e-6);
  for (double s : score_u) CHECK(std::abs(s) / total < 1e-6);
  for (std::size_t t = 1; t < score_c.size(); ++t) CHECK(std::abs(score_c[t]) / total < 1e-6);
}

TEST_CASE("TWFE degenerate inputs") {
  TwfeData data = poisson_panel(-1.0, 10, 6, 1);
  for (double& x : data.x) x = std::log1p(-0.2);
  CHECK(kind_of([&] { twfe_poisson_fit(data); }) == ErrorKind::rank_deficient);

  // discount constant within each article is absorbed by the article effect
  TwfeData per_unit = poisson_panel(-1.0, 10, 6, 1);
  for (std::size_t i = 0; i < per_unit.x.size(); ++i) per_unit.x[i] = 0.1 * per_unit.unit[i];
  CHECK(kind_of([&] { twfe_poisson_fit(per_unit); }) == ErrorKind::rank_deficient);

  TwfeData one = poisson_panel(-1.0, 1, 6, 1);
  CHECK(kind_of([&] { twfe_poisson_fit(one); }) == ErrorKind::rank_deficient);
}

TEST_CASE("TWFE on a simulated panel and per category") {
  SimConfig c;
  c.n_articles = 120;
  const Panel p = simulate_policy(c);
  const auto fit = twfe_poisson_fit(p, 20, 65);
  CHECK(std::isfinite(fit.fit.epsilon));
  CHECK(fit.fit.epsilon < 0.0);
  CHECK(fit.first_week == 20);
  CHECK(fit.article_ids.size() == fit.fit.unit_effects.size());
  const auto j = fit.to_json();
  CHECK(j.contains("epsilon"));

  const auto serial = twfe_fit_by_category(p, 20, 65, {}, Exec::serial);
  const auto parallel = twfe_fit_by_category(p, 20, 65, {}, Exec::parallel);
  REQUIRE(serial.size() == parallel.size());
  for (const auto& [k, g] : serial) CHECK(g.fit.epsilon == parallel.at(k).fit.epsilon);
}

TEST_CASE("TWFE carry-forward forecast") {
  Panel p = tiny_panel();
  p.series[0][9].demand = 100.0;
  p.series[0][9].discount = 0.0;
  CHECK(twfe_forecast(p, -1.0, 0, 10, 0.5) == doctest::Approx(200.0).epsilon(1e-15));
  CHECK(twfe_forecast(p, -1.7, 0, 10, 0.0) == 100.0);
  p.series[0][9].demand = 0.0;
  CHECK(twfe_forecast(p, -1.0, 0, 10, 0.5) == 0.0);
  CHECK(kind_of([&] { twfe_forecast(p, -1.0, 0, 0, 0.1); }) == ErrorKind::history);

  p.series[0][9].demand = 100.0;
  const std::vector<double> d{0.5, 0.5, 0.0};
  const auto path = twfe_forecast_path(p, -1.0, 0, 10, d);
  REQUIRE(path.size() == 3);
  CHECK(path[0] == doctest::Approx(200.0).epsilon(1e-15));
  CHECK(path[1] == doctest::Approx(200.0).epsilon(1e-15));
  CHECK(path[2] == doctest::Approx(100.0).epsilon(1e-15));
}

TEST_CASE("naive forecasts") {
  const Panel p = tiny_panel();
  CHECK(naive_forecasts(p, 0, 35, 5, NaiveKind::last_value) == std::vector<double>(5, 42.0));
  const auto s = naive_forecasts(p, 1, 35, 5, NaiveKind::seasonal_naive);
  for (int h = 0; h < 5; ++h) {
    CHECK(s[static_cast<std::size_t>(h)] == doctest::Approx(p.series[1][static_cast<std::size_t>(35 + h)].demand).epsilon(1e-12));
  }
  CHECK(kind_of([&] { naive_forecasts(p, 1, 10, 5, NaiveKind::seasonal_naive); }) == ErrorKind::history);
  CHECK(kind_of([&] { naive_forecasts(p, 1, 0, 5, NaiveKind::last_value); }) == ErrorKind::history);
  CHECK(naive_kind_from_string(to_string(NaiveKind::seasonal_naive)) == NaiveKind::seasonal_naive);
  CHECK(kind_of([] { naive_kind_from_string("sarimax"); }) == ErrorKind::config);
}
