#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "elastic_dml/error.hpp"
#include "elastic_dml/features.hpp"
#include "elastic_dml/sim.hpp"

using namespace elastic_dml;

namespace {

// One external article with hand-set rows.
Panel hand_panel(int n_weeks, double demand, double discount, double stock) {
  Panel p;
  p.n_weeks = n_weeks;
  p.n_cat_d = 3;
  p.n_cat_k = 2;
  ArticleStatic a;
  a.article_id = 5;
  a.cat_d = 2;
  a.cat_k = 1;
  a.base_price = std::exp(2.0);
  a.promo = 1;
  p.statics.push_back(a);
  std::vector<SeriesPoint> s;
  for (int t = 0; t < n_weeks; ++t) {
    SeriesPoint pt;
    pt.week = t;
    pt.demand = demand;
    pt.discount = discount;
    pt.stock = stock;
    pt.price = a.base_price * (1 - discount);
    s.push_back(pt);
  }
  p.series.push_back(s);
  return p;
}

FeatureSpec spec_for(const Panel& p, int window, int horizon) {
  return FeatureSpec::for_panel(p, window, horizon);
}

}  // namespace

TEST_CASE("feature dimensions") {
  FeatureSpec s;
  CHECK(s.window == 16);
  // lags, origin coverage, phase, week index, price, promo
  CHECK(s.outcome_dim() == 3 * 16 + 1 + 2 + 1 + 2);
  s.outcome_onehots = true;
  CHECK(s.outcome_dim() == 3 * 16 + 1 + 2 + 1 + 45 + 15 + 2);
  s.include_future_discount = true;
  CHECK(s.outcome_dim() == 3 * 16 + 1 + 2 + 1 + 45 + 15 + 2 + 1);
  CHECK(s.effect_dim() == 45 + 15 + 2 + 5);
  s.effect_onehots = false;
  CHECK(s.effect_dim() == 7);

  const Panel p = simulate_policy([] {
    SimConfig c;
    c.n_articles = 4;
    return c;
  }());
  for (bool onehots : {false, true}) {
    FeatureSpec f = spec_for(p, 16, 5);
    f.outcome_onehots = onehots;
    CHECK(build_features(p, 0, 30, f).size() == static_cast<std::size_t>(f.outcome_dim()));
    f.include_future_discount = true;
    CHECK(build_features(p, 0, 30, f).size() == static_cast<std::size_t>(f.outcome_dim()));
    CHECK(build_effect_features(p, 0, 30, f).size() == static_cast<std::size_t>(f.effect_dim()));
  }
}

TEST_CASE("hand-computed outcome features") {
  const Panel p = hand_panel(40, 3.0, 0.2, 50.0);
  FeatureSpec s = spec_for(p, 4, 2);
  s.outcome_onehots = true;
  const int origin = 10;
  const auto x = build_features(p, 0, origin, s);
  REQUIRE(x.size() == static_cast<std::size_t>(s.outcome_dim()));
  std::size_t k = 0;
  for (int i = 0; i < 4; ++i) CHECK(x[k++] == std::log1p(3.0));
  for (int i = 0; i < 4; ++i) CHECK(x[k++] == 0.2);
  for (int w = origin - 4; w < origin; ++w) {
    CHECK(x[k++] == doctest::Approx(std::log1p(50.0 / (4.0 * (40 - w)))).epsilon(1e-15));
  }
  CHECK(x[k++] == doctest::Approx(std::log1p(47.0 / (4.0 * 30))).epsilon(1e-15));
  const double phase = 2.0 * std::numbers::pi * 10.0 / 30.0;
  CHECK(x[k++] == std::sin(phase));
  CHECK(x[k++] == std::cos(phase));
  CHECK(x[k++] == 10.0 / 40.0);
  CHECK(x[k++] == 0.0);  // cat_d one-hot
  CHECK(x[k++] == 1.0);
  CHECK(x[k++] == 0.0);
  CHECK(x[k++] == 1.0);  // cat_k one-hot
  CHECK(x[k++] == 0.0);
  CHECK(x[k++] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(x[k++] == 1.0);
  CHECK(k == x.size());
}

TEST_CASE("zero history gives a zero lag block") {
  const Panel p = hand_panel(30, 0.0, 0.0, 0.0);
  const FeatureSpec s = spec_for(p, 16, 5);
  const auto x = build_features(p, 0, 16, s);
  for (int i = 0; i < 3 * 16 + 1; ++i) CHECK(x[static_cast<std::size_t>(i)] == 0.0);
}

TEST_CASE("future discount is only present when requested") {
  const Panel p = hand_panel(30, 2.0, 0.1, 10.0);
  FeatureSpec s = spec_for(p, 4, 3);
  const auto base = build_features(p, 0, 10, s);
  s.include_future_discount = true;
  const auto logged = build_features(p, 0, 10, s);
  CHECK(logged.size() == base.size() + 1);
  CHECK(logged.back() == doctest::Approx(0.1).epsilon(1e-15));
  const std::vector<double> forced{0.3, 0.4, 0.5};
  CHECK(build_features(p, 0, 10, s, forced).back() == doctest::Approx(0.4).epsilon(1e-15));
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(logged[i] == base[i]);
}

TEST_CASE("hand-computed effect features") {
  const Panel p = hand_panel(40, 3.0, 0.2, 50.0);
  FeatureSpec s = spec_for(p, 4, 2);
  const auto e = build_effect_features(p, 0, 10, s);
  REQUIRE(e.size() == static_cast<std::size_t>(s.effect_dim()));
  CHECK(e[0] == 0.0);
  CHECK(e[1] == 1.0);
  CHECK(e[2] == 0.0);
  CHECK(e[3] == 1.0);
  CHECK(e[4] == 0.0);
  CHECK(e[5] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(e[6] == 1.0);
  CHECK(e[7] == doctest::Approx(std::log1p(3.0)).epsilon(1e-15));
  CHECK(e[8] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(e[9] == doctest::Approx(std::log1p(50.0 / (4.0 * 31))).epsilon(1e-15));
}

TEST_CASE("window errors and purity") {
  const Panel p = hand_panel(30, 2.0, 0.1, 10.0);
  FeatureSpec s = spec_for(p, 16, 5);
  auto kind = [&](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::io;
  };
  CHECK(kind([&] { build_features(p, 0, 15, s); }) == ErrorKind::window);
  CHECK(kind([&] { build_effect_features(p, 0, 10, s); }) == ErrorKind::window);
  s.include_future_discount = true;
  CHECK(kind([&] { build_features(p, 0, 27, s); }) == ErrorKind::window);
  CHECK(build_features(p, 0, 25, s) == build_features(p, 0, 25, s));
}

TEST_CASE("spec json round trip and adaptation") {
  FeatureSpec s;
  s.window = 12;
  s.outcome_onehots = true;
  s.effect_onehots = false;
  s.include_future_discount = true;
  const FeatureSpec back = FeatureSpec::from_json(s.to_json());
  CHECK(back.to_json() == s.to_json());

  Panel p = hand_panel(50, 1, 0, 1);
  p.n_cat_d = 7;
  const FeatureSpec a = s.adapted_to(p, 8, 3);
  CHECK(a.window == 8);
  CHECK(a.horizon == 3);
  CHECK(a.n_cat_d == 7);
  CHECK(a.n_weeks == 50);
  CHECK(a.outcome_onehots);
  CHECK_FALSE(a.effect_onehots);
}
