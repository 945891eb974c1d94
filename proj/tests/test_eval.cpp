#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "elastic_dml/error.hpp"
#include "elastic_dml/eval.hpp"
#include "elastic_dml/panel_io.hpp"
#include "elastic_dml/rng.hpp"
#include "elastic_dml/sim.hpp"

using namespace elastic_dml;
using namespace elastic_dml::eval;

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

Panel small_panel(SimConfig c = {}) {
  c.n_articles = 16;
  c.n_weeks = 60;
  return simulate_policy(c);
}

ProtocolConfig small_protocol(std::vector<ModelKind> models, int seeds) {
  ProtocolConfig c;
  c.train_windows = {{10, 30}, {15, 35}, {20, 40}, {25, 45}};
  c.horizon = 5;
  c.n_seeds = seeds;
  c.models = std::move(models);
  c.model.features.window = 8;
  return c;
}

}  // namespace

TEST_CASE("mae and mse") {
  const std::vector<double> a{2}, b{1};
  CHECK(mae(a, b) == 1.0);
  CHECK(mse(a, b) == 1.0);
  const std::vector<double> c{0, 4}, d{2, 2};
  CHECK(mae(c, d) == 2.0);
  CHECK(mse(c, d) == 4.0);
  CHECK(mae(d, d) == 0.0);
  CHECK(mse(d, d) == 0.0);
  CHECK(kind_of([&] { mae(a, c); }) == ErrorKind::length_mismatch);
  const std::vector<double> none;
  CHECK(kind_of([&] { mse(none, none); }) == ErrorKind::length_mismatch);
}

TEST_CASE("demand error hand cases") {
  const std::vector<double> one{1.0};
  CHECK(demand_error({{2.0}}, {{1.0}}, one) == 1.0);
  CHECK(demand_error({{1.0}}, {{1.0}}, one) == 0.0);
  const std::vector<double> b{1.0, 2.0};
  CHECK(std::abs(demand_error({{1.0}, {1.0}}, {{2.0}, {3.0}}, b) - std::sqrt(9.0 / 22.0)) <= 1e-12);
  CHECK(std::abs(demand_error({{1.0}, {1.0}}, {{2.0}, {3.0}}, b) - 0.63960) < 1e-5);
  CHECK(kind_of([&] { demand_error({{1.0}}, {{0.0}}, one); }) == ErrorKind::degenerate_truth);
}

TEST_CASE("demand error is scale consistent") {
  Stream rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int articles = 1 + trial % 5;
    const int weeks = 1 + trial % 7;
    Series pred(static_cast<std::size_t>(articles)), truth(static_cast<std::size_t>(articles));
    std::vector<double> prices;
    for (int i = 0; i < articles; ++i) {
      prices.push_back(rng.uniform(0.5, 50));
      for (int t = 0; t < weeks; ++t) {
        pred[static_cast<std::size_t>(i)].push_back(rng.uniform(0, 100));
        truth[static_cast<std::size_t>(i)].push_back(rng.uniform(0.1, 100));
      }
    }
    const double base = demand_error(pred, truth, prices);
    const double lambda = std::exp(rng.uniform(-5, 5));
    Series sp = pred, st = truth;
    for (auto& row : sp) for (double& v : row) v *= lambda;
    for (auto& row : st) for (double& v : row) v *= lambda;
    std::vector<double> sb = prices;
    for (double& v : sb) v *= lambda;
    worst = std::max(worst, std::abs(demand_error(sp, st, prices) - base) / base);
    worst = std::max(worst, std::abs(demand_error(pred, truth, sb) - base) / base);
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("effect error") {
  const std::vector<double> e{3, 5, 1};
  const auto same = effect_error(e, e, dml::HeadKind::linear);
  CHECK(same.mae == 0.0);
  CHECK(same.mse == 0.0);
  const std::vector<double> zero(3, 0.0);
  CHECK(effect_error(zero, e, dml::HeadKind::linear).mae == 3.0);
  CHECK(effect_error(zero, e, dml::HeadKind::linear).mse == doctest::Approx(35.0 / 3.0).epsilon(1e-15));
  CHECK(kind_of([&] { effect_error(e, e, dml::HeadKind::elastic); }) == ErrorKind::incomparable_units);

  const Panel p = small_panel();
  const auto truth = true_effects(p);
  REQUIRE(truth.size() == p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(truth[i] == doctest::Approx(p.statics[i].base_price * p.statics[i].effect).epsilon(1e-15));
  }
}

TEST_CASE("protocol counting, oracle and aggregation") {
  const Panel p = small_panel();
  const EvalReport r = run_protocol(p, small_protocol({ModelKind::naive_last, ModelKind::oracle}, 5));
  std::map<std::pair<std::string, std::string>, int> count;
  for (const auto& row : r.rows) ++count[{row.model, row.metric}];
  CHECK(count[{"naive-last", "MAE"}] == 40);
  CHECK(count[{"oracle", "MAE"}] == 40);

  std::set<std::tuple<std::string, std::string, std::string, int, std::string>> cells;
  for (const auto& row : r.rows) {
    CHECK(cells.insert({row.model, row.window, row.policy, row.seed, row.metric}).second);
    if (row.model == "oracle") {
      CHECK(row.status == Status::ok);
      CHECK(row.value == 0.0);
    }
    if (row.model == "naive-last" && row.metric.rfind("effect", 0) == 0) {
      CHECK(row.status == Status::incomparable);
    }
  }

  for (const auto& a : r.aggregates()) {
    std::vector<double> v;
    for (const auto& row : r.rows) {
      if (row.model == a.model && row.window == a.window && row.policy == a.policy &&
          row.metric == a.metric && row.status == Status::ok) {
        v.push_back(row.value);
      }
    }
    REQUIRE(static_cast<int>(v.size()) == a.n);
    if (v.empty()) continue;
    double mean = 0.0;
    for (double x : v) mean += x / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    CHECK(std::abs(a.mean - mean) <= 1e-12 * std::max(1.0, std::abs(mean)));
    CHECK(std::abs(a.sd - sd) <= 1e-12 * std::max(1.0, sd));
  }
  const auto back = aggregate(r.rows);
  CHECK(report_csv(back) == report_csv(r.aggregates()));
}

TEST_CASE("off-policy truth at the logged level is the on-policy truth") {
  // a single discount step pins every logged discount at zero
  SimConfig c;
  c.discount_steps = 1;
  c.target_avg_discount = 0.0;
  const Panel p = small_panel(c);
  for (const auto& s : p.series) {
    for (const auto& pt : s) REQUIRE(pt.discount == 0.0);
  }
  ProtocolConfig pc = small_protocol({ModelKind::naive_last, ModelKind::twfe, ModelKind::oracle}, 1);
  pc.off_policy_levels = {0.0};
  const EvalReport r = run_protocol(p, pc);
  std::map<std::tuple<std::string, std::string, std::string>, std::map<std::string, double>> by_policy;
  for (const auto& row : r.rows) {
    if (row.status != Status::ok) continue;
    by_policy[{row.model, row.window, row.metric}][row.policy] = row.value;
  }
  int compared = 0;
  for (const auto& [key, v] : by_policy) {
    if (!v.contains("on") || !v.contains("off")) continue;
    CHECK(v.at("on") == v.at("off"));
    ++compared;
  }
  CHECK(compared > 0);
}

TEST_CASE("protocol results do not depend on the worker count") {
  const Panel p = small_panel();
  ProtocolConfig pc = small_protocol({ModelKind::naive_seasonal, ModelKind::twfe}, 2);
  pc.train_windows = {{20, 40}, {25, 45}};
  CHECK(metrics_csv(run_protocol(p, pc, Exec::serial).rows) == metrics_csv(run_protocol(p, pc, Exec::parallel).rows));
}

TEST_CASE("protocol config validation") {
  const Panel p = small_panel();
  ProtocolConfig pc = small_protocol({ModelKind::oracle}, 1);
  pc.train_windows = {{40, 58}};
  CHECK(kind_of([&] { pc.validate(p); }) == ErrorKind::config);
  pc = small_protocol({ModelKind::oracle}, 1);
  pc.off_policy_levels = {0.9};
  CHECK(kind_of([&] { pc.validate(p); }) == ErrorKind::config);
  pc = small_protocol({ModelKind::oracle}, 0);
  CHECK(kind_of([&] { pc.validate(p); }) == ErrorKind::config);
  CHECK(kind_of([] { model_kind_from_string("prophet"); }) == ErrorKind::config);
  const auto j = small_protocol({ModelKind::dml, ModelKind::tf}, 3).to_json();
  CHECK(ProtocolConfig::from_json(j).to_json() == j);
}

TEST_CASE("holdout replacement") {
  const Panel p = small_panel();
  const std::vector<int> targets{30, 31, 32};
  const Panel r = holdout_replacement(p, targets, 3);
  REQUIRE(r.size() == p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& src = p.series[i];
    const auto& out = r.series[i];
    REQUIRE(out.size() == src.size());
    std::size_t first = 0;
    while (src[first].week != 30) ++first;
    for (std::size_t k = 0; k < out.size(); ++k) {
      CHECK(out[k].week == src[k].week);
      if (k < first || k > first + 2) {
        CHECK(out[k].demand == src[k].demand);
        CHECK(out[k].discount == src[k].discount);
      }
    }
    // the three rows equal a run of three consecutive non-target weeks
    bool found = false;
    for (std::size_t s = 0; s + 2 < src.size() && !found; ++s) {
      if (s + 2 >= first && s <= first + 2) continue;
      bool same = true;
      for (std::size_t k = 0; k < 3; ++k) {
        const auto& a = out[first + k];
        const auto& b = src[s + k];
        same = same && a.demand == b.demand && a.discount == b.discount && a.stock == b.stock && a.price == b.price;
      }
      found = same;
    }
    CHECK(found);
  }
  CHECK(panel_csv(holdout_replacement(p, targets, 3)) == panel_csv(r));
  CHECK(panel_csv(holdout_replacement(p, targets, 4)) != panel_csv(r));

  Panel tiny = p;
  for (auto& s : tiny.series) s.resize(5);
  const std::vector<int> early{1, 2, 3};
  CHECK(kind_of([&] { holdout_replacement(tiny, early, 1); }) == ErrorKind::replacement);
}
