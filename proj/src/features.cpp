#include "elastic_dml/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "elastic_dml/error.hpp"

namespace elastic_dml {

namespace {

void check_window(const Panel& panel, std::size_t index, int origin, const FeatureSpec& spec,
                  bool need_horizon) {
  const auto& series = panel.series.at(index);
  const int first = series.front().week;
  const int last = series.back().week;
  if (origin - spec.window < first || origin - 1 > last) {
    fail(ErrorKind::window, "article " + std::to_string(panel.statics[index].article_id) +
                                ": origin " + std::to_string(origin) + " lacks " +
                                std::to_string(spec.window) + " weeks of history");
  }
  if (need_horizon && origin + spec.horizon - 1 > last) {
    fail(ErrorKind::window, "article " + std::to_string(panel.statics[index].article_id) +
                                ": horizon beyond series end");
  }
}

void push_statics(std::vector<double>& x, const ArticleStatic& a, const FeatureSpec& spec, bool onehots) {
  if (onehots) {
    for (int d = 1; d <= spec.n_cat_d; ++d) x.push_back(a.cat_d == d ? 1.0 : 0.0);
    for (int k = 1; k <= spec.n_cat_k; ++k) x.push_back(a.cat_k == k ? 1.0 : 0.0);
  }
  x.push_back(std::log(a.base_price));
  x.push_back(static_cast<double>(a.promo));
}

}  // namespace

int FeatureSpec::outcome_dim() const {
  return 3 * window + 1 + 2 + 1 + (outcome_onehots ? n_cat_d + n_cat_k : 0) + 1 + 1 +
         (include_future_discount ? 1 : 0);
}

int FeatureSpec::effect_dim() const { return (effect_onehots ? n_cat_d + n_cat_k : 0) + 2 + 5; }

void FeatureSpec::validate() const {
  if (window < 1) fail(ErrorKind::config, "feature window must be >= 1");
  if (horizon < 1) fail(ErrorKind::config, "horizon must be >= 1");
  if (n_cat_d < 1 || n_cat_k < 1) fail(ErrorKind::config, "category counts must be >= 1");
  if (season_period < 1 || n_weeks < 1) fail(ErrorKind::config, "calendar sizes must be >= 1");
}

nlohmann::json FeatureSpec::to_json() const {
  return {{"window", window},           {"horizon", horizon},
          {"n_cat_d", n_cat_d},         {"n_cat_k", n_cat_k},
          {"season_period", season_period}, {"n_weeks", n_weeks},
          {"include_future_discount", include_future_discount},
          {"outcome_onehots", outcome_onehots}, {"effect_onehots", effect_onehots}};
}

FeatureSpec FeatureSpec::from_json(const nlohmann::json& j) {
  FeatureSpec s;
  s.window = j.at("window").get<int>();
  s.horizon = j.at("horizon").get<int>();
  s.n_cat_d = j.at("n_cat_d").get<int>();
  s.n_cat_k = j.at("n_cat_k").get<int>();
  s.season_period = j.at("season_period").get<int>();
  s.n_weeks = j.at("n_weeks").get<int>();
  s.include_future_discount = j.at("include_future_discount").get<bool>();
  s.outcome_onehots = j.value("outcome_onehots", s.outcome_onehots);
  s.effect_onehots = j.value("effect_onehots", s.effect_onehots);
  s.validate();
  return s;
}

FeatureSpec FeatureSpec::for_panel(const Panel& panel, int window, int horizon) {
  FeatureSpec s;
  return s.adapted_to(panel, window, horizon);
}

FeatureSpec FeatureSpec::adapted_to(const Panel& panel, int window, int horizon) const {
  FeatureSpec s = *this;
  s.window = window;
  s.horizon = horizon;
  s.n_cat_d = panel.n_cat_d;
  s.n_cat_k = panel.n_cat_k;
  s.season_period = panel.season_period;
  s.n_weeks = panel.n_weeks;
  return s;
}

namespace {

// Mean demand of the four weeks before `origin` (fewer if the series is short).
double recent_demand(const std::vector<SeriesPoint>& series, int origin) {
  const int first = series.front().week;
  double sum = 0.0;
  int n = 0;
  for (int w = std::max(first, origin - 4); w < origin; ++w, ++n) {
    sum += series[static_cast<std::size_t>(w - first)].demand;
  }
  return n == 0 ? 0.0 : sum / n;
}

// Stock relative to recent demand and the weeks left in the season. Raw stock
// drifts toward zero over the season, which nets cannot extrapolate.
double coverage_feature(double stock, double recent, int weeks_left) {
  return std::log1p(std::max(stock, 0.0) / ((recent + 1.0) * std::max(1, weeks_left)));
}

}  // namespace

std::vector<double> build_features(const Panel& panel, std::size_t index, int origin,
                                   const FeatureSpec& spec,
                                   std::span<const double> future_discounts) {
  const bool use_logged_future = spec.include_future_discount && future_discounts.empty();
  check_window(panel, index, origin, spec, use_logged_future);
  std::vector<double> x;
  x.reserve(static_cast<std::size_t>(spec.outcome_dim()));
  const auto& series = panel.series[index];
  const auto at = [&](int week) -> const SeriesPoint& {
    return series[static_cast<std::size_t>(week - series.front().week)];
  };
  for (int w = origin - spec.window; w < origin; ++w) x.push_back(std::log1p(at(w).demand));
  for (int w = origin - spec.window; w < origin; ++w) x.push_back(at(w).discount);
  const double recent = recent_demand(series, origin);
  for (int w = origin - spec.window; w < origin; ++w) {
    x.push_back(coverage_feature(at(w).stock, recent, spec.n_weeks - w));
  }
  // Stock entering the origin week, as the pricing rule would see it.
  const auto& last = at(origin - 1);
  x.push_back(coverage_feature(std::max(0.0, last.stock - last.demand), recent, spec.n_weeks - origin));
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(origin % spec.season_period) /
                       static_cast<double>(spec.season_period);
  x.push_back(std::sin(phase));
  x.push_back(std::cos(phase));
  x.push_back(static_cast<double>(origin) / static_cast<double>(spec.n_weeks));
  push_statics(x, panel.statics[index], spec, spec.outcome_onehots);
  if (spec.include_future_discount) {
    double sum = 0.0;
    if (use_logged_future) {
      for (int k = 0; k < spec.horizon; ++k) sum += at(origin + k).discount;
      x.push_back(sum / spec.horizon);
    } else {
      for (double d : future_discounts) sum += d;
      x.push_back(sum / static_cast<double>(future_discounts.size()));
    }
  }
  return x;
}

std::vector<double> build_effect_features(const Panel& panel, std::size_t index, int origin,
                                          const FeatureSpec& spec) {
  check_window(panel, index, origin, spec, false);
  std::vector<double> x;
  x.reserve(static_cast<std::size_t>(spec.effect_dim()));
  push_statics(x, panel.statics[index], spec, spec.effect_onehots);
  const auto& series = panel.series[index];
  const auto at = [&](int week) -> const SeriesPoint& {
    return series[static_cast<std::size_t>(week - series.front().week)];
  };
  double q = 0.0;
  double d = 0.0;
  for (int w = origin - spec.window; w < origin; ++w) {
    q += std::log1p(at(w).demand);
    d += at(w).discount;
  }
  x.push_back(q / spec.window);
  x.push_back(d / spec.window);
  x.push_back(coverage_feature(at(origin - 1).stock, recent_demand(series, origin),
                               spec.n_weeks - origin + 1));
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(origin % spec.season_period) /
                       static_cast<double>(spec.season_period);
  x.push_back(std::sin(phase));
  x.push_back(std::cos(phase));
  return x;
}

}  // namespace elastic_dml
