#include "elastic_dml/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "elastic_dml/csv.hpp"
#include "elastic_dml/econ.hpp"
#include "elastic_dml/error.hpp"
#include "elastic_dml/rng.hpp"

namespace elastic_dml::eval {

namespace {

void check_lengths(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) fail(ErrorKind::length_mismatch, "prediction and truth differ in length");
  if (pred.empty()) fail(ErrorKind::length_mismatch, "metrics need at least one value");
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

double mse(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

double demand_error(const Series& pred, const Series& truth, std::span<const double> prices) {
  if (pred.size() != truth.size() || pred.size() != prices.size()) {
    fail(ErrorKind::length_mismatch, "demand_error: article counts differ");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].size() != truth[i].size()) fail(ErrorKind::length_mismatch, "demand_error: series lengths differ");
    if (!(prices[i] > 0.0)) fail(ErrorKind::domain, "demand_error: prices must be positive");
    for (std::size_t t = 0; t < pred[i].size(); ++t) {
      const double e = pred[i][t] - truth[i][t];
      num += prices[i] * e * e;
      den += prices[i] * truth[i][t] * truth[i][t];
    }
  }
  if (!(den > 0.0)) fail(ErrorKind::degenerate_truth, "demand_error: truth is zero everywhere");
  return std::sqrt(num / den);
}

EffectErrors effect_error(std::span<const double> psi, std::span<const double> truth,
                          dml::HeadKind head) {
  if (head == dml::HeadKind::elastic) {
    fail(ErrorKind::incomparable_units, "elastic-head outputs are elasticities, truth is a discount slope");
  }
  return {mae(psi, truth), mse(psi, truth)};
}

std::vector<double> true_effects(const Panel& panel) {
  if (!panel.has_truth()) fail(ErrorKind::unsupported, "effect truth needs a simulated panel");
  std::vector<double> out;
  out.reserve(panel.size());
  for (const auto& a : panel.statics) out.push_back(a.base_price * a.effect);
  return out;
}

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::dml: return "dml";
    case ModelKind::dml_nocf: return "dml-nocf";
    case ModelKind::sdml: return "sdml";
    case ModelKind::sdml_nocf: return "sdml-nocf";
    case ModelKind::dml_ss: return "dml-ss";
    case ModelKind::tf: return "tf";
    case ModelKind::twfe: return "twfe";
    case ModelKind::naive_last: return "naive-last";
    case ModelKind::naive_seasonal: return "naive-seasonal";
    case ModelKind::oracle: return "oracle";
  }
  return "dml";
}

ModelKind model_kind_from_string(const std::string& s) {
  for (ModelKind k : {ModelKind::dml, ModelKind::dml_nocf, ModelKind::sdml, ModelKind::sdml_nocf,
                      ModelKind::dml_ss, ModelKind::tf, ModelKind::twfe, ModelKind::naive_last,
                      ModelKind::naive_seasonal, ModelKind::oracle}) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorKind::config, "unknown model '" + s + "'");
}

std::string to_string(Status s) {
  switch (s) {
    case Status::ok: return "ok";
    case Status::failed: return "failed";
    case Status::incomparable: return "incomparable";
  }
  return "ok";
}

Status status_from_string(const std::string& s) {
  if (s == "ok") return Status::ok;
  if (s == "failed") return Status::failed;
  if (s == "incomparable") return Status::incomparable;
  fail(ErrorKind::schema, "unknown status '" + s + "'");
}

std::string window_label(dml::Window w) { return std::to_string(w.start) + "-" + std::to_string(w.end); }

dml::DmlConfig protocol_model_defaults() {
  dml::DmlConfig c;
  c.head = dml::HeadKind::linear;
  c.outcome_train.epochs = 60;
  c.treatment_train.epochs = 60;
  c.effect_train.epochs = 20;
  c.effect_train.learning_rate = 1e-3;
  return c;
}

void ProtocolConfig::validate(const Panel& panel) const {
  if (train_windows.empty()) fail(ErrorKind::config, "protocol needs at least one training window");
  if (horizon < 1) fail(ErrorKind::config, "protocol horizon must be >= 1");
  if (n_seeds < 1) fail(ErrorKind::config, "protocol needs at least one seed");
  if (models.empty()) fail(ErrorKind::config, "protocol needs at least one model");
  for (const auto& w : train_windows) {
    if (w.start < 0 || w.end <= w.start) fail(ErrorKind::config, "bad training window " + window_label(w));
    if (w.end + horizon > panel.n_weeks) {
      fail(ErrorKind::config, "horizon after window " + window_label(w) + " runs past week " +
                                  std::to_string(panel.n_weeks - 1));
    }
  }
  for (double l : off_policy_levels) {
    if (!(l >= 0.0 && l <= 0.5)) fail(ErrorKind::config, "off-policy levels must lie in [0, 0.5]");
  }
}

nlohmann::json ProtocolConfig::to_json() const {
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : train_windows) windows.push_back({w.start, w.end});
  nlohmann::json names = nlohmann::json::array();
  for (auto m : models) names.push_back(to_string(m));
  return {{"train_windows", windows}, {"horizon", horizon},     {"off_policy_levels", off_policy_levels},
          {"n_seeds", n_seeds},       {"base_seed", base_seed}, {"models", names},
          {"model", model.to_json()}};
}

ProtocolConfig ProtocolConfig::from_json(const nlohmann::json& j) {
  ProtocolConfig c;
  c.model = protocol_model_defaults();
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "train_windows") {
        c.train_windows.clear();
        for (const auto& w : value) c.train_windows.push_back({w.at(0).get<int>(), w.at(1).get<int>()});
      } else if (key == "horizon") {
        c.horizon = value.get<int>();
      } else if (key == "off_policy_levels") {
        c.off_policy_levels = value.get<std::vector<double>>();
      } else if (key == "n_seeds") {
        c.n_seeds = value.get<int>();
      } else if (key == "base_seed") {
        c.base_seed = value.get<std::uint64_t>();
      } else if (key == "models") {
        c.models.clear();
        for (const auto& m : value) c.models.push_back(model_kind_from_string(m.get<std::string>()));
      } else if (key == "model") {
        nlohmann::json merged = c.model.to_json();
        merged.merge_patch(value);
        c.model = dml::DmlConfig::from_json(merged);
      } else if (key != "panel" && key != "sim_config") {
        fail(ErrorKind::config, "unknown protocol field '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("protocol: ") + e.what());
  }
  return c;
}

namespace {

struct Prediction {
  Eigen::MatrixXd q_hat;               // horizon x articles
  std::optional<std::vector<double>> effect;
};

using Forecaster = std::function<Prediction(const dml::ForecastRequest&)>;

struct CellResult {
  std::vector<MetricRow> rows;
  std::vector<LevelRow> level_rows;
  std::vector<ArticleOffError> article_errors;
  std::string harness_error;
};

Prediction from_forecast(dml::Forecast f, bool effect_comparable) {
  Prediction p;
  p.q_hat = std::move(f.q_hat);
  if (effect_comparable) p.effect = std::move(f.effect);
  return p;
}

struct Scores {
  double mae = 0.0;
  double mse = 0.0;
  double demand_error = 0.0;
};

Scores score(const Eigen::MatrixXd& q_hat, const Series& truth, std::span<const double> prices) {
  const auto n = truth.size();
  std::vector<double> p;
  std::vector<double> t;
  Series pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    pred[i].resize(truth[i].size());
    for (std::size_t k = 0; k < truth[i].size(); ++k) {
      pred[i][k] = q_hat(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i));
      p.push_back(pred[i][k]);
      t.push_back(truth[i][k]);
    }
  }
  return {mae(p, t), mse(p, t), demand_error(pred, truth, prices)};
}

CellResult run_cell(const Panel& panel, const ProtocolConfig& config, std::size_t window_index,
                    int seed_index, const std::vector<double>& effects,
                    const std::vector<double>& prices) {
  CellResult out;
  const dml::Window window = config.train_windows[window_index];
  const std::string wl = window_label(window);
  const int h = config.horizon;
  const int origin = window.end;
  const std::size_t n = panel.size();

  dml::DmlConfig mc = config.model;
  mc.features = config.model.features.adapted_to(panel, config.model.features.window, h);
  mc.seed = derive_key(config.base_seed, {static_cast<std::uint64_t>(Purpose::protocol),
                                          static_cast<std::uint64_t>(seed_index),
                                          static_cast<std::uint64_t>(window_index)});

  std::vector<int> weeks(static_cast<std::size_t>(h));
  std::iota(weeks.begin(), weeks.end(), origin);
  Series on_truth(n, std::vector<double>(static_cast<std::size_t>(h)));
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < h; ++k) on_truth[i][static_cast<std::size_t>(k)] = panel.at(i, origin + k).demand;
  }
  std::vector<Series> off_truth;
  for (double level : config.off_policy_levels) {
    const std::vector<double> forced(static_cast<std::size_t>(h), level);
    Series s(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = counterfactual_demand(panel, panel.statics[i].article_id, weeks, forced);
    }
    off_truth.push_back(std::move(s));
  }

  std::optional<dml::Nuisances> shared;
  auto nuisances = [&]() -> const dml::Nuisances& {
    if (!shared) shared = dml::fit_nuisances(panel, window, mc, true);
    return *shared;
  };

  auto build = [&](ModelKind kind) -> Forecaster {
    switch (kind) {
      case ModelKind::dml:
      case ModelKind::dml_nocf:
      case ModelKind::sdml:
      case ModelKind::sdml_nocf:
      case ModelKind::dml_ss: {
        const dml::Variant v = kind == ModelKind::dml        ? dml::Variant::dml
                               : kind == ModelKind::dml_nocf ? dml::Variant::dml_nocf
                               : kind == ModelKind::sdml     ? dml::Variant::sdml
                               : kind == ModelKind::sdml_nocf ? dml::Variant::sdml_nocf
                                                              : dml::Variant::sample_split;
        auto model = std::make_shared<dml::DmlModel>(dml::fit_with_nuisances(panel, window, mc, v, nuisances()));
        const bool comparable = mc.head == dml::HeadKind::linear;
        return [model, &panel, comparable](const dml::ForecastRequest& r) {
          return from_forecast(dml::predict(*model, panel, r, Exec::serial), comparable);
        };
      }
      case ModelKind::tf: {
        auto model = std::make_shared<dml::TfModel>(dml::fit_tf_baseline(panel, window, mc));
        const bool comparable = mc.head == dml::HeadKind::linear;
        return [model, &panel, comparable](const dml::ForecastRequest& r) {
          return from_forecast(dml::predict_tf(*model, panel, r), comparable);
        };
      }
      case ModelKind::twfe: {
        const double eps = econ::twfe_poisson_fit(panel, window.start, window.end, {}, Exec::serial).fit.epsilon;
        return [eps, &panel, n, h](const dml::ForecastRequest& r) {
          Prediction p;
          p.q_hat.resize(h, static_cast<Eigen::Index>(n));
          for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> d = r.scenario.forced;
            if (r.scenario.logged) {
              d.resize(static_cast<std::size_t>(h));
              for (int k = 0; k < h; ++k) d[static_cast<std::size_t>(k)] = panel.at(i, r.origin + k).discount;
            }
            const auto path = econ::twfe_forecast_path(panel, eps, panel.statics[i].article_id, r.origin, d);
            for (int k = 0; k < h; ++k) p.q_hat(k, static_cast<Eigen::Index>(i)) = path[static_cast<std::size_t>(k)];
          }
          return p;
        };
      }
      case ModelKind::naive_last:
      case ModelKind::naive_seasonal: {
        const auto nk = kind == ModelKind::naive_last ? econ::NaiveKind::last_value : econ::NaiveKind::seasonal_naive;
        return [nk, &panel, n, h](const dml::ForecastRequest& r) {
          Prediction p;
          p.q_hat.resize(h, static_cast<Eigen::Index>(n));
          for (std::size_t i = 0; i < n; ++i) {
            const auto f = econ::naive_forecasts(panel, panel.statics[i].article_id, r.origin, h, nk);
            for (int k = 0; k < h; ++k) p.q_hat(k, static_cast<Eigen::Index>(i)) = f[static_cast<std::size_t>(k)];
          }
          return p;
        };
      }
      case ModelKind::oracle: {
        return [&panel, &effects, &weeks, n, h](const dml::ForecastRequest& r) {
          Prediction p;
          p.q_hat.resize(h, static_cast<Eigen::Index>(n));
          for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> d = r.scenario.forced;
            if (r.scenario.logged) {
              d.resize(static_cast<std::size_t>(h));
              for (int k = 0; k < h; ++k) d[static_cast<std::size_t>(k)] = panel.at(i, r.origin + k).discount;
            }
            const auto q = counterfactual_demand(panel, panel.statics[i].article_id, weeks, d);
            for (int k = 0; k < h; ++k) p.q_hat(k, static_cast<Eigen::Index>(i)) = q[static_cast<std::size_t>(k)];
          }
          p.effect = effects;
          return p;
        };
      }
    }
    fail(ErrorKind::config, "unhandled model kind");
  };

  for (ModelKind kind : config.models) {
    const std::string name = to_string(kind);
    auto emit = [&](const std::string& policy, const std::string& metric, double value, Status st) {
      out.rows.push_back({name, wl, policy, seed_index, metric, value, st});
    };
    try {
      const Forecaster forecaster = build(kind);
      dml::ForecastRequest request;
      request.origin = origin;
      request.horizon = h;

      const Prediction on = forecaster(request);
      const Scores on_scores = score(on.q_hat, on_truth, prices);

      Scores off_scores;
      std::vector<double> article_abs(n, 0.0);
      for (std::size_t l = 0; l < config.off_policy_levels.size(); ++l) {
        const double level = config.off_policy_levels[l];
        request.scenario = dml::DiscountScenario::constant(level, h);
        const Prediction off = forecaster(request);
        const Scores s = score(off.q_hat, off_truth[l], prices);
        out.level_rows.push_back({name, wl, seed_index, level, "MAE", s.mae, Status::ok});
        out.level_rows.push_back({name, wl, seed_index, level, "MSE", s.mse, Status::ok});
        out.level_rows.push_back({name, wl, seed_index, level, "demand_error", s.demand_error, Status::ok});
        off_scores.mae += s.mae;
        off_scores.mse += s.mse;
        off_scores.demand_error += s.demand_error;
        for (std::size_t i = 0; i < n; ++i) {
          for (int k = 0; k < h; ++k) {
            article_abs[i] += std::abs(off.q_hat(k, static_cast<Eigen::Index>(i)) - off_truth[l][i][static_cast<std::size_t>(k)]);
          }
        }
      }
      const double levels = static_cast<double>(config.off_policy_levels.size());
      off_scores.mae /= levels;
      off_scores.mse /= levels;
      off_scores.demand_error /= levels;
      for (std::size_t i = 0; i < n; ++i) {
        out.article_errors.push_back({name, seed_index, wl, panel.statics[i].article_id, effects[i],
                                      article_abs[i] / (levels * h)});
      }

      std::optional<EffectErrors> eff;
      if (on.effect) eff = effect_error(*on.effect, effects, dml::HeadKind::linear);
      for (const std::string policy : {"on", "off"}) {
        const Scores& s = policy == "on" ? on_scores : off_scores;
        emit(policy, "MAE", s.mae, Status::ok);
        emit(policy, "MSE", s.mse, Status::ok);
        emit(policy, "demand_error", s.demand_error, Status::ok);
        emit(policy, "effect_MAE", eff ? eff->mae : kNaN, eff ? Status::ok : Status::incomparable);
        emit(policy, "effect_MSE", eff ? eff->mse : kNaN, eff ? Status::ok : Status::incomparable);
      }
    } catch (const Error&) {
      std::erase_if(out.rows, [&](const MetricRow& r) { return r.model == name; });
      std::erase_if(out.level_rows, [&](const LevelRow& r) { return r.model == name; });
      std::erase_if(out.article_errors, [&](const ArticleOffError& r) { return r.model == name; });
      for (const std::string policy : {"on", "off"}) {
        for (const auto& metric : metric_names()) emit(policy, metric, kNaN, Status::failed);
      }
    }
  }
  return out;
}

double sample_sd(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

Aggregate summarize(std::string model, std::string window, std::string policy, std::string metric,
                    const std::vector<double>& values, int failed) {
  Aggregate a{std::move(model), std::move(window), std::move(policy), std::move(metric), kNaN, kNaN, 0, failed};
  a.n = static_cast<int>(values.size());
  if (!values.empty()) {
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    a.sd = sample_sd(values, a.mean);
  }
  return a;
}

}  // namespace

EvalReport run_protocol(const Panel& panel, const ProtocolConfig& config, Exec exec) {
  config.validate(panel);
  const std::vector<double> effects = true_effects(panel);
  std::vector<double> prices;
  for (const auto& a : panel.statics) prices.push_back(a.base_price);

  const std::size_t n_windows = config.train_windows.size();
  const auto n_cells = static_cast<std::ptrdiff_t>(n_windows * static_cast<std::size_t>(config.n_seeds));
  std::vector<CellResult> cells(static_cast<std::size_t>(n_cells));
#pragma omp parallel for schedule(dynamic, 1) if (exec == Exec::parallel)
  for (std::ptrdiff_t c = 0; c < n_cells; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    try {
      cells[ci] = run_cell(panel, config, ci / static_cast<std::size_t>(config.n_seeds),
                           static_cast<int>(ci % static_cast<std::size_t>(config.n_seeds)), effects, prices);
    } catch (const std::exception& e) {
      cells[ci].harness_error = e.what();
    }
  }
  EvalReport report;
  for (auto& cell : cells) {
    if (!cell.harness_error.empty()) fail(ErrorKind::numerical, "protocol cell failed: " + cell.harness_error);
    report.rows.insert(report.rows.end(), cell.rows.begin(), cell.rows.end());
    report.level_rows.insert(report.level_rows.end(), cell.level_rows.begin(), cell.level_rows.end());
    report.article_errors.insert(report.article_errors.end(), cell.article_errors.begin(), cell.article_errors.end());
  }
  return report;
}

std::vector<Aggregate> aggregate(const std::vector<MetricRow>& rows) {
  using Key = std::tuple<std::string, std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::pair<std::vector<double>, int>> groups;
  for (const auto& r : rows) {
    const Key key{r.model, r.window, r.policy, r.metric};
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) order.push_back(key);
    if (r.status == Status::ok) it->second.first.push_back(r.value);
    if (r.status == Status::failed) ++it->second.second;
  }
  std::vector<Aggregate> out;
  for (const auto& key : order) {
    const auto& [values, failed] = groups.at(key);
    out.push_back(summarize(std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), values, failed));
  }
  return out;
}

std::vector<Aggregate> pool_windows(const std::vector<MetricRow>& rows) {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::map<int, std::vector<double>>> per_seed;
  std::map<Key, std::map<int, bool>> seed_failed;
  std::set<std::string> windows;
  for (const auto& r : rows) windows.insert(r.window);
  for (const auto& r : rows) {
    const Key key{r.model, r.policy, r.metric};
    auto [it, inserted] = per_seed.try_emplace(key);
    if (inserted) order.push_back(key);
    if (r.status == Status::ok) {
      it->second[r.seed].push_back(r.value);
    } else {
      seed_failed[key][r.seed] = r.status == Status::failed;
      it->second[r.seed];
    }
  }
  std::vector<Aggregate> out;
  for (const auto& key : order) {
    std::vector<double> values;
    int failed = 0;
    for (const auto& [seed, v] : per_seed.at(key)) {
      if (v.size() == windows.size()) {
        values.push_back(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
      } else if (seed_failed[key][seed]) {
        ++failed;
      }
    }
    out.push_back(summarize(std::get<0>(key), "all", std::get<1>(key), std::get<2>(key), values, failed));
  }
  return out;
}

std::vector<Aggregate> EvalReport::aggregates() const { return aggregate(rows); }
std::vector<Aggregate> EvalReport::pooled() const { return pool_windows(rows); }

std::optional<double> EvalReport::seed_value(const std::string& model, const std::string& policy,
                                             const std::string& metric, int seed) const {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.model != model || r.policy != policy || r.metric != metric || r.seed != seed) continue;
    if (r.status != Status::ok) return std::nullopt;
    sum += r.value;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream s;
  s << "model,window,policy,seed,metric,value,status\n";
  for (const auto& r : rows) {
    s << r.model << ',' << r.window << ',' << r.policy << ',' << r.seed << ',' << r.metric << ','
      << csv::format_real(r.value) << ',' << to_string(r.status) << '\n';
  }
  return s.str();
}

std::vector<MetricRow> read_metrics(const std::filesystem::path& path) {
  const auto table = csv::read(path, {"model", "window", "policy", "seed", "metric", "value", "status"});
  std::vector<MetricRow> rows;
  for (const auto& f : table.rows) {
    MetricRow r;
    r.model = f[0];
    r.window = f[1];
    r.policy = f[2];
    r.seed = static_cast<int>(csv::parse_int(f[3], "seed"));
    r.metric = f[4];
    r.status = status_from_string(f[6]);
    r.value = r.status == Status::ok ? csv::parse_real(f[5], "value") : kNaN;
    rows.push_back(r);
  }
  return rows;
}

std::string report_csv(const std::vector<Aggregate>& aggregates) {
  std::ostringstream s;
  s << "model,window,policy,metric,mean,sd,n,failed\n";
  for (const auto& a : aggregates) {
    s << a.model << ',' << a.window << ',' << a.policy << ',' << a.metric << ',' << csv::format_real(a.mean)
      << ',' << csv::format_real(a.sd) << ',' << a.n << ',' << a.failed << '\n';
  }
  return s.str();
}

std::string effect_improvement_csv(const std::vector<ArticleOffError>& errors, const std::string& model,
                                   const std::string& baseline) {
  using Key = std::tuple<int, std::string, std::int64_t>;
  std::map<Key, double> base;
  for (const auto& e : errors) {
    if (e.model == baseline) base[{e.seed, e.window, e.article_id}] = e.abs_error;
  }
  struct Pair {
    double effect;
    double model_err;
    double base_err;
  };
  std::vector<Pair> pairs;
  for (const auto& e : errors) {
    if (e.model != model) continue;
    const auto it = base.find({e.seed, e.window, e.article_id});
    if (it != base.end()) pairs.push_back({e.true_effect, e.abs_error, it->second});
  }
  std::ostringstream s;
  s << "bin,effect_lo,effect_hi,mean_true_effect," << model << "_off_abs_error," << baseline
    << "_off_abs_error,improvement,n\n";
  if (pairs.empty()) return s.str();
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.effect < b.effect; });
  constexpr int kBins = 5;
  for (int b = 0; b < kBins; ++b) {
    const std::size_t lo = pairs.size() * static_cast<std::size_t>(b) / kBins;
    const std::size_t hi = pairs.size() * static_cast<std::size_t>(b + 1) / kBins;
    if (hi <= lo) continue;
    double eff = 0.0, me = 0.0, be = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      eff += pairs[i].effect;
      me += pairs[i].model_err;
      be += pairs[i].base_err;
    }
    const double n = static_cast<double>(hi - lo);
    s << b << ',' << csv::format_real(pairs[lo].effect) << ',' << csv::format_real(pairs[hi - 1].effect) << ','
      << csv::format_real(eff / n) << ',' << csv::format_real(me / n) << ',' << csv::format_real(be / n) << ','
      << csv::format_real((be - me) / n) << ',' << (hi - lo) << '\n';
  }
  return s.str();
}

void EvalReport::write(const std::filesystem::path& dir) const {
  csv::write_text(dir / "metrics.csv", metrics_csv(rows));
  std::ostringstream lv;
  lv << "model,window,seed,level,metric,value,status\n";
  for (const auto& r : level_rows) {
    lv << r.model << ',' << r.window << ',' << r.seed << ',' << csv::format_real(r.level) << ',' << r.metric
       << ',' << csv::format_real(r.value) << ',' << to_string(r.status) << '\n';
  }
  csv::write_text(dir / "metrics_by_level.csv", lv.str());
  // aggregate the values as written so report.csv is reproducible from metrics.csv
  std::vector<MetricRow> written = rows;
  for (auto& r : written) r.value = csv::parse_real(csv::format_real(r.value), "value");
  csv::write_text(dir / "report.csv", report_csv(aggregate(written)));
  csv::write_text(dir / "summary.csv", report_csv(pool_windows(written)));
  csv::write_text(dir / "plotdata" / "effect_improvement.csv", effect_improvement_csv(article_errors));
}

Panel holdout_replacement(const Panel& panel, std::span<const int> target_weeks, std::uint64_t seed) {
  if (target_weeks.size() != 3 || target_weeks[1] != target_weeks[0] + 1 || target_weeks[2] != target_weeks[1] + 1) {
    fail(ErrorKind::config, "holdout replacement needs 3 consecutive target weeks");
  }
  Panel out = panel;
  const int first_target = target_weeks[0];
  for (std::size_t a = 0; a < out.size(); ++a) {
    const auto& series = panel.series[a];
    for (int w : target_weeks) {
      if (!panel.has_week(a, w)) {
        fail(ErrorKind::replacement, "article " + std::to_string(panel.statics[a].article_id) +
                                         " lacks target week " + std::to_string(w));
      }
    }
    std::vector<int> starts;
    const int lo = series.front().week;
    const int hi = series.back().week;
    for (int s = lo; s + 2 <= hi; ++s) {
      if (s + 2 >= first_target && s <= first_target + 2) continue;  // overlaps the targets
      starts.push_back(s);
    }
    if (starts.empty()) {
      fail(ErrorKind::replacement, "article " + std::to_string(panel.statics[a].article_id) +
                                       " has no run of 3 non-target weeks");
    }
    Stream rng(seed, Purpose::holdout, {static_cast<std::uint64_t>(panel.statics[a].article_id)});
    const int start = starts[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(starts.size()) - 1))];
    for (int k = 0; k < 3; ++k) {
      const auto& src = panel.at(a, start + k);
      auto& dst = out.series[a][static_cast<std::size_t>(first_target + k - lo)];
      dst.demand = src.demand;
      dst.discount = src.discount;
      dst.stock = src.stock;
      dst.price = src.price;
      dst.base_demand = src.base_demand;
    }
  }
  return out;
}

}  // namespace elastic_dml::eval
