#include "elastic_dml/econ.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "elastic_dml/error.hpp"

namespace elastic_dml::econ {

double elasticity_demand(double q0, double p0, double p1, double epsilon) {
  if (!(q0 > 0.0) || !(p0 > 0.0) || !(p1 > 0.0)) {
    fail(ErrorKind::domain, "elasticity_demand needs q0, p0, p1 > 0");
  }
  return q0 * std::pow(p1 / p0, epsilon);
}

double implied_elasticity(double q0, double q1, double p0, double p1) {
  if (!(q0 > 0.0) || !(q1 > 0.0) || !(p0 > 0.0) || !(p1 > 0.0)) {
    fail(ErrorKind::domain, "implied_elasticity needs strictly positive inputs");
  }
  if (p1 == p0) fail(ErrorKind::undefined_elasticity, "elasticity undefined for p1 == p0");
  return std::log(q1 / q0) / std::log(p1 / p0);
}

std::string to_string(FitStatus s) { return s == FitStatus::converged ? "converged" : "max_iter"; }

void TwfeData::validate() const {
  const std::size_t n = y.size();
  if (unit.size() != n || period.size() != n || x.size() != n) {
    fail(ErrorKind::length_mismatch, "TWFE data columns differ in length");
  }
  if (n_units < 2 || n_periods < 2) fail(ErrorKind::rank_deficient, "TWFE needs >= 2 units and >= 2 periods");
  for (std::size_t i = 0; i < n; ++i) {
    if (unit[i] < 0 || unit[i] >= n_units || period[i] < 0 || period[i] >= n_periods) {
      fail(ErrorKind::dimension, "TWFE index out of range at row " + std::to_string(i));
    }
    if (!(y[i] >= 0.0) || !std::isfinite(y[i]) || !std::isfinite(x[i])) {
      fail(ErrorKind::domain, "TWFE needs finite y >= 0 and finite x (row " + std::to_string(i) + ")");
    }
  }
}

double ElasticityFit::mean(int unit, int period, double x) const {
  return std::exp(epsilon * x + unit_effects.at(static_cast<std::size_t>(unit)) +
                  period_effects.at(static_cast<std::size_t>(period)));
}

namespace {

// Observation indices grouped by unit and by period (CSR layout).
struct Groups {
  std::vector<std::size_t> start;
  std::vector<std::size_t> index;

  Groups(const std::vector<int>& key, int n_keys) : start(static_cast<std::size_t>(n_keys) + 1, 0) {
    for (int k : key) ++start[static_cast<std::size_t>(k) + 1];
    std::partial_sum(start.begin(), start.end(), start.begin());
    index.resize(key.size());
    std::vector<std::size_t> fill(start.begin(), start.end() - 1);
    for (std::size_t i = 0; i < key.size(); ++i) index[fill[static_cast<std::size_t>(key[i])]++] = i;
  }
  std::size_t size() const { return start.size() - 1; }
};

// Weighted two-way projection of v: alpha[unit] + gamma[period] is the
// weighted least-squares fit of v on both effect sets. Warm-started from the
// incoming alpha/gamma. Each group sum runs in a fixed order, so serial and
// parallel runs agree bit for bit.
int project(const std::vector<double>& v, const std::vector<double>& w, const TwfeData& data,
            const Groups& by_unit, const Groups& by_period, std::vector<double>& alpha,
            std::vector<double>& gamma, const TwfeOptions& options, Exec exec) {
  const bool par = exec == Exec::parallel && !in_parallel_region();
  const auto n_units = static_cast<std::ptrdiff_t>(by_unit.size());
  const auto n_periods = static_cast<std::ptrdiff_t>(by_period.size());
  double scale = 0.0;
  for (double value : v) scale = std::max(scale, std::abs(value));
  const double tol = options.demean_tol * std::max(1.0, scale);
  for (int it = 1; it <= options.demean_max_iter; ++it) {
    double change = 0.0;
#pragma omp parallel for schedule(static) reduction(max : change) if (par)
    for (std::ptrdiff_t g = 0; g < n_units; ++g) {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t k = by_unit.start[static_cast<std::size_t>(g)]; k < by_unit.start[static_cast<std::size_t>(g) + 1]; ++k) {
        const std::size_t i = by_unit.index[k];
        num += w[i] * (v[i] - gamma[static_cast<std::size_t>(data.period[i])]);
        den += w[i];
      }
      const double next = den > 0.0 ? num / den : 0.0;
      change = std::max(change, std::abs(next - alpha[static_cast<std::size_t>(g)]));
      alpha[static_cast<std::size_t>(g)] = next;
    }
#pragma omp parallel for schedule(static) reduction(max : change) if (par)
    for (std::ptrdiff_t g = 0; g < n_periods; ++g) {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t k = by_period.start[static_cast<std::size_t>(g)]; k < by_period.start[static_cast<std::size_t>(g) + 1]; ++k) {
        const std::size_t i = by_period.index[k];
        num += w[i] * (v[i] - alpha[static_cast<std::size_t>(data.unit[i])]);
        den += w[i];
      }
      const double next = den > 0.0 ? num / den : 0.0;
      change = std::max(change, std::abs(next - gamma[static_cast<std::size_t>(g)]));
      gamma[static_cast<std::size_t>(g)] = next;
    }
    if (change < tol) return it;
  }
  return options.demean_max_iter;
}

}  // namespace

ElasticityFit twfe_poisson_fit(const TwfeData& data, const TwfeOptions& options, Exec exec) {
  data.validate();
  const std::size_t n = data.y.size();
  const Groups by_unit(data.unit, data.n_units);
  const Groups by_period(data.period, data.n_periods);

  const double y_total = std::accumulate(data.y.begin(), data.y.end(), 0.0);
  if (!(y_total > 0.0)) fail(ErrorKind::rank_deficient, "TWFE outcome is zero everywhere");
  const double y_mean = y_total / static_cast<double>(n);

  std::vector<double> mu(n);
  std::vector<double> eta(n);
  for (std::size_t i = 0; i < n; ++i) {
    mu[i] = 0.5 * (data.y[i] + y_mean);
    eta[i] = std::log(mu[i]);
  }

  ElasticityFit fit;
  fit.observations = n;
  fit.unit_effects.assign(static_cast<std::size_t>(data.n_units), 0.0);
  fit.period_effects.assign(static_cast<std::size_t>(data.n_periods), 0.0);
  std::vector<double> az(static_cast<std::size_t>(data.n_units), 0.0), gz(static_cast<std::size_t>(data.n_periods), 0.0);
  std::vector<double> ax(az), gx(gz);
  std::vector<double> w(n), z(n);

  for (int iter = 1; iter <= options.max_iter; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = std::max(mu[i], options.weight_floor);
      z[i] = eta[i] + (data.y[i] - mu[i]) / w[i];
    }
    project(z, w, data, by_unit, by_period, az, gz, options, exec);
    project(data.x, w, data, by_unit, by_period, ax, gx, options, exec);

    double sxx = 0.0;
    double sxz = 0.0;
    double wsum = 0.0;
    double wx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(data.unit[i]);
      const auto t = static_cast<std::size_t>(data.period[i]);
      const double xr = data.x[i] - ax[u] - gx[t];
      const double zr = z[i] - az[u] - gz[t];
      sxx += w[i] * xr * xr;
      sxz += w[i] * xr * zr;
      wsum += w[i];
      wx += w[i] * data.x[i];
    }
    double total_var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = data.x[i] - wx / wsum;
      total_var += w[i] * c * c;
    }
    if (!(total_var > 0.0) || sxx <= 1e-12 * total_var) {
      fail(ErrorKind::rank_deficient, "no treatment variation after removing article and week effects");
    }
    const double eps = sxz / sxx;

    // The projection is linear, so the effects of z - eps x follow directly.
    const double shift = gz[0] - eps * gx[0];
    double change = std::abs(eps - fit.epsilon);
    for (std::size_t u = 0; u < az.size(); ++u) {
      const double next = az[u] - eps * ax[u] + shift;
      change = std::max(change, std::abs(next - fit.unit_effects[u]));
      fit.unit_effects[u] = next;
    }
    for (std::size_t t = 0; t < gz.size(); ++t) {
      const double next = gz[t] - eps * gx[t] - shift;
      change = std::max(change, std::abs(next - fit.period_effects[t]));
      fit.period_effects[t] = next;
    }
    fit.epsilon = eps;
    fit.iterations = iter;
    for (std::size_t i = 0; i < n; ++i) {
      eta[i] = eps * data.x[i] + fit.unit_effects[static_cast<std::size_t>(data.unit[i])] +
               fit.period_effects[static_cast<std::size_t>(data.period[i])];
      mu[i] = std::exp(eta[i]);
    }
    if (!std::isfinite(eps)) fail(ErrorKind::numerical, "TWFE elasticity diverged");
    if (change < options.tol) {
      fit.status = FitStatus::converged;
      break;
    }
  }

  std::vector<double> score_u(static_cast<std::size_t>(data.n_units), 0.0);
  std::vector<double> score_t(static_cast<std::size_t>(data.n_periods), 0.0);
  double score_eps = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = data.y[i] - mu[i];
    score_eps += r * data.x[i];
    score_u[static_cast<std::size_t>(data.unit[i])] += r;
    score_t[static_cast<std::size_t>(data.period[i])] += r;
  }
  double norm2 = score_eps * score_eps;
  for (double s : score_u) norm2 += s * s;
  for (std::size_t t = 1; t < score_t.size(); ++t) norm2 += score_t[t] * score_t[t];
  fit.gradient_norm = std::sqrt(norm2) / y_total;
  return fit;
}

TwfeData twfe_data(const Panel& panel, int week_begin, int week_end,
                   std::span<const std::size_t> articles) {
  if (week_end - week_begin < 2) fail(ErrorKind::window, "TWFE needs at least two weeks");
  std::vector<std::size_t> all;
  if (articles.empty()) {
    all.resize(panel.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    articles = all;
  }
  TwfeData data;
  data.n_periods = week_end - week_begin;
  for (std::size_t a : articles) {
    double total = 0.0;
    for (int t = week_begin; t < week_end; ++t) {
      if (panel.has_week(a, t)) total += panel.at(a, t).demand;
    }
    if (!(total > 0.0)) continue;  // all-zero units carry no information
    for (int t = week_begin; t < week_end; ++t) {
      if (!panel.has_week(a, t)) continue;
      const auto& p = panel.at(a, t);
      data.unit.push_back(data.n_units);
      data.period.push_back(t - week_begin);
      data.y.push_back(p.demand);
      data.x.push_back(std::log1p(-p.discount));
    }
    ++data.n_units;
  }
  return data;
}

namespace {

PanelElasticityFit fit_articles(const Panel& panel, int week_begin, int week_end,
                                std::span<const std::size_t> articles,
                                const TwfeOptions& options, Exec exec) {
  PanelElasticityFit out;
  out.first_week = week_begin;
  const TwfeData data = twfe_data(panel, week_begin, week_end, articles);
  for (std::size_t a : articles) {
    double total = 0.0;
    for (int t = week_begin; t < week_end; ++t) {
      if (panel.has_week(a, t)) total += panel.at(a, t).demand;
    }
    if (total > 0.0) out.article_ids.push_back(panel.statics[a].article_id);
  }
  out.fit = twfe_poisson_fit(data, options, exec);
  return out;
}

}  // namespace

PanelElasticityFit twfe_poisson_fit(const Panel& panel, int week_begin, int week_end,
                                    const TwfeOptions& options, Exec exec) {
  std::vector<std::size_t> all(panel.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return fit_articles(panel, week_begin, week_end, all, options, exec);
}

std::map<int, PanelElasticityFit> twfe_fit_by_category(const Panel& panel, int week_begin,
                                                       int week_end, const TwfeOptions& options,
                                                       Exec exec) {
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t a = 0; a < panel.size(); ++a) members[panel.statics[a].cat_k].push_back(a);
  std::vector<int> keys;
  for (const auto& [k, _] : members) keys.push_back(k);
  std::vector<PanelElasticityFit> fits(keys.size());
  std::vector<std::string> errors(keys.size());
  const auto n = static_cast<std::ptrdiff_t>(keys.size());
#pragma omp parallel for schedule(dynamic, 1) if (exec == Exec::parallel && !in_parallel_region())
  for (std::ptrdiff_t g = 0; g < n; ++g) {
    const auto gi = static_cast<std::size_t>(g);
    try {
      fits[gi] = fit_articles(panel, week_begin, week_end, members[keys[gi]], options, Exec::serial);
    } catch (const Error& e) {
      errors[gi] = e.what();
    }
  }
  std::map<int, PanelElasticityFit> out;
  for (std::size_t g = 0; g < keys.size(); ++g) {
    if (!errors[g].empty()) fail(ErrorKind::rank_deficient, "cat_k " + std::to_string(keys[g]) + ": " + errors[g]);
    out.emplace(keys[g], std::move(fits[g]));
  }
  return out;
}

nlohmann::json PanelElasticityFit::to_json() const {
  nlohmann::json weeks = nlohmann::json::object();
  for (std::size_t t = 0; t < fit.period_effects.size(); ++t) {
    weeks[std::to_string(first_week + static_cast<int>(t))] = fit.period_effects[t];
  }
  nlohmann::json articles = nlohmann::json::object();
  for (std::size_t i = 0; i < article_ids.size() && i < fit.unit_effects.size(); ++i) {
    articles[std::to_string(article_ids[i])] = fit.unit_effects[i];
  }
  return {{"epsilon", fit.epsilon},
          {"normalization", "week " + std::to_string(first_week) + " effect fixed at 0"},
          {"convergence",
           {{"status", to_string(fit.status)},
            {"iterations", fit.iterations},
            {"gradient_norm", fit.gradient_norm}}},
          {"observations", fit.observations},
          {"article_effects", articles},
          {"week_effects", weeks}};
}

double twfe_forecast(const Panel& panel, double epsilon, std::int64_t article_id, int week,
                     double discount) {
  const std::size_t a = panel.index_of(article_id);
  if (!panel.has_week(a, week - 1)) {
    fail(ErrorKind::history, "article " + std::to_string(article_id) + " has no week " + std::to_string(week - 1));
  }
  const auto& prev = panel.at(a, week - 1);
  if (prev.demand == 0.0) return 0.0;
  return prev.demand * std::pow((1.0 - discount) / (1.0 - prev.discount), epsilon);
}

std::vector<double> twfe_forecast_path(const Panel& panel, double epsilon, std::int64_t article_id,
                                       int origin, std::span<const double> discounts) {
  const std::size_t a = panel.index_of(article_id);
  if (!panel.has_week(a, origin - 1)) {
    fail(ErrorKind::history, "article " + std::to_string(article_id) + " has no week " + std::to_string(origin - 1));
  }
  double q = panel.at(a, origin - 1).demand;
  double d_prev = panel.at(a, origin - 1).discount;
  std::vector<double> out;
  out.reserve(discounts.size());
  for (double d : discounts) {
    q = q == 0.0 ? 0.0 : q * std::pow((1.0 - d) / (1.0 - d_prev), epsilon);
    d_prev = d;
    out.push_back(q);
  }
  return out;
}

std::string to_string(NaiveKind k) { return k == NaiveKind::last_value ? "last_value" : "seasonal_naive"; }

NaiveKind naive_kind_from_string(const std::string& s) {
  if (s == "last_value" || s == "last") return NaiveKind::last_value;
  if (s == "seasonal_naive" || s == "seasonal") return NaiveKind::seasonal_naive;
  fail(ErrorKind::config, "unknown naive forecast kind '" + s + "'");
}

std::vector<double> naive_forecasts(const Panel& panel, std::int64_t article_id, int origin,
                                    int horizon, NaiveKind kind) {
  if (horizon < 1) fail(ErrorKind::config, "horizon must be >= 1");
  const std::size_t a = panel.index_of(article_id);
  std::vector<double> out(static_cast<std::size_t>(horizon));
  if (kind == NaiveKind::last_value) {
    if (!panel.has_week(a, origin - 1)) {
      fail(ErrorKind::history, "last_value needs week " + std::to_string(origin - 1));
    }
    std::fill(out.begin(), out.end(), panel.at(a, origin - 1).demand);
    return out;
  }
  const int period = panel.season_period;
  for (int w = origin - period; w < origin; ++w) {
    if (!panel.has_week(a, w)) {
      fail(ErrorKind::history, "seasonal_naive needs " + std::to_string(period) + " weeks of history before week " +
                                   std::to_string(origin));
    }
  }
  for (int k = 0; k < horizon; ++k) {
    out[static_cast<std::size_t>(k)] = panel.at(a, origin - period + k % period).demand;
  }
  return out;
}

}  // namespace elastic_dml::econ
