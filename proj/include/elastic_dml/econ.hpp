#pragma once

// Constant-elasticity algebra and the econometric baselines: a two-way
// fixed-effects Poisson fit of log E[q] = eps * log(1 - d) + u_i + c_t, the
// carry-forward forecast built on it, and naive forecasts.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "elastic_dml/parallel.hpp"
#include "elastic_dml/sim.hpp"

namespace elastic_dml::econ {

/// q0 * (p1 / p0)^eps; ErrorKind::domain on non-positive q0, p0 or p1.
double elasticity_demand(double q0, double p0, double p1, double epsilon);
/// ln(q1 / q0) / ln(p1 / p0); ErrorKind::undefined_elasticity when p1 == p0.
double implied_elasticity(double q0, double q1, double p0, double p1);

enum class FitStatus { converged, max_iter };
std::string to_string(FitStatus s);

struct TwfeOptions {
  double tol = 1e-8;  // max absolute parameter change between IRLS steps
  int max_iter = 100;
  double demean_tol = 1e-12;
  int demean_max_iter = 5000;
  double weight_floor = 1e-10;
};

/// Observations in long form. Articles and weeks are dense 0-based indices.
struct TwfeData {
  std::vector<int> unit;
  std::vector<int> period;
  std::vector<double> y;  // counts or demand, >= 0
  std::vector<double> x;  // regressor, log(1 - d) for discount panels
  int n_units = 0;
  int n_periods = 0;

  void validate() const;
};

struct ElasticityFit {
  double epsilon = 0.0;
  std::vector<double> unit_effects;    // u_i
  std::vector<double> period_effects;  // c_t with c_0 = 0
  FitStatus status = FitStatus::max_iter;
  int iterations = 0;
  /// Euclidean norm of the Poisson score divided by sum(y).
  double gradient_norm = 0.0;
  std::size_t observations = 0;

  /// Fitted mean for one observation.
  double mean(int unit, int period, double x) const;
};

/// IRLS with alternating weighted demeaning. ErrorKind::rank_deficient when
/// the regressor has no variation left after removing both effect sets.
ElasticityFit twfe_poisson_fit(const TwfeData& data, const TwfeOptions& options = {},
                               Exec exec = Exec::parallel);

/// Panel fit on weeks [week_begin, week_end); article and week labels are
/// kept alongside the dense effects.
struct PanelElasticityFit {
  ElasticityFit fit;
  std::vector<std::int64_t> article_ids;
  int first_week = 0;

  nlohmann::json to_json() const;
};

TwfeData twfe_data(const Panel& panel, int week_begin, int week_end,
                   std::span<const std::size_t> articles = {});
PanelElasticityFit twfe_poisson_fit(const Panel& panel, int week_begin, int week_end,
                                    const TwfeOptions& options = {}, Exec exec = Exec::parallel);
/// One fit per cat_k, groups in parallel; each group fit runs serially.
std::map<int, PanelElasticityFit> twfe_fit_by_category(const Panel& panel, int week_begin,
                                                       int week_end,
                                                       const TwfeOptions& options = {},
                                                       Exec exec = Exec::parallel);

/// q_{t-1} * ((1 - d_t) / (1 - d_{t-1}))^eps, or 0 when q_{t-1} = 0.
/// ErrorKind::history when week t-1 is missing.
double twfe_forecast(const Panel& panel, double epsilon, std::int64_t article_id, int week,
                     double discount);
/// Chains the one-step rule over weeks origin .. origin+h-1, feeding the
/// forecast back as the previous demand.
std::vector<double> twfe_forecast_path(const Panel& panel, double epsilon, std::int64_t article_id,
                                       int origin, std::span<const double> discounts);

enum class NaiveKind { last_value, seasonal_naive };
std::string to_string(NaiveKind k);
NaiveKind naive_kind_from_string(const std::string& s);

/// Forecasts weeks origin .. origin+h-1 from weeks before `origin`.
/// ErrorKind::history without one week (last_value) or a full season
/// (seasonal_naive) of history.
std::vector<double> naive_forecasts(const Panel& panel, std::int64_t article_id, int origin,
                                    int horizon, NaiveKind kind);

}  // namespace elastic_dml::econ
