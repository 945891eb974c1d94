#pragma once

// Forecast metrics, the rolling-window on/off-policy evaluation protocol and
// the holdout-replacement device.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "elastic_dml/dml.hpp"
#include "elastic_dml/parallel.hpp"
#include "elastic_dml/sim.hpp"

namespace elastic_dml::eval {

/// ErrorKind::length_mismatch on unequal or empty inputs.
double mae(std::span<const double> pred, std::span<const double> truth);
double mse(std::span<const double> pred, std::span<const double> truth);

using Series = std::vector<std::vector<double>>;  // per article, per week

/// sqrt(sum_i sum_T b_i (qhat - q)^2 / sum_i sum_T b_i q^2).
/// ErrorKind::degenerate_truth when the denominator is zero.
double demand_error(const Series& pred, const Series& truth, std::span<const double> prices);

struct EffectErrors {
  double mae = 0.0;
  double mse = 0.0;
};

/// Compares per-article effect outputs with the true discount slope
/// p0 * e_i. ErrorKind::incomparable_units for the elastic head, whose
/// output is an elasticity.
EffectErrors effect_error(std::span<const double> psi, std::span<const double> truth,
                          dml::HeadKind head);

/// True dq/dd per article of a simulated panel: p0 * e_i.
std::vector<double> true_effects(const Panel& panel);

enum class ModelKind { dml, dml_nocf, sdml, sdml_nocf, dml_ss, tf, twfe, naive_last, naive_seasonal, oracle };
std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

struct ProtocolConfig {
  std::vector<dml::Window> train_windows{{20, 65}, {30, 75}, {40, 85}, {50, 95}};
  int horizon = 5;
  std::vector<double> off_policy_levels{0.0, 0.125, 0.25, 0.375, 0.5};
  int n_seeds = 5;
  std::uint64_t base_seed = 0;
  std::vector<ModelKind> models{ModelKind::dml, ModelKind::dml_nocf, ModelKind::sdml, ModelKind::tf};
  dml::DmlConfig model;  // features are refitted to the panel

  /// ErrorKind::config when windows, horizon or levels do not fit the panel.
  void validate(const Panel& panel) const;
  nlohmann::json to_json() const;
  static ProtocolConfig from_json(const nlohmann::json& j);
};

/// The protocol's model settings for a panel.
dml::DmlConfig protocol_model_defaults();

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"MAE", "MSE", "demand_error", "effect_MAE", "effect_MSE"};
  return names;
}

enum class Status { ok, failed, incomparable };
std::string to_string(Status s);
Status status_from_string(const std::string& s);

struct MetricRow {
  std::string model;
  std::string window;  // "start-end"
  std::string policy;  // on | off
  int seed = 0;
  std::string metric;
  double value = 0.0;
  Status status = Status::ok;
};

struct LevelRow {
  std::string model;
  std::string window;
  int seed = 0;
  double level = 0.0;
  std::string metric;
  double value = 0.0;
  Status status = Status::ok;
};

struct Aggregate {
  std::string model;
  std::string window;
  std::string policy;
  std::string metric;
  double mean = 0.0;
  double sd = 0.0;  // sample sd over seeds
  int n = 0;
  int failed = 0;
};

/// Per-article off-policy absolute errors pooled over levels, for plots.
struct ArticleOffError {
  std::string model;
  int seed = 0;
  std::string window;
  std::int64_t article_id = 0;
  double true_effect = 0.0;
  double abs_error = 0.0;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  std::vector<LevelRow> level_rows;
  std::vector<ArticleOffError> article_errors;

  std::vector<Aggregate> aggregates() const;
  /// Per seed, the window-averaged value; then mean and sd over seeds.
  std::vector<Aggregate> pooled() const;
  /// Window-averaged value per (model, policy, metric, seed).
  std::optional<double> seed_value(const std::string& model, const std::string& policy,
                                   const std::string& metric, int seed) const;

  /// metrics.csv, metrics_by_level.csv, report.csv, summary.csv and
  /// plotdata/effect_improvement.csv.
  void write(const std::filesystem::path& dir) const;
};

std::string window_label(dml::Window w);

/// Trains and scores every (window, seed, model) cell. Cells run in
/// parallel; results do not depend on the worker count.
EvalReport run_protocol(const Panel& panel, const ProtocolConfig& config,
                        Exec exec = Exec::parallel);

std::string metrics_csv(const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics(const std::filesystem::path& path);
std::string report_csv(const std::vector<Aggregate>& aggregates);
std::vector<Aggregate> aggregate(const std::vector<MetricRow>& rows);
std::vector<Aggregate> pool_windows(const std::vector<MetricRow>& rows);

/// DML-minus-TF off-policy error by true-effect quintile, pooled over cells.
std::string effect_improvement_csv(const std::vector<ArticleOffError>& errors,
                                   const std::string& model = "dml",
                                   const std::string& baseline = "tf");

/// Overwrites each article's rows at `target_weeks` (3 consecutive weeks)
/// with a uniformly drawn run of 3 consecutive non-target weeks of the same
/// article. Week labels stay in place. ErrorKind::replacement when an article
/// has no such run.
Panel holdout_replacement(const Panel& panel, std::span<const int> target_weeks,
                          std::uint64_t seed);

}  // namespace elastic_dml::eval
