#pragma once

// The DML forecaster: parity-split outcome and treatment nuisance networks,
// a single effect network trained on cross-fitted residual structure, and
// ensemble inference over the cross-fit and forecast paths. Also hosts the
// ablation variants, the S-learner (TF) baseline and a residual-on-residual
// estimator for the partially linear model.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "elastic_dml/features.hpp"
#include "elastic_dml/nnet.hpp"
#include "elastic_dml/sim.hpp"

namespace elastic_dml::dml {

enum class HeadKind { elastic, linear };
enum class Variant { dml, dml_nocf, sdml, sdml_nocf, sample_split };
enum class Mode { cross_fit, forecast, ensemble };

std::string to_string(HeadKind h);
std::string to_string(Variant v);
std::string to_string(Mode m);
HeadKind head_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);
Mode mode_from_string(const std::string& s);

inline constexpr double kTreatmentClamp = 0.95;
inline constexpr double kEnsembleFloor = 1e-9;

/// q_tilde * ((1 - d) / (1 - d_tilde))^psi with d_tilde clamped to <= 0.95.
double effect_head_elastic(double q_tilde, double d, double d_tilde, double psi);
/// max(0, q_tilde + psi * (d - d_tilde)).
double effect_head_linear(double q_tilde, double d, double d_tilde, double psi);
double apply_head(HeadKind head, double q_tilde, double d, double d_tilde, double psi);
/// Geometric mean on operands floored at 1e-9, bounded by the operands.
double ensemble(double a, double b);

struct Residuals {
  std::vector<double> outcome;
  std::vector<double> treatment;
};

/// Elastic head: ln(q+1) - ln(q~+1) and ln(1-d) - ln(1-d~); linear head:
/// raw differences. d~ is clamped below 0.95.
Residuals residualize(HeadKind head, std::span<const double> q, std::span<const double> q_tilde,
                      std::span<const double> d, std::span<const double> d_tilde);

inline int parity(std::int64_t article_id) { return static_cast<int>(((article_id % 2) + 2) % 2); }

/// Partition by article-id parity; throws ErrorKind::split when a half is empty.
std::pair<Panel, Panel> split_even_odd(const Panel& panel);

/// Training weeks [start, end); forecasts start at week `end`.
struct Window {
  int start = 0;
  int end = 0;
};

struct TrainingRow {
  std::size_t article = 0;
  int origin = 0;
  int parity = 0;
};

/// Every (article, origin) whose lags and horizon targets lie inside the window.
std::vector<TrainingRow> training_rows(const Panel& panel, Window window, const FeatureSpec& spec);

struct DmlConfig {
  FeatureSpec features;
  std::vector<int> hidden_dims{64, 64};
  std::vector<int> effect_hidden_dims{64, 64};
  double dropout = 0.1;
  HeadKind head = HeadKind::elastic;
  nnet::TrainConfig outcome_train;
  nnet::TrainConfig treatment_train;
  nnet::TrainConfig effect_train;
  std::uint64_t seed = 0;

  DmlConfig();
  /// Uses `loss` for the effect stage; nuisances keep their own loss.
  DmlConfig& with_effect_loss(nnet::Loss loss);
  nlohmann::json to_json() const;
  /// Missing keys keep defaults.
  static DmlConfig from_json(const nlohmann::json& j);
};

struct Nuisances {
  std::array<std::optional<nnet::Network>, 2> outcome;
  std::array<std::optional<nnet::Network>, 2> treatment;

  bool has_treatment() const { return treatment[0].has_value() || treatment[1].has_value(); }
  const nnet::Network& outcome_for(int parity) const;
  const nnet::Network& treatment_for(int parity) const;
};

/// Trains outcome (softplus) and, optionally, treatment (identity)
/// networks per parity, each only on its own half. With `even_only` the odd
/// copies are skipped (sample-splitting).
Nuisances fit_nuisances(const Panel& panel, Window window, const DmlConfig& config,
                        bool with_treatment, bool even_only = false);

/// Nuisance-side inputs of the effect stage, aligned by column with the
/// effect dataset rows.
struct EffectData {
  nnet::Dataset data;      // effect features, targets = realized demand (h)
  Eigen::MatrixXd discount;
  Eigen::MatrixXd q_tilde;
  Eigen::MatrixXd d_tilde;
  std::vector<int> source_parity;  // parity of the nuisance copy used per row
  std::vector<TrainingRow> rows;
};

/// Chooses nuisance copies per the variant: opposite parity for cross-fit
/// variants, same parity for no-cf, the even copy on odd rows for
/// sample-splitting. Variants without treatment nets use d~ = 0.
EffectData build_effect_data(const Panel& panel, Window window, const DmlConfig& config,
                             const Nuisances& nuisances, Variant variant);

nnet::Objective effect_objective(const EffectData& data, HeadKind head, nnet::Loss loss);

nnet::Network fit_effect(const EffectData& data, const DmlConfig& config);

struct DmlModel {
  Variant variant = Variant::dml;
  HeadKind head = HeadKind::elastic;
  FeatureSpec features;
  Nuisances nuisances;
  nnet::Network effect;
  std::vector<std::int64_t> article_ids;
  Window window;
  DmlConfig config;
  std::size_t effect_rows = 0;

  bool has_treatment() const { return nuisances.has_treatment(); }
};

DmlModel fit(const Panel& panel, Window window, const DmlConfig& config, Variant variant);
/// Effect stage on pre-trained nuisances (shared across variants).
DmlModel fit_with_nuisances(const Panel& panel, Window window, const DmlConfig& config,
                            Variant variant, Nuisances nuisances);
DmlModel fit_sdml(const Panel& panel, Window window, const DmlConfig& config);
DmlModel fit_no_crossfit_variant(const Panel& panel, Window window, const DmlConfig& config);

struct DiscountScenario {
  bool logged = true;
  std::vector<double> forced;

  static DiscountScenario logged_policy() { return {}; }
  static DiscountScenario constant(double level, int horizon) {
    return {false, std::vector<double>(static_cast<std::size_t>(horizon), level)};
  }
};

struct ForecastRequest {
  int origin = 0;
  int horizon = 5;
  DiscountScenario scenario;
  Mode mode = Mode::ensemble;

  void validate() const;
};

struct Forecast {
  std::vector<std::int64_t> article_ids;
  Eigen::MatrixXd q_hat;        // horizon x articles
  std::vector<double> effect;   // per-article effect output at the origin
};

/// Forecasts every article of `panel`; throws ErrorKind::inference for
/// articles the model was not trained on.
Forecast predict(const DmlModel& model, const Panel& panel, const ForecastRequest& request,
                 Exec exec = Exec::parallel);

// ---- S-learner baseline ------------------------------------------------

/// base + slope * d, clamped at zero.
double tf_linear_head(double base, double slope, double d);
/// base * exp(g(-ln(1-d))) with g piecewise linear, non-decreasing, knots
/// evenly spaced on [0, -ln(1-max_discount)]; slopes must be >= 0.
double tf_elastic_head(double base, std::span<const double> slopes, double d,
                       double max_discount = 0.7);

struct TfModel {
  HeadKind head = HeadKind::linear;
  int pieces = 2;
  FeatureSpec features;
  nnet::Network net;
  double scale = 1.0;
  std::vector<std::int64_t> article_ids;
  Window window;
};

TfModel fit_tf_baseline(const Panel& panel, Window window, const DmlConfig& config, int pieces = 2);
Forecast predict_tf(const TfModel& model, const Panel& panel, const ForecastRequest& request);

// ---- partially linear model ----------------------------------------------

struct PartialLinearConfig {
  std::vector<int> hidden_dims{32, 32};
  nnet::TrainConfig train;
  std::uint64_t seed = 0;
  PartialLinearConfig();
};

struct PartialLinearEstimate {
  double theta = 0.0;
  Residuals residuals;
};

/// Two-fold cross-fitted residual-on-residual estimate of theta in
/// q = theta d + g(z) + u, d = m(z) + v. Covariates are one sample per column.
PartialLinearEstimate estimate_partial_linear(const Eigen::MatrixXd& covariates,
                                              std::span<const double> treatment,
                                              std::span<const double> outcome,
                                              const PartialLinearConfig& config);

/// Average derivative in d of a single network fitted on (z, d).
double slearner_effect(const Eigen::MatrixXd& covariates, std::span<const double> treatment,
                       std::span<const double> outcome, const PartialLinearConfig& config);

// ---- persistence ---------------------------------------------------------

void save_model(const DmlModel& model, const std::filesystem::path& dir);
DmlModel load_model(const std::filesystem::path& dir);
void save_model(const TfModel& model, const std::filesystem::path& dir);
TfModel load_tf_model(const std::filesystem::path& dir);

}  // namespace elastic_dml::dml
