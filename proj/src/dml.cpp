#include "elastic_dml/dml.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "elastic_dml/csv.hpp"
#include "elastic_dml/error.hpp"
#include "elastic_dml/rng.hpp"

namespace elastic_dml::dml {

namespace {

constexpr int kModelFormatVersion = 1;

enum class Role : std::uint64_t { outcome = 1, treatment = 2, effect = 3, tf = 4, pl_outcome = 5, pl_treatment = 6, slearner = 7 };

std::uint64_t submodel_seed(std::uint64_t seed, Role role, int parity) {
  return derive_key(seed, {static_cast<std::uint64_t>(role), static_cast<std::uint64_t>(parity)});
}

nnet::TrainConfig seeded(nnet::TrainConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

nlohmann::json train_to_json(const nnet::TrainConfig& c) {
  return {{"loss", nnet::to_string(c.loss)},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"weight_decay", c.weight_decay},
          {"schedule", nnet::to_string(c.schedule)},
          {"decay", c.decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2}};
}

nnet::TrainConfig train_from_json(const nlohmann::json& j, nnet::TrainConfig c) {
  if (j.contains("loss")) c.loss = nnet::loss_from_string(j["loss"].get<std::string>());
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
  if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("schedule")) c.schedule = nnet::schedule_from_string(j["schedule"].get<std::string>());
  if (j.contains("decay")) c.decay = j["decay"].get<double>();
  if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
  if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
  c.validate();
  return c;
}

double mean_of(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.mean(); }

/// Runs independent jobs, in parallel unless already inside a parallel region.
template <class F>
void run_jobs(int count, F&& job) {
#pragma omp parallel for schedule(dynamic, 1) if (!in_parallel_region())
  for (int i = 0; i < count; ++i) job(i);
}

std::vector<double> scenario_discounts(const Panel& panel, std::size_t index,
                                       const ForecastRequest& request) {
  if (!request.scenario.logged) return request.scenario.forced;
  std::vector<double> d(static_cast<std::size_t>(request.horizon));
  for (int k = 0; k < request.horizon; ++k) {
    d[static_cast<std::size_t>(k)] = panel.at(index, request.origin + k).discount;
  }
  return d;
}

void check_known(const std::vector<std::int64_t>& sorted_ids, const Panel& panel) {
  for (const auto& a : panel.statics) {
    if (!std::binary_search(sorted_ids.begin(), sorted_ids.end(), a.article_id)) {
      fail(ErrorKind::inference, "article " + std::to_string(a.article_id) + " was not seen in training");
    }
  }
}

std::vector<std::int64_t> sorted_ids(const Panel& panel) {
  std::vector<std::int64_t> ids;
  ids.reserve(panel.size());
  for (const auto& a : panel.statics) ids.push_back(a.article_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

std::string to_string(HeadKind h) { return h == HeadKind::elastic ? "elastic" : "linear"; }

std::string to_string(Variant v) {
  switch (v) {
    case Variant::dml: return "dml";
    case Variant::dml_nocf: return "dml-nocf";
    case Variant::sdml: return "sdml";
    case Variant::sdml_nocf: return "sdml-nocf";
    case Variant::sample_split: return "dml-ss";
  }
  return "dml";
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::cross_fit: return "cross_fit";
    case Mode::forecast: return "forecast";
    case Mode::ensemble: return "ensemble";
  }
  return "ensemble";
}

HeadKind head_from_string(const std::string& s) {
  if (s == "elastic") return HeadKind::elastic;
  if (s == "linear") return HeadKind::linear;
  fail(ErrorKind::config, "unknown head '" + s + "' (expected elastic|linear)");
}

Variant variant_from_string(const std::string& s) {
  if (s == "dml") return Variant::dml;
  if (s == "dml-nocf") return Variant::dml_nocf;
  if (s == "sdml") return Variant::sdml;
  if (s == "sdml-nocf") return Variant::sdml_nocf;
  if (s == "dml-ss") return Variant::sample_split;
  fail(ErrorKind::config, "unknown DML variant '" + s + "'");
}

Mode mode_from_string(const std::string& s) {
  if (s == "cross_fit") return Mode::cross_fit;
  if (s == "forecast") return Mode::forecast;
  if (s == "ensemble") return Mode::ensemble;
  fail(ErrorKind::config, "unknown inference mode '" + s + "'");
}

double effect_head_elastic(double q_tilde, double d, double d_tilde, double psi) {
  if (d == d_tilde) return q_tilde;
  const double clamped = std::min(d_tilde, kTreatmentClamp);
  return q_tilde * std::pow((1.0 - d) / (1.0 - clamped), psi);
}

double effect_head_linear(double q_tilde, double d, double d_tilde, double psi) {
  const double q = q_tilde + psi * (d - d_tilde);
  return q > 0.0 ? q : 0.0;
}

double apply_head(HeadKind head, double q_tilde, double d, double d_tilde, double psi) {
  return head == HeadKind::elastic ? effect_head_elastic(q_tilde, d, d_tilde, psi)
                                   : effect_head_linear(q_tilde, d, d_tilde, psi);
}

double ensemble(double a, double b) {
  if (a == b) return a;
  const double lo = std::min(a, b);
  const double hi = std::max(a, b);
  const double g = std::exp(0.5 * (std::log(std::max(a, kEnsembleFloor)) +
                                   std::log(std::max(b, kEnsembleFloor))));
  return std::clamp(g, lo, hi);
}

Residuals residualize(HeadKind head, std::span<const double> q, std::span<const double> q_tilde,
                      std::span<const double> d, std::span<const double> d_tilde) {
  const std::size_t n = q.size();
  if (q_tilde.size() != n || d.size() != n || d_tilde.size() != n) {
    fail(ErrorKind::length_mismatch, "residualize: inputs differ in length");
  }
  Residuals r;
  r.outcome.resize(n);
  r.treatment.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = std::min(d_tilde[i], kTreatmentClamp);
    if (head == HeadKind::elastic) {
      r.outcome[i] = std::log1p(q[i]) - std::log1p(std::max(q_tilde[i], 0.0));
      r.treatment[i] = std::log1p(-d[i]) - std::log1p(-dt);
    } else {
      r.outcome[i] = q[i] - q_tilde[i];
      r.treatment[i] = d[i] - dt;
    }
    if (!std::isfinite(r.outcome[i]) || !std::isfinite(r.treatment[i])) {
      fail(ErrorKind::numerical, "residualize: non-finite residual at row " + std::to_string(i));
    }
  }
  return r;
}

std::pair<Panel, Panel> split_even_odd(const Panel& panel) {
  if (panel.size() < 2) fail(ErrorKind::split, "need at least two articles to split");
  std::pair<Panel, Panel> halves;
  for (Panel* half : {&halves.first, &halves.second}) {
    half->provenance = panel.provenance;
    half->seed = panel.seed;
    half->n_cat_d = panel.n_cat_d;
    half->n_cat_k = panel.n_cat_k;
    half->season_period = panel.season_period;
    half->n_weeks = panel.n_weeks;
  }
  for (std::size_t i = 0; i < panel.size(); ++i) {
    Panel& half = parity(panel.statics[i].article_id) == 0 ? halves.first : halves.second;
    half.statics.push_back(panel.statics[i]);
    half.series.push_back(panel.series[i]);
  }
  if (halves.first.size() == 0 || halves.second.size() == 0) {
    fail(ErrorKind::split, "parity split leaves one half empty");
  }
  return halves;
}

std::vector<TrainingRow> training_rows(const Panel& panel, Window window, const FeatureSpec& spec) {
  if (window.end - window.start < spec.window + spec.horizon) {
    fail(ErrorKind::window, "training window [" + std::to_string(window.start) + ", " +
                                std::to_string(window.end) + ") is shorter than lags + horizon");
  }
  std::vector<TrainingRow> rows;
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const auto& s = panel.series[i];
    const int lo = std::max(window.start, s.front().week) + spec.window;
    const int hi = std::min(window.end, s.back().week + 1) - spec.horizon;
    for (int t = lo; t <= hi; ++t) rows.push_back({i, t, parity(panel.statics[i].article_id)});
  }
  return rows;
}

DmlConfig::DmlConfig() {
  outcome_train.loss = nnet::Loss::l2;
  outcome_train.learning_rate = 2e-3;
  outcome_train.epochs = 30;
  outcome_train.batch_size = 128;
  outcome_train.schedule = nnet::Schedule::exponential;
  outcome_train.decay = 0.9995;
  treatment_train = outcome_train;
  effect_train.loss = nnet::Loss::l1;
  effect_train.learning_rate = 2e-3;
  effect_train.epochs = 30;
  effect_train.batch_size = 256;
  effect_train.weight_decay = 1e-4;
  effect_train.schedule = nnet::Schedule::exponential;
  effect_train.decay = 0.999;
}

DmlConfig& DmlConfig::with_effect_loss(nnet::Loss loss) {
  effect_train.loss = loss;
  return *this;
}

nlohmann::json DmlConfig::to_json() const {
  return {{"features", features.to_json()},
          {"hidden_dims", hidden_dims},
          {"effect_hidden_dims", effect_hidden_dims},
          {"dropout", dropout},
          {"head", to_string(head)},
          {"outcome_train", train_to_json(outcome_train)},
          {"treatment_train", train_to_json(treatment_train)},
          {"effect_train", train_to_json(effect_train)},
          {"seed", seed}};
}

DmlConfig DmlConfig::from_json(const nlohmann::json& j) {
  DmlConfig c;
  try {
    if (j.contains("features")) c.features = FeatureSpec::from_json(j["features"]);
    if (j.contains("hidden_dims")) c.hidden_dims = j["hidden_dims"].get<std::vector<int>>();
    if (j.contains("effect_hidden_dims")) c.effect_hidden_dims = j["effect_hidden_dims"].get<std::vector<int>>();
    if (j.contains("dropout")) c.dropout = j["dropout"].get<double>();
    if (j.contains("head")) c.head = head_from_string(j["head"].get<std::string>());
    if (j.contains("outcome_train")) c.outcome_train = train_from_json(j["outcome_train"], c.outcome_train);
    if (j.contains("treatment_train")) c.treatment_train = train_from_json(j["treatment_train"], c.treatment_train);
    if (j.contains("effect_train")) c.effect_train = train_from_json(j["effect_train"], c.effect_train);
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("model config: ") + e.what());
  }
  return c;
}

const nnet::Network& Nuisances::outcome_for(int p) const {
  if (!outcome[static_cast<std::size_t>(p)]) fail(ErrorKind::inference, "missing outcome network for parity " + std::to_string(p));
  return *outcome[static_cast<std::size_t>(p)];
}

const nnet::Network& Nuisances::treatment_for(int p) const {
  if (!treatment[static_cast<std::size_t>(p)]) fail(ErrorKind::inference, "missing treatment network for parity " + std::to_string(p));
  return *treatment[static_cast<std::size_t>(p)];
}

Nuisances fit_nuisances(const Panel& panel, Window window, const DmlConfig& config,
                        bool with_treatment, bool even_only) {
  FeatureSpec spec = config.features;
  spec.include_future_discount = false;
  const auto rows = training_rows(panel, window, spec);
  const int h = spec.horizon;
  std::array<nnet::Dataset, 2> outcome_data{nnet::Dataset(spec.outcome_dim(), h), nnet::Dataset(spec.outcome_dim(), h)};
  std::array<nnet::Dataset, 2> treatment_data{nnet::Dataset(spec.outcome_dim(), h), nnet::Dataset(spec.outcome_dim(), h)};
  std::vector<double> q(static_cast<std::size_t>(h));
  std::vector<double> d(static_cast<std::size_t>(h));
  for (const auto& row : rows) {
    if (even_only && row.parity != 0) continue;
    const auto x = build_features(panel, row.article, row.origin, spec);
    for (int k = 0; k < h; ++k) {
      const auto& p = panel.at(row.article, row.origin + k);
      q[static_cast<std::size_t>(k)] = p.demand;
      d[static_cast<std::size_t>(k)] = p.discount;
    }
    outcome_data[static_cast<std::size_t>(row.parity)].add(x, q, 1.0, row.parity);
    treatment_data[static_cast<std::size_t>(row.parity)].add(x, d, 1.0, row.parity);
  }
  for (int p = 0; p < 2; ++p) {
    outcome_data[static_cast<std::size_t>(p)].finalize();
    treatment_data[static_cast<std::size_t>(p)].finalize();
  }

  struct Job {
    bool outcome;
    int parity;
  };
  std::vector<Job> jobs;
  for (int p = 0; p < (even_only ? 1 : 2); ++p) {
    if (outcome_data[static_cast<std::size_t>(p)].size() == 0) {
      fail(ErrorKind::split, "no training rows for parity " + std::to_string(p));
    }
    jobs.push_back({true, p});
    if (with_treatment) jobs.push_back({false, p});
  }

  Nuisances out;
  run_jobs(static_cast<int>(jobs.size()), [&](int i) {
    const Job job = jobs[static_cast<std::size_t>(i)];
    const auto pi = static_cast<std::size_t>(job.parity);
    const nnet::Dataset& data = job.outcome ? outcome_data[pi] : treatment_data[pi];
    for (int tag : data.tags) {
      if (tag != job.parity) fail(ErrorKind::split, "parity hygiene violated in nuisance training data");
    }
    nnet::NetworkSpec ns;
    ns.input_dim = spec.outcome_dim();
    ns.hidden_dims = config.hidden_dims;
    ns.output_dim = h;
    ns.dropout_rate = config.dropout;
    if (job.outcome) {
      ns.output_activation = nnet::Activation::softplus;
      ns.output_scale = std::max(1.0, mean_of(data.targets));
      ns.seed = submodel_seed(config.seed, Role::outcome, job.parity);
      auto trained = nnet::train(nnet::Network(ns), data, seeded(config.outcome_train, ns.seed));
      out.outcome[pi] = std::move(trained.network);
    } else {
      ns.output_activation = nnet::Activation::identity;
      ns.output_scale = 1.0;
      ns.seed = submodel_seed(config.seed, Role::treatment, job.parity);
      auto trained = nnet::train(nnet::Network(ns), data, seeded(config.treatment_train, ns.seed));
      out.treatment[pi] = std::move(trained.network);
    }
  });
  return out;
}

EffectData build_effect_data(const Panel& panel, Window window, const DmlConfig& config,
                             const Nuisances& nuisances, Variant variant) {
  FeatureSpec spec = config.features;
  spec.include_future_discount = false;
  std::vector<TrainingRow> rows = training_rows(panel, window, spec);
  if (variant == Variant::sample_split) {
    std::erase_if(rows, [](const TrainingRow& r) { return r.parity == 0; });
  }
  const int h = spec.horizon;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const bool use_treatment = variant == Variant::dml || variant == Variant::dml_nocf ||
                             variant == Variant::sample_split;
  if (use_treatment && !nuisances.has_treatment()) {
    fail(ErrorKind::config, "variant " + to_string(variant) + " needs treatment networks");
  }

  EffectData out;
  out.rows = rows;
  out.data = nnet::Dataset(spec.effect_dim(), h, rows.size());
  out.discount.resize(h, n);
  out.q_tilde.resize(h, n);
  out.d_tilde = Eigen::MatrixXd::Zero(h, n);
  out.source_parity.resize(rows.size());

  Eigen::MatrixXd x_outcome(spec.outcome_dim(), n);
  std::vector<double> q(static_cast<std::size_t>(h));
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& row = rows[static_cast<std::size_t>(j)];
    const auto x = build_features(panel, row.article, row.origin, spec);
    x_outcome.col(j) = Eigen::Map<const Eigen::VectorXd>(x.data(), spec.outcome_dim());
    for (int k = 0; k < h; ++k) {
      const auto& p = panel.at(row.article, row.origin + k);
      q[static_cast<std::size_t>(k)] = p.demand;
      out.discount(k, j) = p.discount;
    }
    out.data.add(build_effect_features(panel, row.article, row.origin, spec), q, 1.0, row.parity);
    int source = row.parity;
    if (variant == Variant::dml || variant == Variant::sdml) source = 1 - row.parity;
    if (variant == Variant::sample_split) source = 0;
    out.source_parity[static_cast<std::size_t>(j)] = source;
  }
  out.data.finalize();

  for (int source = 0; source < 2; ++source) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (out.source_parity[static_cast<std::size_t>(j)] == source) cols.push_back(j);
    }
    if (cols.empty()) continue;
    Eigen::MatrixXd x(spec.outcome_dim(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) x.col(static_cast<Eigen::Index>(c)) = x_outcome.col(cols[c]);
    const Eigen::MatrixXd qt = nuisances.outcome_for(source).predict(x);
    Eigen::MatrixXd dt;
    if (use_treatment) dt = nuisances.treatment_for(source).predict(x);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      out.q_tilde.col(cols[c]) = qt.col(static_cast<Eigen::Index>(c));
      if (use_treatment) out.d_tilde.col(cols[c]) = dt.col(static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

nnet::Objective effect_objective(const EffectData& data, HeadKind head, nnet::Loss loss) {
  return [&data, head, loss](std::span<const std::size_t> rows, const Eigen::MatrixXd& out,
                             Eigen::MatrixXd& d_out) {
    const Eigen::Index h = data.discount.rows();
    const double inv_h = 1.0 / static_cast<double>(h);
    double total = 0.0;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      const auto r = static_cast<Eigen::Index>(rows[j]);
      const double psi = out(0, col);
      double grad = 0.0;
      double row_loss = 0.0;
      for (Eigen::Index k = 0; k < h; ++k) {
        const double qt = data.q_tilde(k, r);
        const double d = data.discount(k, r);
        const double dt = std::min(data.d_tilde(k, r), kTreatmentClamp);
        double q_hat = 0.0;
        double dq_dpsi = 0.0;
        if (head == HeadKind::linear) {
          q_hat = qt + psi * (d - dt);
          dq_dpsi = d - dt;
        } else {
          const double log_ratio = std::log1p(-d) - std::log1p(-dt);
          q_hat = qt * std::exp(psi * log_ratio);
          dq_dpsi = q_hat * log_ratio;
        }
        const double e = q_hat - data.data.targets(k, r);
        if (loss == nnet::Loss::l2) {
          row_loss += inv_h * e * e;
          grad += inv_h * 2.0 * e * dq_dpsi;
        } else {
          row_loss += inv_h * std::abs(e);
          grad += inv_h * (e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0)) * dq_dpsi;
        }
      }
      const double w = data.data.weights[rows[j]];
      total += w * row_loss;
      d_out(0, col) = w * grad;
    }
    return total;
  };
}

nnet::Network fit_effect(const EffectData& data, const DmlConfig& config) {
  if (data.data.size() == 0) fail(ErrorKind::config, "effect stage has no training rows");
  nnet::NetworkSpec ns;
  ns.input_dim = data.data.input_dim;
  ns.hidden_dims = config.effect_hidden_dims;
  ns.output_dim = 1;
  ns.dropout_rate = config.dropout;
  if (config.head == HeadKind::elastic) {
    ns.output_activation = nnet::Activation::negative_softplus;
    ns.output_scale = 1.0;
  } else {
    ns.output_activation = nnet::Activation::identity;
    ns.output_scale = std::max(1.0, mean_of(data.data.targets));
  }
  ns.seed = submodel_seed(config.seed, Role::effect, 0);
  auto trained = nnet::train(nnet::Network(ns), data.data, seeded(config.effect_train, ns.seed),
                             effect_objective(data, config.head, config.effect_train.loss));
  return std::move(trained.network);
}

DmlModel fit_with_nuisances(const Panel& panel, Window window, const DmlConfig& config,
                            Variant variant, Nuisances nuisances) {
  DmlModel model;
  model.variant = variant;
  model.head = config.head;
  model.features = config.features;
  model.features.include_future_discount = false;
  model.window = window;
  model.config = config;
  const bool treatment = variant == Variant::dml || variant == Variant::dml_nocf ||
                         variant == Variant::sample_split;
  if (!treatment) {
    nuisances.treatment[0].reset();
    nuisances.treatment[1].reset();
  }
  if (variant == Variant::sample_split) {
    nuisances.outcome[1].reset();
    nuisances.treatment[1].reset();
  }
  const EffectData data = build_effect_data(panel, window, config, nuisances, variant);
  model.effect_rows = data.data.size();
  model.effect = fit_effect(data, config);
  model.nuisances = std::move(nuisances);
  model.article_ids = sorted_ids(panel);
  return model;
}

DmlModel fit(const Panel& panel, Window window, const DmlConfig& config, Variant variant) {
  const bool treatment = variant == Variant::dml || variant == Variant::dml_nocf ||
                         variant == Variant::sample_split;
  Nuisances nuisances = fit_nuisances(panel, window, config, treatment, variant == Variant::sample_split);
  return fit_with_nuisances(panel, window, config, variant, std::move(nuisances));
}

DmlModel fit_sdml(const Panel& panel, Window window, const DmlConfig& config) {
  return fit(panel, window, config, Variant::sdml);
}

DmlModel fit_no_crossfit_variant(const Panel& panel, Window window, const DmlConfig& config) {
  return fit(panel, window, config, Variant::dml_nocf);
}

void ForecastRequest::validate() const {
  if (horizon < 1) fail(ErrorKind::config, "forecast horizon must be >= 1");
  if (!scenario.logged) {
    if (static_cast<int>(scenario.forced.size()) != horizon) {
      fail(ErrorKind::config, "forced discount list must have one value per horizon step");
    }
    for (double d : scenario.forced) {
      if (!(d >= 0.0 && d < 0.7)) fail(ErrorKind::config, "forced discounts must lie in [0, 0.7)");
    }
  }
}

Forecast predict(const DmlModel& model, const Panel& panel, const ForecastRequest& request, Exec exec) {
  request.validate();
  if (request.horizon != model.features.horizon) {
    fail(ErrorKind::config, "request horizon differs from the trained horizon");
  }
  check_known(model.article_ids, panel);
  const FeatureSpec& spec = model.features;
  const auto n = static_cast<Eigen::Index>(panel.size());
  Eigen::MatrixXd x(spec.outcome_dim(), n);
  Eigen::MatrixXd e(spec.effect_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto xi = build_features(panel, static_cast<std::size_t>(i), request.origin, spec);
    x.col(i) = Eigen::Map<const Eigen::VectorXd>(xi.data(), spec.outcome_dim());
    const auto ei = build_effect_features(panel, static_cast<std::size_t>(i), request.origin, spec);
    e.col(i) = Eigen::Map<const Eigen::VectorXd>(ei.data(), spec.effect_dim());
  }
  std::array<Eigen::MatrixXd, 2> q_tilde;
  std::array<Eigen::MatrixXd, 2> d_tilde;
  for (int p = 0; p < 2; ++p) {
    const auto pi = static_cast<std::size_t>(p);
    if (!model.nuisances.outcome[pi]) continue;
    q_tilde[pi] = model.nuisances.outcome[pi]->predict(x, exec);
    d_tilde[pi] = model.nuisances.treatment[pi] ? model.nuisances.treatment[pi]->predict(x, exec)
                                                : Eigen::MatrixXd::Zero(request.horizon, n);
  }
  const Eigen::MatrixXd psi = model.effect.predict(e, exec);

  Forecast out;
  out.q_hat.resize(request.horizon, n);
  out.effect.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out.article_ids.push_back(panel.statics[idx].article_id);
    out.effect[idx] = psi(0, i);
    const auto d = scenario_discounts(panel, idx, request);
    const int own = parity(panel.statics[idx].article_id);
    const int same = model.variant == Variant::sample_split ? 0 : own;
    const int other = model.variant == Variant::sample_split ? 0 : 1 - own;
    for (Eigen::Index k = 0; k < request.horizon; ++k) {
      const double dk = d[static_cast<std::size_t>(k)];
      const auto path = [&](int p) {
        const auto pi = static_cast<std::size_t>(p);
        return apply_head(model.head, q_tilde[pi](k, i), dk, d_tilde[pi](k, i), psi(0, i));
      };
      switch (request.mode) {
        case Mode::cross_fit: out.q_hat(k, i) = path(other); break;
        case Mode::forecast: out.q_hat(k, i) = path(same); break;
        case Mode::ensemble:
          out.q_hat(k, i) = ensemble(std::max(0.0, path(other)), std::max(0.0, path(same)));
          break;
      }
    }
  }
  return out;
}

double tf_linear_head(double base, double slope, double d) {
  const double q = base + slope * d;
  return q > 0.0 ? q : 0.0;
}

double tf_elastic_head(double base, std::span<const double> slopes, double d, double max_discount) {
  const double x = -std::log1p(-d);
  const double x_max = -std::log1p(-max_discount);
  const auto pieces = static_cast<double>(slopes.size());
  double g = 0.0;
  for (std::size_t j = 0; j < slopes.size(); ++j) {
    const double lo = x_max * static_cast<double>(j) / pieces;
    const double hi = x_max * static_cast<double>(j + 1) / pieces;
    const double span = j + 1 == slopes.size() ? std::max(0.0, x - lo) : std::clamp(x - lo, 0.0, hi - lo);
    g += slopes[j] * span;
  }
  return base * std::exp(g);
}

namespace {

/// Segment lengths of x = -ln(1-d) per piece, as used by tf_elastic_head.
void tf_segments(double d, int pieces, double max_discount, std::vector<double>& seg) {
  const double x = -std::log1p(-d);
  const double x_max = -std::log1p(-max_discount);
  seg.assign(static_cast<std::size_t>(pieces), 0.0);
  for (int j = 0; j < pieces; ++j) {
    const double lo = x_max * j / pieces;
    const double hi = x_max * (j + 1) / pieces;
    seg[static_cast<std::size_t>(j)] = j + 1 == pieces ? std::max(0.0, x - lo) : std::clamp(x - lo, 0.0, hi - lo);
  }
}

struct TfData {
  nnet::Dataset data;
  Eigen::MatrixXd discount;
};

}  // namespace

TfModel fit_tf_baseline(const Panel& panel, Window window, const DmlConfig& config, int pieces) {
  if (pieces < 1) fail(ErrorKind::config, "TF head needs at least one linear piece");
  TfModel model;
  model.head = config.head;
  model.pieces = pieces;
  model.features = config.features;
  model.features.include_future_discount = false;
  model.window = window;
  const FeatureSpec& spec = model.features;
  const int h = spec.horizon;
  const auto rows = training_rows(panel, window, spec);
  TfData td{nnet::Dataset(spec.outcome_dim(), h, rows.size()), Eigen::MatrixXd(h, static_cast<Eigen::Index>(rows.size()))};
  std::vector<double> q(static_cast<std::size_t>(h));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto& row = rows[j];
    for (int k = 0; k < h; ++k) {
      const auto& p = panel.at(row.article, row.origin + k);
      q[static_cast<std::size_t>(k)] = p.demand;
      td.discount(k, static_cast<Eigen::Index>(j)) = p.discount;
    }
    td.data.add(build_features(panel, row.article, row.origin, spec), q, 1.0, row.parity);
  }
  td.data.finalize();
  if (td.data.size() == 0) fail(ErrorKind::config, "TF baseline has no training rows");
  model.scale = std::max(1.0, mean_of(td.data.targets));

  const int extra = config.head == HeadKind::linear ? 1 : pieces;
  nnet::NetworkSpec ns;
  ns.input_dim = spec.outcome_dim();
  ns.hidden_dims = config.hidden_dims;
  ns.output_dim = h + extra;
  ns.output_activation = nnet::Activation::identity;
  ns.dropout_rate = config.dropout;
  ns.seed = submodel_seed(config.seed, Role::tf, 0);

  const double scale = model.scale;
  const HeadKind head = config.head;
  const nnet::Loss loss = config.outcome_train.loss;
  nnet::Objective objective = [&td, scale, head, h, pieces, loss](std::span<const std::size_t> rows,
                                                                  const Eigen::MatrixXd& out,
                                                                  Eigen::MatrixXd& d_out) {
    const double inv_h = 1.0 / h;
    double total = 0.0;
    std::vector<double> seg;
    std::vector<double> slopes(static_cast<std::size_t>(pieces));
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      const auto r = static_cast<Eigen::Index>(rows[j]);
      d_out.col(col).setZero();
      for (int k = 0; k < h; ++k) {
        const double o = out(k, col);
        const double base = scale * nnet::softplus(o);
        const double dbase = scale * nnet::sigmoid(o);
        const double d = td.discount(k, r);
        double q_hat = 0.0;
        if (head == HeadKind::linear) {
          const double so = out(h, col);
          const double slope = scale * nnet::softplus(so);
          q_hat = base + slope * d;
          const double e = q_hat - td.data.targets(k, r);
          const double g = loss == nnet::Loss::l2 ? 2.0 * e : (e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0));
          total += inv_h * (loss == nnet::Loss::l2 ? e * e : std::abs(e));
          d_out(k, col) += inv_h * g * dbase;
          d_out(h, col) += inv_h * g * d * scale * nnet::sigmoid(so);
        } else {
          tf_segments(d, pieces, 0.7, seg);
          double gsum = 0.0;
          for (int p = 0; p < pieces; ++p) {
            slopes[static_cast<std::size_t>(p)] = nnet::softplus(out(h + p, col));
            gsum += slopes[static_cast<std::size_t>(p)] * seg[static_cast<std::size_t>(p)];
          }
          const double mult = std::exp(gsum);
          q_hat = base * mult;
          const double e = q_hat - td.data.targets(k, r);
          const double g = loss == nnet::Loss::l2 ? 2.0 * e : (e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0));
          total += inv_h * (loss == nnet::Loss::l2 ? e * e : std::abs(e));
          d_out(k, col) += inv_h * g * dbase * mult;
          for (int p = 0; p < pieces; ++p) {
            d_out(h + p, col) += inv_h * g * q_hat * seg[static_cast<std::size_t>(p)] *
                                 nnet::sigmoid(out(h + p, col));
          }
        }
      }
    }
    return total;
  };
  auto trained = nnet::train(nnet::Network(ns), td.data, seeded(config.outcome_train, ns.seed), objective);
  model.net = std::move(trained.network);
  model.article_ids = sorted_ids(panel);
  return model;
}

Forecast predict_tf(const TfModel& model, const Panel& panel, const ForecastRequest& request) {
  request.validate();
  if (request.horizon != model.features.horizon) {
    fail(ErrorKind::config, "request horizon differs from the trained horizon");
  }
  check_known(model.article_ids, panel);
  const FeatureSpec& spec = model.features;
  const int h = spec.horizon;
  const auto n = static_cast<Eigen::Index>(panel.size());
  Eigen::MatrixXd x(spec.outcome_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto xi = build_features(panel, static_cast<std::size_t>(i), request.origin, spec);
    x.col(i) = Eigen::Map<const Eigen::VectorXd>(xi.data(), spec.outcome_dim());
  }
  const Eigen::MatrixXd raw = model.net.predict(x);
  Forecast out;
  out.q_hat.resize(h, n);
  out.effect.resize(static_cast<std::size_t>(n));
  std::vector<double> slopes(static_cast<std::size_t>(model.pieces));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    out.article_ids.push_back(panel.statics[idx].article_id);
    const auto d = scenario_discounts(panel, idx, request);
    if (model.head == HeadKind::linear) {
      const double slope = model.scale * nnet::softplus(raw(h, i));
      out.effect[idx] = slope;
      for (int k = 0; k < h; ++k) {
        out.q_hat(k, i) = tf_linear_head(model.scale * nnet::softplus(raw(k, i)), slope, d[static_cast<std::size_t>(k)]);
      }
    } else {
      for (int p = 0; p < model.pieces; ++p) slopes[static_cast<std::size_t>(p)] = nnet::softplus(raw(h + p, i));
      out.effect[idx] = -slopes.front();
      for (int k = 0; k < h; ++k) {
        out.q_hat(k, i) = tf_elastic_head(model.scale * nnet::softplus(raw(k, i)), slopes, d[static_cast<std::size_t>(k)]);
      }
    }
  }
  return out;
}

PartialLinearConfig::PartialLinearConfig() {
  train.loss = nnet::Loss::l2;
  train.learning_rate = 3e-3;
  train.epochs = 60;
  train.batch_size = 64;
  train.schedule = nnet::Schedule::exponential;
  train.decay = 0.9995;
  // one shrinkage setting for every learner, treatment input included
  train.weight_decay = 5.0;
}

PartialLinearEstimate estimate_partial_linear(const Eigen::MatrixXd& covariates,
                                              std::span<const double> treatment,
                                              std::span<const double> outcome,
                                              const PartialLinearConfig& config) {
  const auto n = covariates.cols();
  if (static_cast<Eigen::Index>(treatment.size()) != n || static_cast<Eigen::Index>(outcome.size()) != n) {
    fail(ErrorKind::length_mismatch, "partial linear: covariates, treatment and outcome differ in length");
  }
  if (n < 4) fail(ErrorKind::split, "partial linear: need at least four samples");
  const int p = static_cast<int>(covariates.rows());
  std::vector<double> q_tilde(static_cast<std::size_t>(n));
  std::vector<double> d_tilde(static_cast<std::size_t>(n));
  for (int fold = 0; fold < 2; ++fold) {
    nnet::Dataset q_data(p, 1);
    nnet::Dataset d_data(p, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i % 2 == fold) continue;
      const std::span<const double> z(covariates.col(i).data(), static_cast<std::size_t>(p));
      q_data.add(z, std::span<const double>(&outcome[static_cast<std::size_t>(i)], 1));
      d_data.add(z, std::span<const double>(&treatment[static_cast<std::size_t>(i)], 1));
    }
    q_data.finalize();
    d_data.finalize();
    nnet::NetworkSpec ns;
    ns.input_dim = p;
    ns.hidden_dims = config.hidden_dims;
    ns.dropout_rate = 0.0;
    ns.output_activation = nnet::Activation::identity;
    ns.seed = submodel_seed(config.seed, Role::pl_outcome, fold);
    const auto q_net = nnet::train(nnet::Network(ns), q_data, seeded(config.train, ns.seed)).network;
    ns.seed = submodel_seed(config.seed, Role::pl_treatment, fold);
    const auto d_net = nnet::train(nnet::Network(ns), d_data, seeded(config.train, ns.seed)).network;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i % 2 != fold) continue;
      const std::span<const double> z(covariates.col(i).data(), static_cast<std::size_t>(p));
      q_tilde[static_cast<std::size_t>(i)] = q_net.forward_scalar(z);
      d_tilde[static_cast<std::size_t>(i)] = d_net.forward_scalar(z);
    }
  }
  PartialLinearEstimate est;
  est.residuals.outcome.resize(static_cast<std::size_t>(n));
  est.residuals.treatment.resize(static_cast<std::size_t>(n));
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    est.residuals.outcome[i] = outcome[i] - q_tilde[i];
    est.residuals.treatment[i] = treatment[i] - d_tilde[i];
    num += est.residuals.treatment[i] * est.residuals.outcome[i];
    den += est.residuals.treatment[i] * est.residuals.treatment[i];
  }
  if (!(den > 0.0)) fail(ErrorKind::rank_deficient, "partial linear: treatment residuals vanish");
  est.theta = num / den;
  return est;
}

double slearner_effect(const Eigen::MatrixXd& covariates, std::span<const double> treatment,
                       std::span<const double> outcome, const PartialLinearConfig& config) {
  const auto n = covariates.cols();
  const int p = static_cast<int>(covariates.rows());
  nnet::Dataset data(p + 1, 1, static_cast<std::size_t>(n));
  std::vector<double> x(static_cast<std::size_t>(p + 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::copy_n(covariates.col(i).data(), p, x.begin());
    x[static_cast<std::size_t>(p)] = treatment[static_cast<std::size_t>(i)];
    data.add(x, std::span<const double>(&outcome[static_cast<std::size_t>(i)], 1));
  }
  data.finalize();
  nnet::NetworkSpec ns;
  ns.input_dim = p + 1;
  ns.hidden_dims = config.hidden_dims;
  ns.dropout_rate = 0.0;
  ns.output_activation = nnet::Activation::identity;
  ns.seed = submodel_seed(config.seed, Role::slearner, 0);
  const auto net = nnet::train(nnet::Network(ns), data, seeded(config.train, ns.seed)).network;
  constexpr double kStep = 1e-2;
  Eigen::MatrixXd up = data.features;
  Eigen::MatrixXd down = data.features;
  up.row(p).array() += kStep;
  down.row(p).array() -= kStep;
  const Eigen::MatrixXd diff = net.predict(up) - net.predict(down);
  return diff.mean() / (2.0 * kStep);
}

void save_model(const DmlModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "elastic_dml.model";
  manifest["version"] = kModelFormatVersion;
  manifest["kind"] = "dml";
  manifest["variant"] = to_string(model.variant);
  manifest["head"] = to_string(model.head);
  manifest["features"] = model.features.to_json();
  manifest["window"] = {model.window.start, model.window.end};
  manifest["config"] = model.config.to_json();
  manifest["article_ids"] = model.article_ids;
  manifest["effect_rows"] = model.effect_rows;
  nlohmann::json subs = nlohmann::json::object();
  const char* parity_name[2] = {"even", "odd"};
  for (int p = 0; p < 2; ++p) {
    const auto pi = static_cast<std::size_t>(p);
    if (model.nuisances.outcome[pi]) {
      const std::string file = std::string("outcome_") + parity_name[p] + ".json";
      csv::write_text(dir / file, model.nuisances.outcome[pi]->to_json().dump() + "\n");
      subs[std::string("outcome_") + parity_name[p]] = file;
    }
    if (model.nuisances.treatment[pi]) {
      const std::string file = std::string("treatment_") + parity_name[p] + ".json";
      csv::write_text(dir / file, model.nuisances.treatment[pi]->to_json().dump() + "\n");
      subs[std::string("treatment_") + parity_name[p]] = file;
    }
  }
  csv::write_text(dir / "effect.json", model.effect.to_json().dump() + "\n");
  subs["effect"] = "effect.json";
  manifest["submodels"] = subs;
  csv::write_text(dir / "model.json", manifest.dump(2) + "\n");
}

namespace {
nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(csv::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::schema, path.string() + ": " + e.what());
  }
}
}  // namespace

DmlModel load_model(const std::filesystem::path& dir) {
  const auto manifest = read_json(dir / "model.json");
  try {
    if (manifest.at("format") != "elastic_dml.model" || manifest.at("kind") != "dml") {
      fail(ErrorKind::schema, "model.json does not describe a DML model");
    }
    DmlModel model;
    model.variant = variant_from_string(manifest.at("variant").get<std::string>());
    model.head = head_from_string(manifest.at("head").get<std::string>());
    model.features = FeatureSpec::from_json(manifest.at("features"));
    model.window = {manifest.at("window")[0].get<int>(), manifest.at("window")[1].get<int>()};
    model.config = DmlConfig::from_json(manifest.at("config"));
    model.article_ids = manifest.at("article_ids").get<std::vector<std::int64_t>>();
    model.effect_rows = manifest.value("effect_rows", std::size_t{0});
    const auto& subs = manifest.at("submodels");
    const char* parity_name[2] = {"even", "odd"};
    for (int p = 0; p < 2; ++p) {
      const auto pi = static_cast<std::size_t>(p);
      const std::string o = std::string("outcome_") + parity_name[p];
      const std::string t = std::string("treatment_") + parity_name[p];
      if (subs.contains(o)) model.nuisances.outcome[pi] = nnet::Network::from_json(read_json(dir / subs[o].get<std::string>()));
      if (subs.contains(t)) model.nuisances.treatment[pi] = nnet::Network::from_json(read_json(dir / subs[t].get<std::string>()));
    }
    model.effect = nnet::Network::from_json(read_json(dir / subs.at("effect").get<std::string>()));
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::schema, std::string("model.json: ") + e.what());
  }
}

void save_model(const TfModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "elastic_dml.model";
  manifest["version"] = kModelFormatVersion;
  manifest["kind"] = "tf";
  manifest["head"] = to_string(model.head);
  manifest["pieces"] = model.pieces;
  manifest["scale"] = model.scale;
  manifest["features"] = model.features.to_json();
  manifest["window"] = {model.window.start, model.window.end};
  manifest["article_ids"] = model.article_ids;
  manifest["submodels"] = {{"tf", "tf.json"}};
  csv::write_text(dir / "tf.json", model.net.to_json().dump() + "\n");
  csv::write_text(dir / "model.json", manifest.dump(2) + "\n");
}

TfModel load_tf_model(const std::filesystem::path& dir) {
  const auto manifest = read_json(dir / "model.json");
  try {
    if (manifest.at("format") != "elastic_dml.model" || manifest.at("kind") != "tf") {
      fail(ErrorKind::schema, "model.json does not describe a TF model");
    }
    TfModel model;
    model.head = head_from_string(manifest.at("head").get<std::string>());
    model.pieces = manifest.at("pieces").get<int>();
    model.scale = manifest.at("scale").get<double>();
    model.features = FeatureSpec::from_json(manifest.at("features"));
    model.window = {manifest.at("window")[0].get<int>(), manifest.at("window")[1].get<int>()};
    model.article_ids = manifest.at("article_ids").get<std::vector<std::int64_t>>();
    model.net = nnet::Network::from_json(read_json(dir / manifest.at("submodels").at("tf").get<std::string>()));
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::schema, std::string("model.json: ") + e.what());
  }
}

}  // namespace elastic_dml::dml
