#include "elastic_dml/sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "elastic_dml/error.hpp"
#include "elastic_dml/rng.hpp"

namespace elastic_dml {

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) fail(ErrorKind::config, "sim config field '" + field + "': " + what);
}

}  // namespace

int SimConfig::initial_step() const {
  const int j = static_cast<int>(std::lround(target_avg_discount / discount_step_size));
  return std::clamp(j, 0, max_step());
}

void SimConfig::validate() const {
  require(n_articles >= 1, "n_articles", "must be >= 1");
  require(n_weeks >= 5, "n_weeks", "must be >= 5 (policy needs 4 warm-up weeks)");
  require(n_cat_d >= 1, "n_cat_d", "must be >= 1");
  require(n_cat_k >= 1, "n_cat_k", "must be >= 1");
  require(season_period >= 1, "season_period", "must be >= 1");
  require(n_season_types >= 1, "n_season_types", "must be >= 1");
  require(n_season_types <= n_cat_k, "n_season_types", "must not exceed n_cat_k");
  require(discount_steps >= 1, "discount_steps", "must be >= 1");
  require(discount_step_size > 0.0, "discount_step_size", "must be > 0");
  require(max_discount() < 1.0, "discount_steps", "largest discount level must be < 1");
  require(target_avg_discount >= 0.0 && target_avg_discount <= max_discount(),
          "target_avg_discount", "must lie in [0, max discount level]");
  require(alpha_sd >= 0.0, "alpha_sd", "must be >= 0");
  require(beta_sd >= 0.0, "beta_sd", "must be >= 0");
  require(alpha_noise_sd >= 0.0, "alpha_noise_sd", "must be >= 0");
  require(beta_noise_sd >= 0.0, "beta_noise_sd", "must be >= 0");
  require(gamma_max >= 0.0, "gamma_max", "must be >= 0");
  require(sigma_tau_max >= 0.0, "sigma_tau_max", "must be >= 0");
  require(effect_log_sd >= 0.0, "effect_log_sd", "must be >= 0");
  require(price_mean_div > 0.0, "price_mean_div", "must be > 0");
  require(price_sd_div > 0.0, "price_sd_div", "must be > 0");
  require(price_floor_frac > 0.0, "price_floor_frac", "must be > 0");
  require(season_shift_max >= 0, "season_shift_max", "must be >= 0");
  require(promo_prob >= 0.0 && promo_prob <= 1.0, "promo_prob", "must lie in [0, 1]");
  require(max_negative_fraction >= 0.0 && max_negative_fraction <= 1.0, "max_negative_fraction",
          "must lie in [0, 1]");
  require(max_article_attempts >= 1, "max_article_attempts", "must be >= 1");
}

std::size_t Panel::index_of(std::int64_t article_id) const {
  // Simulated panels use ids 0..n-1 in order; fall back to a scan otherwise.
  if (article_id >= 0 && static_cast<std::size_t>(article_id) < statics.size() &&
      statics[static_cast<std::size_t>(article_id)].article_id == article_id) {
    return static_cast<std::size_t>(article_id);
  }
  for (std::size_t i = 0; i < statics.size(); ++i) {
    if (statics[i].article_id == article_id) return i;
  }
  fail(ErrorKind::inference, "unknown article id " + std::to_string(article_id));
}

bool Panel::has_week(std::size_t index, int week) const {
  const auto& s = series.at(index);
  if (s.empty()) return false;
  return week >= s.front().week && week <= s.back().week;
}

const SeriesPoint& Panel::at(std::size_t index, int week) const {
  if (!has_week(index, week)) {
    fail(ErrorKind::history, "article " + std::to_string(statics.at(index).article_id) +
                                 " has no observation at week " + std::to_string(week));
  }
  const auto& s = series[index];
  return s[static_cast<std::size_t>(week - s.front().week)];
}

std::size_t Panel::row_count() const {
  std::size_t n = 0;
  for (const auto& s : series) n += s.size();
  return n;
}

std::vector<int> season_groups(int n_cat_k, int n_groups) {
  std::vector<int> group(static_cast<std::size_t>(n_cat_k));
  const int base = n_cat_k / n_groups;
  const int extra = n_cat_k % n_groups;
  int k = 0;
  for (int g = 0; g < n_groups; ++g) {
    const int size = base + (g < extra ? 1 : 0);
    for (int m = 0; m < size; ++m) group[static_cast<std::size_t>(k++)] = g;
  }
  return group;
}

CategoryTable draw_categories(const SimConfig& config) {
  CategoryTable table;
  table.alpha.resize(static_cast<std::size_t>(config.n_cat_d));
  for (int d = 0; d < config.n_cat_d; ++d) {
    Stream rng(config.master_seed, Purpose::category_alpha, {static_cast<std::uint64_t>(d)});
    table.alpha[static_cast<std::size_t>(d)] = rng.normal(config.alpha_mean, config.alpha_sd);
  }
  table.beta.resize(static_cast<std::size_t>(config.n_cat_k));
  for (int k = 0; k < config.n_cat_k; ++k) {
    Stream rng(config.master_seed, Purpose::category_beta, {static_cast<std::uint64_t>(k)});
    table.beta[static_cast<std::size_t>(k)] = rng.normal(config.beta_mean, config.beta_sd);
  }
  table.group_of_k = season_groups(config.n_cat_k, config.n_season_types);
  table.shift_by_group.resize(static_cast<std::size_t>(config.n_season_types));
  for (int g = 0; g < config.n_season_types; ++g) {
    Stream rng(config.master_seed, Purpose::season_shift, {static_cast<std::uint64_t>(g)});
    table.shift_by_group[static_cast<std::size_t>(g)] = static_cast<int>(
        rng.uniform_int(-config.season_shift_max, config.season_shift_max));
  }
  return table;
}

WeekNoise draw_week_noise(const SimConfig& config, std::int64_t article_id, int attempt,
                          int week) {
  Stream rng(config.master_seed, Purpose::week_noise,
             {static_cast<std::uint64_t>(article_id), static_cast<std::uint64_t>(attempt),
              static_cast<std::uint64_t>(week)});
  WeekNoise noise;
  noise.alpha_noise = rng.normal(0.0, config.alpha_noise_sd);
  noise.beta_noise = rng.normal(0.0, config.beta_noise_sd);
  noise.trend_noise = rng.normal();
  return noise;
}

double seasonal_component(const SimConfig& config, const ArticleStatic& article, int week) {
  return std::sin(2.0 * std::numbers::pi * static_cast<double>(week + article.season_shift) /
                  static_cast<double>(config.season_period));
}

double base_demand(const SimConfig& config, const ArticleStatic& article, int week,
                   const WeekNoise& noise) {
  const double a = article.alpha_d + noise.alpha_noise;
  const double b = article.beta_k + noise.beta_noise;
  const double c = config.a_sq_coef * a * a + config.a_coef * a + config.b_coef * b;
  const double tau = static_cast<double>(week) * article.gamma + article.sigma_tau * noise.trend_noise;
  const double s = seasonal_component(config, article, week);
  return (config.trend_weight * tau + config.season_weight * s + 1.0) * c;
}

ArticleStatic sample_article(const SimConfig& config, const CategoryTable& categories,
                             std::int64_t article_id, int attempt) {
  Stream rng(config.master_seed, Purpose::article,
             {static_cast<std::uint64_t>(article_id), static_cast<std::uint64_t>(attempt)});
  ArticleStatic a;
  a.article_id = article_id;
  a.attempt = attempt;
  a.cat_d = static_cast<int>(rng.uniform_int(1, config.n_cat_d));
  a.cat_k = static_cast<int>(rng.uniform_int(1, config.n_cat_k));
  a.alpha_d = categories.alpha[static_cast<std::size_t>(a.cat_d - 1)];
  a.beta_k = categories.beta[static_cast<std::size_t>(a.cat_k - 1)];
  const int group = categories.group_of_k[static_cast<std::size_t>(a.cat_k - 1)];
  a.season_shift = categories.shift_by_group[static_cast<std::size_t>(group)];
  a.gamma = rng.uniform(-config.gamma_max, config.gamma_max);
  a.sigma_tau = rng.uniform(0.0, config.sigma_tau_max);
  a.promo = rng.bernoulli(config.promo_prob) ? 1 : 0;
  a.effect_base =
      std::max(config.effect_floor, rng.lognormal(config.effect_log_mean, config.effect_log_sd));

  double sum_a = 0.0;
  double sum_qb = 0.0;
  std::vector<double> qb(static_cast<std::size_t>(config.n_weeks));
  for (int t = 0; t < config.n_weeks; ++t) {
    const WeekNoise noise = draw_week_noise(config, article_id, attempt, t);
    sum_a += a.alpha_d + noise.alpha_noise;
    qb[static_cast<std::size_t>(t)] = base_demand(config, a, t, noise);
    sum_qb += qb[static_cast<std::size_t>(t)];
  }
  const double n = static_cast<double>(config.n_weeks);
  a.mean_a = sum_a / n;
  a.mean_base_demand = sum_qb / n;
  a.effect = a.effect_base * config.effect_scale * a.mean_a;

  const double qbar = a.mean_base_demand;
  const double floor = config.price_floor_frac * std::abs(qbar);
  double price = 0.0;
  bool ok = false;
  for (int retry = 0; retry < 100 && !ok; ++retry) {
    price = rng.normal(qbar / config.price_mean_div, std::abs(qbar) / config.price_sd_div);
    ok = price > floor;
  }
  if (!ok) price = floor > 0.0 ? floor : 1e-6;
  a.base_price = price;

  // Stock that clears at season end when selling at the target discount
  // every week.
  const double target_price = (1.0 - config.target_avg_discount) * a.base_price;
  double stock = 0.0;
  for (double q : qb) stock += demand(q, target_price, a.effect);
  a.initial_stock = stock;
  return a;
}

double stock_coverage(double stock, std::span<const double> last4_demand, int week, int n_weeks) {
  if (week >= n_weeks || week < 4) {
    fail(ErrorKind::invalid_week, "stock coverage requested at week " + std::to_string(week) +
                                      " outside [4, " + std::to_string(n_weeks) + ")");
  }
  if (last4_demand.size() != 4) {
    fail(ErrorKind::length_mismatch, "stock coverage needs exactly 4 trailing demands");
  }
  if (stock <= 0.0) return 0.0;
  const double total = std::accumulate(last4_demand.begin(), last4_demand.end(), 0.0);
  if (total <= 0.0) return std::numeric_limits<double>::infinity();
  const double weeks_to_sellout = 4.0 * stock / total;
  return weeks_to_sellout / static_cast<double>(n_weeks - week);
}

int update_discount_step(int previous_step, double coverage, double lambda, int max_step) {
  int step = previous_step;
  if (coverage > 1.0 && lambda > 1.0 / coverage) {
    step = previous_step + 1;
  } else if (coverage < 1.0 && lambda > coverage) {
    step = previous_step - 1;
  }
  return std::clamp(step, 0, max_step);
}

ArticleRun run_policy(const SimConfig& config, const ArticleStatic& article) {
  ArticleRun run;
  run.statics = article;
  run.series.resize(static_cast<std::size_t>(config.n_weeks));
  double stock = article.initial_stock;
  int step = config.initial_step();
  for (int t = 0; t < config.n_weeks; ++t) {
    auto& point = run.series[static_cast<std::size_t>(t)];
    double discount = 0.0;
    if (t >= 4) {
      std::array<double, 4> last4{};
      for (int k = 0; k < 4; ++k) last4[static_cast<std::size_t>(k)] = run.series[static_cast<std::size_t>(t - 4 + k)].demand;
      const double w = stock_coverage(stock, last4, t, config.n_weeks);
      Stream rng(config.master_seed, Purpose::policy,
                 {static_cast<std::uint64_t>(article.article_id),
                  static_cast<std::uint64_t>(article.attempt), static_cast<std::uint64_t>(t)});
      step = update_discount_step(step, w, rng.uniform(), config.max_step());
      discount = step * config.discount_step_size;
    }
    const WeekNoise noise = draw_week_noise(config, article.article_id, article.attempt, t);
    const double qb = base_demand(config, article, t, noise);
    const double price = article.base_price * (1.0 - discount);
    const double raw = raw_demand(qb, price, article.effect);
    if (raw < 0.0) ++run.negative_weeks;
    point.week = t;
    point.discount = discount;
    point.price = price;
    point.stock = stock;
    point.base_demand = qb;
    point.demand = raw > 0.0 ? raw : 0.0;
    stock = std::max(0.0, stock - point.demand);
  }
  return run;
}

ArticleRun simulate_article(const SimConfig& config, const CategoryTable& categories,
                            std::int64_t article_id) {
  const double limit = config.max_negative_fraction * config.n_weeks;
  ArticleRun run;
  for (int attempt = 0; attempt < config.max_article_attempts; ++attempt) {
    run = run_policy(config, sample_article(config, categories, article_id, attempt));
    if (static_cast<double>(run.negative_weeks) <= limit) break;
  }
  return run;
}

Panel simulate_policy(const SimConfig& config, Exec exec) {
  config.validate();
  const CategoryTable categories = draw_categories(config);
  const auto n = static_cast<std::int64_t>(config.n_articles);
  std::vector<ArticleRun> runs(config.n_articles);
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < n; ++i) {
      runs[static_cast<std::size_t>(i)] = simulate_article(config, categories, i);
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i) {
      runs[static_cast<std::size_t>(i)] = simulate_article(config, categories, i);
    }
  }

  Panel panel;
  panel.provenance = Provenance::simulated;
  panel.seed = config.master_seed;
  panel.n_cat_d = config.n_cat_d;
  panel.n_cat_k = config.n_cat_k;
  panel.season_period = config.season_period;
  panel.n_weeks = config.n_weeks;
  panel.statics.reserve(runs.size());
  panel.series.reserve(runs.size());
  for (auto& run : runs) {
    panel.clamp_events += run.negative_weeks;
    panel.statics.push_back(run.statics);
    panel.series.push_back(std::move(run.series));
  }
  return panel;
}

std::vector<double> counterfactual_demand(const Panel& panel, std::int64_t article_id,
                                          std::span<const int> weeks,
                                          std::span<const double> forced_discounts) {
  if (!panel.has_truth()) {
    fail(ErrorKind::unsupported, "counterfactual demand needs a simulated panel with truth channels");
  }
  if (weeks.size() != forced_discounts.size()) {
    fail(ErrorKind::length_mismatch, "weeks and forced discounts differ in length");
  }
  const std::size_t index = panel.index_of(article_id);
  const ArticleStatic& article = panel.statics[index];
  std::vector<double> out(weeks.size());
  for (std::size_t k = 0; k < weeks.size(); ++k) {
    const double d = forced_discounts[k];
    if (!(d >= 0.0 && d < 1.0)) {
      fail(ErrorKind::domain, "forced discount " + std::to_string(d) + " outside [0, 1)");
    }
    const SeriesPoint& point = panel.at(index, weeks[k]);
    if (d == point.discount) {
      out[k] = point.demand;
    } else {
      out[k] = demand(point.base_demand, article.base_price * (1.0 - d), article.effect);
    }
  }
  return out;
}

}  // namespace elastic_dml
