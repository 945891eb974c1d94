#pragma once

// Synthetic article life cycles with a stock-clearance pricing policy that
// confounds discount with seasonal demand. The simulated panel carries the
// latent base demand and per-article effect so counterfactual demand can be
// answered exactly.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "elastic_dml/parallel.hpp"

namespace elastic_dml {

struct SimConfig {
  std::size_t n_articles = 450;
  int n_weeks = 100;
  int n_cat_d = 45;
  int n_cat_k = 15;
  int season_period = 30;
  int n_season_types = 6;
  int discount_steps = 6;
  double discount_step_size = 0.1;
  double target_avg_discount = 0.14;
  std::uint64_t master_seed = 42;

  // category-level draws
  double alpha_mean = 10.0;
  double alpha_sd = 3.0;
  double beta_mean = 300.0;
  double beta_sd = 50.0;
  // article-week noise
  double alpha_noise_sd = 1.0;
  double beta_noise_sd = 5.0;
  // trend
  double gamma_max = 0.02;
  double sigma_tau_max = 0.15;
  // base-demand weights
  double trend_weight = 0.15;
  double season_weight = 0.25;
  double a_sq_coef = 0.05;
  double a_coef = 0.25;
  double b_coef = 0.5;
  // treatment effect e_i = max(floor, LN(mu, sd^2)) * scale * mean(a)
  double effect_floor = 1.3;
  double effect_log_mean = 0.75;
  double effect_log_sd = 0.125;
  double effect_scale = 0.15;
  // base price p0 ~ N(qbar / mean_div, (qbar / sd_div)^2), p0 > floor_frac * qbar
  double price_mean_div = 3.0;
  double price_sd_div = 1.5;
  double price_floor_frac = 0.01;
  int season_shift_max = 15;
  double promo_prob = 0.5;
  // article rejection when pre-clamp demand is negative too often
  double max_negative_fraction = 0.05;
  int max_article_attempts = 500;

  int max_step() const { return discount_steps - 1; }
  double max_discount() const { return max_step() * discount_step_size; }
  /// Step index nearest the target average discount.
  int initial_step() const;
  /// Throws ErrorKind::config naming the offending field.
  void validate() const;
};

struct ArticleStatic {
  std::int64_t article_id = 0;
  int cat_d = 1;  // 1-based
  int cat_k = 1;  // 1-based
  int season_shift = 0;
  double alpha_d = 0.0;
  double beta_k = 0.0;
  double gamma = 0.0;
  double sigma_tau = 0.0;
  double effect_base = 0.0;  // e_b before scaling
  double effect = 0.0;       // e_i > 0, magnitude of dq/dp
  double base_price = 1.0;   // p0, the undiscounted ("black") price
  int promo = 0;
  double initial_stock = 0.0;
  double mean_a = 0.0;
  double mean_base_demand = 0.0;
  int attempt = 0;
};

struct SeriesPoint {
  int week = 0;
  double demand = 0.0;
  double discount = 0.0;
  double stock = 0.0;
  double price = 0.0;
  double base_demand = std::numeric_limits<double>::quiet_NaN();
};

enum class Provenance { simulated, external };

struct Panel {
  std::vector<ArticleStatic> statics;
  std::vector<std::vector<SeriesPoint>> series;
  Provenance provenance = Provenance::external;
  std::uint64_t seed = 0;
  int n_cat_d = 45;
  int n_cat_k = 15;
  int season_period = 30;
  int n_weeks = 100;
  std::size_t clamp_events = 0;

  std::size_t size() const { return statics.size(); }
  bool has_truth() const { return provenance == Provenance::simulated; }
  /// Position of an article id; throws ErrorKind::inference if unknown.
  std::size_t index_of(std::int64_t article_id) const;
  /// Row of the given article at the given week; throws ErrorKind::history.
  const SeriesPoint& at(std::size_t index, int week) const;
  bool has_week(std::size_t index, int week) const;
  std::size_t row_count() const;
};

/// Per-(article, week) noise realization driving base demand.
struct WeekNoise {
  double alpha_noise = 0.0;  // epsilon_it
  double beta_noise = 0.0;   // psi_it
  double trend_noise = 0.0;  // standard normal; tau = t*gamma + sigma_tau*z
};

struct CategoryTable {
  std::vector<double> alpha;        // indexed cat_d - 1
  std::vector<double> beta;         // indexed cat_k - 1
  std::vector<int> shift_by_group;  // indexed season group
  std::vector<int> group_of_k;      // indexed cat_k - 1
};

CategoryTable draw_categories(const SimConfig& config);

/// Contiguous split of the k-categories into season groups, sizes as even as
/// possible with larger groups first (15 into 6 gives 3,3,3,2,2,2).
std::vector<int> season_groups(int n_cat_k, int n_groups);

WeekNoise draw_week_noise(const SimConfig& config, std::int64_t article_id, int attempt, int week);

double seasonal_component(const SimConfig& config, const ArticleStatic& article, int week);

/// q_b = (w_tau * tau + w_s * s + 1) * c, c = 0.05 a^2 + 0.25 a + 0.5 b.
double base_demand(const SimConfig& config, const ArticleStatic& article, int week,
                   const WeekNoise& noise);

/// Draws the static parameters of one article (one rejection attempt).
ArticleStatic sample_article(const SimConfig& config, const CategoryTable& categories,
                             std::int64_t article_id, int attempt = 0);

/// Demand before the zero clamp: q_b - price * e.
inline double raw_demand(double base, double price, double effect) { return base - price * effect; }
inline double demand(double base, double price, double effect) {
  const double q = raw_demand(base, price, effect);
  return q > 0.0 ? q : 0.0;
}

/// Stock coverage w_t = (4 z / sum(last4)) / (n_weeks - t); +inf when the
/// trailing demand is zero and stock remains.
double stock_coverage(double stock, std::span<const double> last4_demand, int week, int n_weeks);

int update_discount_step(int previous_step, double coverage, double lambda, int max_step = 5);

struct ArticleRun {
  ArticleStatic statics;
  std::vector<SeriesPoint> series;
  std::size_t negative_weeks = 0;
};

/// Runs the pricing policy for one article with the given static draw.
ArticleRun run_policy(const SimConfig& config, const ArticleStatic& article);

/// Samples and simulates one article, resampling while the negative-demand
/// fraction exceeds the configured limit.
ArticleRun simulate_article(const SimConfig& config, const CategoryTable& categories,
                            std::int64_t article_id);

Panel simulate_policy(const SimConfig& config, Exec exec = Exec::parallel);

/// Demand under forced discounts, reusing the logged base-demand realization.
std::vector<double> counterfactual_demand(const Panel& panel, std::int64_t article_id,
                                          std::span<const int> weeks,
                                          std::span<const double> forced_discounts);

}  // namespace elastic_dml
