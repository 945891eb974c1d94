#pragma once

// Encoders turning a panel position (article, forecast origin) into network
// inputs. The origin t is the first forecast week; lags cover t-L .. t-1.

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "elastic_dml/sim.hpp"

namespace elastic_dml {

struct FeatureSpec {
  int window = 16;
  int horizon = 5;
  int n_cat_d = 45;
  int n_cat_k = 15;
  int season_period = 30;
  int n_weeks = 100;
  bool include_future_discount = false;
  /// Category one-hot blocks. Off for the outcome/treatment inputs: with ten
  /// articles per cat_d they mostly let the nets memorize categories.
  bool outcome_onehots = false;
  bool effect_onehots = true;

  /// 3L lag block, origin stock coverage, sin/cos phase, week index,
  /// optional one-hots, log black price, promo, optional future discount.
  int outcome_dim() const;
  /// Optional one-hots, log black price, promo, and a five-value lag summary.
  int effect_dim() const;

  void validate() const;
  nlohmann::json to_json() const;
  static FeatureSpec from_json(const nlohmann::json& j);
  /// Spec matching a panel's category counts and calendar.
  static FeatureSpec for_panel(const Panel& panel, int window = 16, int horizon = 5);
  /// This spec with the panel's category counts and calendar.
  FeatureSpec adapted_to(const Panel& panel, int window, int horizon) const;
};

/// Throws ErrorKind::window when the lag window or horizon does not fit the
/// article's series. When the FeatureSpec includes the future discount and
/// `future_discounts` is empty, the logged discounts are used; the feature
/// is their mean over the horizon.
std::vector<double> build_features(const Panel& panel, std::size_t index, int origin,
                                   const FeatureSpec& spec,
                                   std::span<const double> future_discounts = {});

std::vector<double> build_effect_features(const Panel& panel, std::size_t index, int origin,
                                          const FeatureSpec& spec);

}  // namespace elastic_dml
