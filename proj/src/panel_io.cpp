#include "elastic_dml/panel_io.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "elastic_dml/csv.hpp"
#include "elastic_dml/error.hpp"

namespace elastic_dml {

namespace {

template <class Config, class F>
void for_each_field(Config& c, F&& f) {
  f("n_articles", c.n_articles);
  f("n_weeks", c.n_weeks);
  f("n_cat_d", c.n_cat_d);
  f("n_cat_k", c.n_cat_k);
  f("season_period", c.season_period);
  f("n_season_types", c.n_season_types);
  f("discount_steps", c.discount_steps);
  f("discount_step_size", c.discount_step_size);
  f("target_avg_discount", c.target_avg_discount);
  f("master_seed", c.master_seed);
  f("alpha_mean", c.alpha_mean);
  f("alpha_sd", c.alpha_sd);
  f("beta_mean", c.beta_mean);
  f("beta_sd", c.beta_sd);
  f("alpha_noise_sd", c.alpha_noise_sd);
  f("beta_noise_sd", c.beta_noise_sd);
  f("gamma_max", c.gamma_max);
  f("sigma_tau_max", c.sigma_tau_max);
  f("trend_weight", c.trend_weight);
  f("season_weight", c.season_weight);
  f("a_sq_coef", c.a_sq_coef);
  f("a_coef", c.a_coef);
  f("b_coef", c.b_coef);
  f("effect_floor", c.effect_floor);
  f("effect_log_mean", c.effect_log_mean);
  f("effect_log_sd", c.effect_log_sd);
  f("effect_scale", c.effect_scale);
  f("price_mean_div", c.price_mean_div);
  f("price_sd_div", c.price_sd_div);
  f("price_floor_frac", c.price_floor_frac);
  f("season_shift_max", c.season_shift_max);
  f("promo_prob", c.promo_prob);
  f("max_negative_fraction", c.max_negative_fraction);
  f("max_article_attempts", c.max_article_attempts);
}

template <class T>
void read_field(const nlohmann::json& j, const char* name, T& value) {
  const auto it = j.find(name);
  if (it == j.end()) return;
  const auto& v = *it;
  if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) fail(ErrorKind::config, std::string("sim config field '") + name + "': expected a number");
    value = v.get<T>();
  } else if constexpr (std::is_unsigned_v<T>) {
    if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
      fail(ErrorKind::config, std::string("sim config field '") + name + "': must be >= 1");
    }
    if (!v.is_number_unsigned()) {
      fail(ErrorKind::config, std::string("sim config field '") + name + "': expected a non-negative integer");
    }
    value = v.get<T>();
  } else {
    if (!v.is_number_integer()) fail(ErrorKind::config, std::string("sim config field '") + name + "': expected an integer");
    value = v.get<T>();
  }
}

}  // namespace

nlohmann::json to_json(const SimConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  SimConfig copy = config;
  for_each_field(copy, [&](const char* name, auto& value) { j[name] = value; });
  return j;
}

SimConfig sim_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::config, "sim config must be a JSON object");
  SimConfig config;
  std::set<std::string> known;
  for_each_field(config, [&](const char* name, auto& value) {
    known.insert(name);
    read_field(j, name, value);
  });
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) fail(ErrorKind::config, "sim config field '" + key + "': unknown field");
  }
  return config;
}

std::string panel_csv(const Panel& panel) {
  std::ostringstream out;
  out << "article_id,week,demand,discount,stock,price\n";
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const auto id = panel.statics[i].article_id;
    for (const auto& p : panel.series[i]) {
      out << id << ',' << p.week << ',' << csv::format_real(p.demand) << ','
          << csv::format_real(p.discount) << ',' << csv::format_real(p.stock) << ','
          << csv::format_real(p.price) << '\n';
    }
  }
  return out.str();
}

std::string statics_csv(const Panel& panel) {
  std::ostringstream out;
  out << "article_id,cat_d,cat_k,season_shift,black_price,promo\n";
  for (const auto& a : panel.statics) {
    out << a.article_id << ',' << a.cat_d << ',' << a.cat_k << ',' << a.season_shift << ','
        << csv::format_real(a.base_price) << ',' << a.promo << '\n';
  }
  return out.str();
}

std::string truth_csv(const Panel& panel) {
  if (!panel.has_truth()) fail(ErrorKind::unsupported, "external panel has no truth channel");
  std::ostringstream out;
  out << "article_id,week,base_demand,effect\n";
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const auto& a = panel.statics[i];
    for (const auto& p : panel.series[i]) {
      out << a.article_id << ',' << p.week << ',' << csv::format_real(p.base_demand) << ','
          << csv::format_real(a.effect) << '\n';
    }
  }
  return out.str();
}

void write_panel(const Panel& panel, const std::filesystem::path& dir,
                 const std::optional<SimConfig>& config) {
  std::filesystem::create_directories(dir);
  csv::write_text(dir / "panel.csv", panel_csv(panel));
  csv::write_text(dir / "statics.csv", statics_csv(panel));
  if (panel.has_truth()) csv::write_text(dir / "truth.csv", truth_csv(panel));
  if (config) csv::write_text(dir / "sim_config.json", to_json(*config).dump(2) + "\n");
}

PanelFiles PanelFiles::in_directory(const std::filesystem::path& dir) {
  PanelFiles files;
  files.panel = dir / "panel.csv";
  files.statics = dir / "statics.csv";
  if (std::filesystem::exists(dir / "truth.csv")) files.truth = dir / "truth.csv";
  if (std::filesystem::exists(dir / "sim_config.json")) files.config = dir / "sim_config.json";
  return files;
}

Panel load_panel(const PanelFiles& files) {
  Panel panel;
  const auto statics = csv::read(files.statics, {"article_id", "cat_d", "cat_k", "season_shift", "black_price", "promo"});
  std::map<std::int64_t, std::size_t> index;
  int max_d = 1;
  int max_k = 1;
  for (const auto& row : statics.rows) {
    ArticleStatic a;
    a.article_id = csv::parse_int(row[0], "statics.article_id");
    a.cat_d = static_cast<int>(csv::parse_int(row[1], "statics.cat_d"));
    a.cat_k = static_cast<int>(csv::parse_int(row[2], "statics.cat_k"));
    a.season_shift = static_cast<int>(csv::parse_int(row[3], "statics.season_shift"));
    a.base_price = csv::parse_real(row[4], "statics.black_price");
    a.promo = static_cast<int>(csv::parse_int(row[5], "statics.promo"));
    if (a.cat_d < 1 || a.cat_k < 1) fail(ErrorKind::schema, "statics: categories are 1-based");
    if (!(a.base_price > 0.0)) fail(ErrorKind::schema, "statics: black_price must be > 0");
    if (index.contains(a.article_id)) {
      fail(ErrorKind::schema, "statics: duplicate article id " + std::to_string(a.article_id));
    }
    max_d = std::max(max_d, a.cat_d);
    max_k = std::max(max_k, a.cat_k);
    index[a.article_id] = panel.statics.size();
    panel.statics.push_back(a);
  }
  panel.series.resize(panel.statics.size());

  const auto rows = csv::read(files.panel, {"article_id", "week", "demand", "discount", "stock", "price"});
  for (const auto& row : rows.rows) {
    const auto id = csv::parse_int(row[0], "panel.article_id");
    const auto it = index.find(id);
    if (it == index.end()) fail(ErrorKind::schema, "panel: article " + std::to_string(id) + " missing from statics");
    SeriesPoint p;
    p.week = static_cast<int>(csv::parse_int(row[1], "panel.week"));
    p.demand = csv::parse_real(row[2], "panel.demand");
    p.discount = csv::parse_real(row[3], "panel.discount");
    p.stock = csv::parse_real(row[4], "panel.stock");
    p.price = csv::parse_real(row[5], "panel.price");
    if (!(p.demand >= 0.0) || !(p.discount >= 0.0 && p.discount < 1.0) || !(p.stock >= 0.0) || !(p.price > 0.0)) {
      fail(ErrorKind::schema, "panel: out-of-range value for article " + std::to_string(id) +
                                  " week " + std::to_string(p.week));
    }
    auto& s = panel.series[it->second];
    if (!s.empty() && p.week != s.back().week + 1) {
      fail(ErrorKind::schema, "panel: weeks of article " + std::to_string(id) + " are not contiguous");
    }
    s.push_back(p);
  }
  int max_week = 0;
  for (std::size_t i = 0; i < panel.size(); ++i) {
    if (panel.series[i].empty()) {
      fail(ErrorKind::schema, "panel: article " + std::to_string(panel.statics[i].article_id) + " has no rows");
    }
    max_week = std::max(max_week, panel.series[i].back().week + 1);
  }

  panel.n_cat_d = max_d;
  panel.n_cat_k = max_k;
  panel.n_weeks = max_week;
  if (files.config) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(csv::read_text(*files.config));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::schema, files.config->string() + ": " + e.what());
    }
    const SimConfig config = sim_config_from_json(j);
    panel.n_cat_d = config.n_cat_d;
    panel.n_cat_k = config.n_cat_k;
    panel.season_period = config.season_period;
    panel.n_weeks = config.n_weeks;
    panel.seed = config.master_seed;
  }
  if (max_d > panel.n_cat_d || max_k > panel.n_cat_k) {
    fail(ErrorKind::schema, "statics: category index exceeds configured category count");
  }

  if (files.truth) {
    const auto truth = csv::read(*files.truth, {"article_id", "week", "base_demand", "effect"});
    std::vector<std::size_t> seen(panel.size(), 0);
    for (const auto& row : truth.rows) {
      const auto id = csv::parse_int(row[0], "truth.article_id");
      const auto it = index.find(id);
      if (it == index.end()) fail(ErrorKind::schema, "truth: unknown article " + std::to_string(id));
      const int week = static_cast<int>(csv::parse_int(row[1], "truth.week"));
      if (!panel.has_week(it->second, week)) fail(ErrorKind::schema, "truth: week outside panel range");
      auto& s = panel.series[it->second];
      s[static_cast<std::size_t>(week - s.front().week)].base_demand = csv::parse_real(row[2], "truth.base_demand");
      panel.statics[it->second].effect = csv::parse_real(row[3], "truth.effect");
      ++seen[it->second];
    }
    for (std::size_t i = 0; i < panel.size(); ++i) {
      if (seen[i] != panel.series[i].size()) fail(ErrorKind::schema, "truth: incomplete truth channel");
    }
    panel.provenance = Provenance::simulated;
  }
  return panel;
}

}  // namespace elastic_dml
