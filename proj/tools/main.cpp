#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "elastic_dml/csv.hpp"
#include "elastic_dml/dml.hpp"
#include "elastic_dml/econ.hpp"
#include "elastic_dml/error.hpp"
#include "elastic_dml/eval.hpp"
#include "elastic_dml/manifest.hpp"
#include "elastic_dml/panel_io.hpp"
#include "elastic_dml/sim.hpp"

namespace fs = std::filesystem;
using namespace elastic_dml;

namespace {

using Clock = std::chrono::steady_clock;

nlohmann::json read_json_file(const fs::path& path, ErrorKind kind) {
  try {
    return nlohmann::json::parse(csv::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    fail(kind, path.string() + ": " + e.what());
  }
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct PanelArgs {
  std::string panel;
  std::string statics;
  std::string truth;
  std::string sim_config;

  void add(CLI::App* cmd) {
    cmd->add_option("--panel", panel, "panel.csv, or a directory holding the panel files")->required();
    cmd->add_option("--statics", statics, "statics.csv (defaults to the panel's directory)");
    cmd->add_option("--truth", truth, "truth.csv (optional)");
  }

  PanelFiles files() const {
    PanelFiles f;
    const fs::path p(panel);
    if (fs::is_directory(p)) {
      f = PanelFiles::in_directory(p);
    } else {
      f.panel = p;
      f.statics = p.parent_path() / "statics.csv";
      if (fs::exists(p.parent_path() / "truth.csv")) f.truth = p.parent_path() / "truth.csv";
      if (fs::exists(p.parent_path() / "sim_config.json")) f.config = p.parent_path() / "sim_config.json";
    }
    if (!statics.empty()) f.statics = statics;
    if (!truth.empty()) f.truth = fs::path(truth);
    return f;
  }

  void record(RunManifest& m, const PanelFiles& f) const {
    m.add_input(f.panel);
    m.add_input(f.statics);
    if (f.truth) m.add_input(*f.truth);
  }
};

int cmd_simulate(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed) {
  const auto start = Clock::now();
  SimConfig config;
  RunManifest manifest;
  manifest.command = "simulate";
  if (!config_path.empty()) {
    config = sim_config_from_json(read_json_file(config_path, ErrorKind::config));
    manifest.add_input(config_path);
  }
  if (seed) config.master_seed = *seed;
  config.validate();
  const Panel panel = simulate_policy(config);
  write_panel(panel, out, config);
  manifest.config = to_json(config);
  manifest.seed = config.master_seed;
  manifest.duration_seconds = seconds_since(start);
  manifest.write(out);
  std::printf("simulated %zu articles x %d weeks into %s\n", panel.size(), panel.n_weeks, out.c_str());
  return 0;
}

struct TrainArgs {
  PanelArgs panel;
  std::string model = "dml";
  std::string head = "elastic";
  std::string loss = "l1";
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
  int window_start = -1;
  int window_end = -1;
  int horizon = 5;
  bool by_category = false;
};

int cmd_train(const TrainArgs& a) {
  const auto start = Clock::now();
  const PanelFiles files = a.panel.files();
  const Panel panel = load_panel(files);
  RunManifest manifest;
  manifest.command = "train";
  manifest.seed = a.seed;
  a.panel.record(manifest, files);

  dml::Window window{a.window_start < 0 ? 0 : a.window_start, a.window_end < 0 ? panel.n_weeks : a.window_end};
  if (window.end <= window.start) fail(ErrorKind::config, "--window-end must exceed --window-start");

  dml::DmlConfig config;
  if (!a.config.empty()) {
    config = dml::DmlConfig::from_json(read_json_file(a.config, ErrorKind::config));
    manifest.add_input(a.config);
  }
  config.head = dml::head_from_string(a.head);
  config.effect_train.loss = nnet::loss_from_string(a.loss);
  config.seed = a.seed;
  config.features = config.features.adapted_to(panel, config.features.window, a.horizon);

  const fs::path out(a.out);
  nlohmann::json model_config = config.to_json();
  if (a.model == "tf") {
    dml::save_model(dml::fit_tf_baseline(panel, window, config), out);
  } else if (a.model == "twfe") {
    const auto fit = econ::twfe_poisson_fit(panel, window.start, window.end);
    nlohmann::json j = fit.to_json();
    if (a.by_category) {
      nlohmann::json groups = nlohmann::json::object();
      for (const auto& [k, g] : econ::twfe_fit_by_category(panel, window.start, window.end)) {
        groups[std::to_string(k)] = {{"epsilon", g.fit.epsilon},
                                     {"convergence", {{"status", econ::to_string(g.fit.status)},
                                                      {"iterations", g.fit.iterations},
                                                      {"gradient_norm", g.fit.gradient_norm}}}};
      }
      j["groups_cat_k"] = groups;
    }
    csv::write_text(out / "twfe_fit.json", j.dump(2) + "\n");
    csv::write_text(out / "model.json",
                    nlohmann::json{{"format", "elastic_dml.model"}, {"version", 1}, {"kind", "twfe"},
                                   {"epsilon", fit.fit.epsilon}, {"window", {window.start, window.end}},
                                   {"horizon", a.horizon}}
                            .dump(2) + "\n");
    model_config = {{"window", {window.start, window.end}}, {"by_category", a.by_category}};
  } else if (a.model == "naive") {
    csv::write_text(out / "model.json",
                    nlohmann::json{{"format", "elastic_dml.model"}, {"version", 1}, {"kind", "naive"},
                                   {"naive", "last_value"}, {"horizon", a.horizon}}
                            .dump(2) + "\n");
    model_config = {{"naive", "last_value"}};
  } else {
    const dml::Variant v = dml::variant_from_string(a.model);
    dml::save_model(dml::fit(panel, window, config, v), out);
  }
  manifest.config = {{"model", a.model}, {"window", {window.start, window.end}}, {"settings", model_config}};
  manifest.duration_seconds = seconds_since(start);
  manifest.write(out);
  std::printf("trained %s on weeks [%d, %d) into %s\n", a.model.c_str(), window.start, window.end, a.out.c_str());
  return 0;
}

struct ForecastArgs {
  PanelArgs panel;
  std::string model_dir;
  int origin = -1;
  std::optional<double> discount;
  std::string mode = "ensemble";
  std::string out;
};

int cmd_forecast(const ForecastArgs& a) {
  const auto start = Clock::now();
  const PanelFiles files = a.panel.files();
  const Panel panel = load_panel(files);
  const fs::path dir(a.model_dir);
  const auto meta = read_json_file(dir / "model.json", ErrorKind::schema);
  const std::string kind = meta.value("kind", "");

  dml::ForecastRequest request;
  request.origin = a.origin;
  request.mode = dml::mode_from_string(a.mode);
  std::string label = kind;
  dml::Forecast f;
  auto scenario = [&](int h) {
    request.horizon = h;
    request.scenario = a.discount ? dml::DiscountScenario::constant(*a.discount, h) : dml::DiscountScenario::logged_policy();
    request.validate();
  };
  if (kind == "dml") {
    const auto model = dml::load_model(dir);
    scenario(model.features.horizon);
    f = dml::predict(model, panel, request);
    label = dml::to_string(model.variant);
  } else if (kind == "tf") {
    const auto model = dml::load_tf_model(dir);
    scenario(model.features.horizon);
    f = dml::predict_tf(model, panel, request);
  } else if (kind == "twfe" || kind == "naive") {
    scenario(meta.at("horizon").get<int>());
    f.q_hat.resize(request.horizon, static_cast<Eigen::Index>(panel.size()));
    for (std::size_t i = 0; i < panel.size(); ++i) {
      const auto id = panel.statics[i].article_id;
      f.article_ids.push_back(id);
      std::vector<double> q;
      if (kind == "naive") {
        q = econ::naive_forecasts(panel, id, request.origin, request.horizon, econ::NaiveKind::last_value);
      } else {
        std::vector<double> d = request.scenario.forced;
        if (request.scenario.logged) {
          for (int k = 0; k < request.horizon; ++k) d.push_back(panel.at(i, request.origin + k).discount);
        }
        q = econ::twfe_forecast_path(panel, meta.at("epsilon").get<double>(), id, request.origin, d);
      }
      for (int k = 0; k < request.horizon; ++k) f.q_hat(k, static_cast<Eigen::Index>(i)) = q[static_cast<std::size_t>(k)];
    }
  } else {
    fail(ErrorKind::schema, "model.json has unknown kind '" + kind + "'");
  }

  std::string text = "article_id,week,model,q_hat\n";
  for (std::size_t i = 0; i < f.article_ids.size(); ++i) {
    for (int k = 0; k < request.horizon; ++k) {
      text += std::to_string(f.article_ids[i]) + "," + std::to_string(request.origin + k) + "," + label + "," +
              csv::format_real(f.q_hat(k, static_cast<Eigen::Index>(i))) + "\n";
    }
  }
  const fs::path out(a.out);
  csv::write_text(out, text);
  RunManifest manifest;
  manifest.command = "forecast";
  manifest.config = {{"model", a.model_dir}, {"origin", a.origin}, {"mode", a.mode},
                     {"discount", a.discount ? nlohmann::json(*a.discount) : nlohmann::json("logged")}};
  a.panel.record(manifest, files);
  manifest.add_input(dir / "model.json");
  manifest.duration_seconds = seconds_since(start);
  const fs::path manifest_dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
  csv::write_text(manifest_dir / (out.stem().string() + ".manifest.json"), manifest.to_json().dump(2) + "\n");
  return 0;
}

int cmd_evaluate(const std::string& protocol_path, const std::string& out) {
  const auto start = Clock::now();
  RunManifest manifest;
  manifest.command = "evaluate";
  const fs::path proto_file(protocol_path);
  const auto j = read_json_file(proto_file, ErrorKind::config);
  manifest.add_input(proto_file);
  const eval::ProtocolConfig config = eval::ProtocolConfig::from_json(j);

  Panel panel;
  nlohmann::json panel_ref;
  if (j.contains("panel")) {
    fs::path dir = j.at("panel").get<std::string>();
    if (dir.is_relative()) dir = proto_file.parent_path() / dir;
    const PanelFiles files = PanelFiles::in_directory(dir);
    if (!files.truth) fail(ErrorKind::schema, "evaluation needs truth.csv next to the panel");
    panel = load_panel(files);
    manifest.add_input(files.panel);
    manifest.add_input(files.statics);
    manifest.add_input(*files.truth);
    panel_ref = dir.generic_string();
  } else {
    SimConfig sc;
    if (j.contains("sim_config")) sc = sim_config_from_json(j.at("sim_config"));
    sc.validate();
    panel = simulate_policy(sc);
    panel_ref = to_json(sc);
  }
  const eval::EvalReport report = eval::run_protocol(panel, config);
  report.write(out);
  manifest.config = config.to_json();
  manifest.config["panel"] = panel_ref;
  manifest.seed = config.base_seed;
  manifest.duration_seconds = seconds_since(start);
  manifest.write(out);
  std::printf("%zu metric rows written to %s\n", report.rows.size(), out.c_str());
  return 0;
}

int cmd_report(const std::string& metrics, const std::string& out) {
  const auto rows = eval::read_metrics(metrics);
  csv::write_text(fs::path(out) / "report.csv", eval::report_csv(eval::aggregate(rows)));
  csv::write_text(fs::path(out) / "summary.csv", eval::report_csv(eval::pool_windows(rows)));
  std::printf("aggregated %zu rows into %s\n", rows.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Demand forecasting with double machine learning"};
  app.require_subcommand(1);
  int n_workers = 0;
  app.add_option("--workers", n_workers, "worker threads (default: available cores)")->check(CLI::PositiveNumber);

  std::string sim_config;
  std::string sim_out;
  std::optional<std::uint64_t> sim_seed;
  auto* simulate = app.add_subcommand("simulate", "simulate a panel under the pricing policy");
  simulate->add_option("--config", sim_config, "simulation config JSON");
  simulate->add_option("--out", sim_out, "output directory")->required();
  simulate->add_option("--seed", sim_seed, "overrides master_seed");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model on a panel");
  train_args.panel.add(train);
  train->add_option("--model", train_args.model)
      ->check(CLI::IsMember({"dml", "dml-nocf", "sdml", "sdml-nocf", "dml-ss", "tf", "twfe", "naive"}));
  train->add_option("--head", train_args.head)->check(CLI::IsMember({"elastic", "linear"}));
  train->add_option("--loss", train_args.loss, "effect-stage loss")->check(CLI::IsMember({"l1", "l2"}));
  train->add_option("--seed", train_args.seed);
  train->add_option("--out", train_args.out, "model directory")->required();
  train->add_option("--config", train_args.config, "model config JSON");
  train->add_option("--window-start", train_args.window_start, "first training week");
  train->add_option("--window-end", train_args.window_end, "one past the last training week");
  train->add_option("--horizon", train_args.horizon)->check(CLI::PositiveNumber);
  train->add_flag("--by-category", train_args.by_category, "twfe: also fit one elasticity per cat_k");

  ForecastArgs fc_args;
  auto* forecast = app.add_subcommand("forecast", "forecast with a trained model");
  fc_args.panel.add(forecast);
  forecast->add_option("--model", fc_args.model_dir, "model directory")->required();
  forecast->add_option("--origin", fc_args.origin, "first forecast week")->required();
  forecast->add_option("--discount", fc_args.discount, "constant forced discount (default: logged policy)");
  forecast->add_option("--mode", fc_args.mode)->check(CLI::IsMember({"cross_fit", "forecast", "ensemble"}));
  forecast->add_option("--out", fc_args.out, "forecast CSV")->required();

  std::string protocol;
  std::string eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "run the evaluation protocol");
  evaluate->add_option("--protocol", protocol, "protocol JSON")->required();
  evaluate->add_option("--out", eval_out, "output directory")->required();

  std::string metrics;
  std::string report_out;
  auto* report = app.add_subcommand("report", "aggregate a metrics.csv");
  report->add_option("--metrics", metrics)->required();
  report->add_option("--out", report_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    set_workers(n_workers);
    if (*simulate) return cmd_simulate(sim_config, sim_out, sim_seed);
    if (*train) return cmd_train(train_args);
    if (*forecast) return cmd_forecast(fc_args);
    if (*evaluate) return cmd_evaluate(protocol, eval_out);
    if (*report) return cmd_report(metrics, report_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error [io-error]: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 2;
}
