#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "elastic_dml/sim.hpp"

namespace elastic_dml {

nlohmann::json to_json(const SimConfig& config);
/// Missing fields keep their defaults; unknown fields and type mismatches
/// throw ErrorKind::config naming the field.
SimConfig sim_config_from_json(const nlohmann::json& j);

std::string panel_csv(const Panel& panel);
std::string statics_csv(const Panel& panel);
/// Throws ErrorKind::unsupported for external panels.
std::string truth_csv(const Panel& panel);

/// Writes panel.csv, statics.csv, truth.csv (simulated panels) and, when a
/// config is given, sim_config.json into `dir`.
void write_panel(const Panel& panel, const std::filesystem::path& dir,
                 const std::optional<SimConfig>& config = std::nullopt);

struct PanelFiles {
  std::filesystem::path panel;
  std::filesystem::path statics;
  std::optional<std::filesystem::path> truth;
  std::optional<std::filesystem::path> config;

  /// Conventional file names inside a directory; truth/config only if present.
  static PanelFiles in_directory(const std::filesystem::path& dir);
};

/// Loads a panel; it is marked simulated only when a truth file is given.
Panel load_panel(const PanelFiles& files);

}  // namespace elastic_dml
