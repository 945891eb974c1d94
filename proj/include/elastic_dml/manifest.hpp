#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace elastic_dml {

std::string sha256_hex(const std::string& bytes);
/// Throws ErrorKind::io when the file cannot be read.
std::string file_sha256(const std::filesystem::path& path);
/// SHA-256 of the compact JSON dump; keys are sorted, so the hash does not
/// depend on insertion order.
std::string config_hash(const nlohmann::json& config);

struct InputDigest {
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<InputDigest> inputs;
  double duration_seconds = 0.0;

  void add_input(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  /// Writes manifest.json into `dir`.
  void write(const std::filesystem::path& dir) const;
};

std::string tool_version();

}  // namespace elastic_dml
