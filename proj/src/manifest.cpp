#include "elastic_dml/manifest.hpp"

#include <array>
#include <cstdio>

#include <openssl/evp.h>

#include "elastic_dml/csv.hpp"
#include "elastic_dml/error.hpp"

#ifndef ELASTIC_DML_VERSION
#define ELASTIC_DML_VERSION "0.0.0"
#endif

namespace elastic_dml {

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::io, "SHA-256 computation failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(csv::read_text(path)); }

std::string config_hash(const nlohmann::json& config) { return sha256_hex(config.dump()); }

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs.push_back({path.generic_string(), file_sha256(path)});
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json in = nlohmann::json::array();
  for (const auto& d : inputs) in.push_back({{"path", d.path}, {"sha256", d.sha256}});
  return {{"command", command},
          {"config", config},
          {"config_hash", config_hash(config)},
          {"seed", seed},
          {"inputs", in},
          {"tool_version", tool_version()},
          {"duration_seconds", duration_seconds}};
}

void RunManifest::write(const std::filesystem::path& dir) const {
  csv::write_text(dir / "manifest.json", to_json().dump(2) + "\n");
}

std::string tool_version() { return ELASTIC_DML_VERSION; }

}  // namespace elastic_dml
