#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace elastic_dml::csv {

/// Nine significant digits, '.' decimal, locale independent.
std::string format_real(double value);

std::vector<std::string> split(std::string_view line, char sep = ',');

double parse_real(std::string_view field, std::string_view context);
std::int64_t parse_int(std::string_view field, std::string_view context);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Reads a comma separated file; throws ErrorKind::schema on a header that
/// does not match `expected_header` or on ragged rows.
Table read(const std::filesystem::path& path, const std::vector<std::string>& expected_header);

void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

}  // namespace elastic_dml::csv
