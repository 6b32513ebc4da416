// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace qcomm {

/// RFC 4180 style table: fields containing a comma, quote or newline are quoted.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  bool operator==(const CsvTable&) const = default;
};

std::string write_csv(const CsvTable& table);
CsvTable parse_csv(std::string_view text);

void save_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable load_csv(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace qcomm
