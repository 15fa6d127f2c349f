#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dflex::csv {

/// RFC-4180 table with a header row.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of `name` in the header; throws MissingColumn if absent.
  [[nodiscard]] std::size_t column(std::string_view name, std::string_view source = {}) const;
};

Table parse(std::string_view text, std::string_view source = {});
Table read_file(const std::filesystem::path& path);

std::string escape(std::string_view field);
std::string join_row(const std::vector<std::string>& fields);

/// Shortest representation that parses back to the same double.
std::string format_double(double value);

/// Strict parse of a whole field; throws InvariantViolation naming source/row/column.
double parse_double(std::string_view field, std::string_view context);

void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace dflex::csv
