// Minimal CSV reading/writing with round-trip exact number formatting.
#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace flowfilter {

/// Shortest-safe decimal form: 17 significant digits, so parsing it back
/// yields the identical double.
std::string format_double(double v);

/// Parses a full field as a double; throws Error(io_error) on junk.
double parse_double(std::string_view field);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws Error(io_error) when absent.
  std::size_t column(std::string_view name) const;
};

void write_csv(std::ostream& os, const CsvTable& table);
CsvTable read_csv(std::istream& is);

void write_csv_file(const std::string& path, const CsvTable& table);
CsvTable read_csv_file(const std::string& path);

}  // namespace flowfilter
