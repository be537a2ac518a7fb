#pragma once

#include <string>
#include <vector>

namespace mmreg::csv {

// Minimal CSV support for the manifest/landmark/result formats: UTF-8,
// comma-separated, double quotes escape fields containing commas or quotes.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by header name, -1 if absent.
  int column(const std::string& name) const;
};

std::vector<std::string> split_line(const std::string& line);
std::string join_line(const std::vector<std::string>& fields);

// Reads a whole CSV file; first line is the header. Throws DataError on a
// missing file. Blank lines are skipped.
Table read_file(const std::string& path);

void write_file(const std::string& path, const Table& table);

}  // namespace mmreg::csv
