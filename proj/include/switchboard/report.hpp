#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace switchboard::report {

// Empty cells render as "" in CSV, "-" in markdown and null in JSON.
using Cell = std::variant<std::monostate, std::int64_t, double, std::string, bool>;

struct Check {
  std::string id;  // acceptance criterion it belongs to, e.g. "7"
  std::string description;
  bool pass = false;
};

struct ReportTable {
  std::string name;
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();  // table-level scalars
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();
  std::vector<Check> checks;
  bool checks_applicable = true;  // false when the run is not the reference model

  // Throws InvalidArgument when the row width disagrees with the columns.
  void add_row(std::vector<Cell> row);
  void check(std::string id, std::string description, bool pass);
  bool passed() const;

  std::string to_csv() const;
  nlohmann::ordered_json to_json() const;
  std::string to_markdown() const;
  // Writes <name>.csv, <name>.json and <name>.md, each via a temporary file.
  void write(const std::filesystem::path& dir) const;
};

// Fixed formatting shared by CSV and markdown: 6 significant digits.
std::string format_cell(const Cell& c);

// Rewrites report.md in `dir` from every <name>.json found there, in the
// order of `names`.
void write_consolidated(const std::filesystem::path& dir, const std::vector<std::string>& names);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace switchboard::report
