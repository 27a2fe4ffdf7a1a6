#include "switchboard/report.hpp"

#include "switchboard/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>

namespace switchboard::report {
namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

nlohmann::ordered_json cell_json(const Cell& c) {
  struct V {
    nlohmann::ordered_json operator()(std::monostate) const { return nullptr; }
    nlohmann::ordered_json operator()(std::int64_t v) const { return v; }
    nlohmann::ordered_json operator()(double v) const {
      if (!std::isfinite(v)) return nullptr;
      return v;
    }
    nlohmann::ordered_json operator()(const std::string& v) const { return v; }
    nlohmann::ordered_json operator()(bool v) const { return v; }
  };
  return std::visit(V{}, c);
}

std::string markdown_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += "\\|";
    else if (c == '\n') out += "\\n";
    else out += c;
  }
  return out;
}

std::string json_cell_text(const nlohmann::ordered_json& j) {
  if (j.is_null()) return "-";
  if (j.is_string()) return markdown_escape(j.get<std::string>());
  if (j.is_boolean()) return j.get<bool>() ? "yes" : "no";
  if (j.is_number_integer()) return std::to_string(j.get<std::int64_t>());
  return format_cell(j.get<double>());
}

std::string markdown_of(const nlohmann::ordered_json& j) {
  std::string out = fmt::format("## {} ({})\n\n", j.at("title").get<std::string>(), j.at("name").get<std::string>());
  const auto& cols = j.at("columns");
  out += "|";
  for (const auto& c : cols) out += " " + markdown_escape(c.get<std::string>()) + " |";
  out += "\n|";
  for (std::size_t i = 0; i < cols.size(); ++i) out += " --- |";
  out += "\n";
  for (const auto& row : j.at("rows")) {
    out += "|";
    for (const auto& col : cols) out += " " + json_cell_text(row.at(col.get<std::string>())) + " |";
    out += "\n";
  }
  const auto& sm = j.at("summary");
  if (!sm.empty()) {
    out += "\n";
    for (auto it = sm.begin(); it != sm.end(); ++it) {
      out += fmt::format("- {}: {}\n", it.key(), it.value().is_number_float() ? format_cell(it.value().get<double>())
                                                  : it.value().is_string() ? it.value().get<std::string>()
                                                                          : it.value().dump());
    }
  }
  if (!j.at("checks").empty()) {
    out += "\n";
    for (const auto& c : j.at("checks")) {
      out += fmt::format("- [{}] criterion {}: {}\n", c.at("pass").get<bool>() ? "PASS" : "FAIL",
                         c.at("criterion").get<std::string>(), c.at("description").get<std::string>());
    }
  } else if (!j.at("checks_applicable").get<bool>()) {
    out += "\nPinned expectations apply to GPT-2 Small only; not checked for this model.\n";
  }
  const auto& p = j.at("provenance");
  out += "\nProvenance:";
  for (auto it = p.begin(); it != p.end(); ++it) {
    out += fmt::format(" {}={}", it.key(), it.value().is_string() ? it.value().get<std::string>() : it.value().dump());
  }
  return out + "\n";
}

}  // namespace

std::string format_cell(const Cell& c) {
  struct V {
    std::string operator()(std::monostate) const { return ""; }
    std::string operator()(std::int64_t v) const { return std::to_string(v); }
    std::string operator()(double v) const {
      if (std::isnan(v)) return "nan";
      if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
      return fmt::format("{:.6g}", v);
    }
    std::string operator()(const std::string& v) const { return v; }
    std::string operator()(bool v) const { return v ? "true" : "false"; }
  };
  return std::visit(V{}, c);
}

void ReportTable::add_row(std::vector<Cell> row) {
  if (row.size() != columns.size()) {
    throw InvalidArgument(fmt::format("table {}: row has {} cells for {} columns", name, row.size(), columns.size()));
  }
  rows.push_back(std::move(row));
}

void ReportTable::check(std::string id, std::string description, bool pass) {
  checks.push_back({std::move(id), std::move(description), pass});
}

bool ReportTable::passed() const {
  for (const auto& c : checks) {
    if (!c.pass) return false;
  }
  return true;
}

std::string ReportTable::to_csv() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + csv_escape(columns[i]);
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_escape(format_cell(row[i]));
    out += "\n";
  }
  return out;
}

nlohmann::ordered_json ReportTable::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["title"] = title;
  j["columns"] = columns;
  auto rs = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json r = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < row.size(); ++i) r[columns[i]] = cell_json(row[i]);
    rs.push_back(std::move(r));
  }
  j["rows"] = std::move(rs);
  j["summary"] = summary;
  auto cs = nlohmann::ordered_json::array();
  for (const auto& c : checks) {
    cs.push_back({{"criterion", c.id}, {"description", c.description}, {"pass", c.pass}});
  }
  j["checks"] = std::move(cs);
  j["checks_applicable"] = checks_applicable;
  j["provenance"] = provenance;
  return j;
}

std::string ReportTable::to_markdown() const { return markdown_of(to_json()); }

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out.flush()) throw Error(fmt::format("cannot write {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

void ReportTable::write(const std::filesystem::path& dir) const {
  write_text_atomic(dir / (name + ".csv"), to_csv());
  write_text_atomic(dir / (name + ".json"), to_json().dump(2) + "\n");
  write_text_atomic(dir / (name + ".md"), to_markdown());
}

void write_consolidated(const std::filesystem::path& dir, const std::vector<std::string>& names) {
  std::string out = "# switchboard report\n";
  for (const auto& n : names) {
    const auto p = dir / (n + ".json");
    if (!std::filesystem::exists(p)) continue;
    std::ifstream in(p);
    out += "\n" + markdown_of(nlohmann::ordered_json::parse(in));
  }
  write_text_atomic(dir / "report.md", out);
}

}  // namespace switchboard::report
