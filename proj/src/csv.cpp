#include "armington/csv.hpp"
#include "armington/period.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>

namespace armington {

std::string_view trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.emplace_back(trim(text.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

CsvTable CsvTable::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return parse(in, path.string());
}

CsvTable CsvTable::parse(std::istream& in, std::string source) {
  CsvTable table;
  table.source_ = std::move(source);
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    auto fields = split(body, ',');
    if (!have_header) {
      table.header_ = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header_.size()) {
      throw InputError(table.source_ + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(table.header_.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    table.rows_.push_back(std::move(fields));
    table.lines_.push_back(lineno);
  }
  if (!have_header) throw InputError(table.source_ + ": missing header row");
  return table;
}

bool CsvTable::has_column(std::string_view name) const {
  for (const auto& h : header_)
    if (h == name) return true;
  return false;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i)
    if (header_[i] == name) return i;
  throw InputError(source_ + ": missing column '" + std::string(name) + "'");
}

std::string CsvTable::where(std::size_t row) const {
  return source_ + ":" + std::to_string(lines_.at(row));
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const auto& text = rows_[row][col];
  // strtod instead of from_chars: libstdc++ 11 lacks floating from_chars.
  char* end = nullptr;
  const double value = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size())
    throw InputError(where(row) + ": not a number: '" + text + "'");
  return value;
}

long long CsvTable::integer(std::size_t row, std::size_t col) const {
  const auto& text = rows_[row][col];
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw InputError(where(row) + ": not an integer: '" + text + "'");
  return value;
}

YearMonth YearMonth::parse(std::string_view text) {
  text = trim(text);
  int y = 0, m = 0;
  if (text.size() != 7 || text[4] != '-')
    throw std::invalid_argument("period must be YYYY-MM: '" + std::string(text) + "'");
  auto r1 = std::from_chars(text.data(), text.data() + 4, y);
  auto r2 = std::from_chars(text.data() + 5, text.data() + 7, m);
  if (r1.ec != std::errc{} || r2.ec != std::errc{} || r1.ptr != text.data() + 4 ||
      r2.ptr != text.data() + 7 || m < 1 || m > 12)
    throw std::invalid_argument("period must be YYYY-MM: '" + std::string(text) + "'");
  return YearMonth{y, m};
}

std::string YearMonth::str() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
  return buf;
}

}  // namespace armington
