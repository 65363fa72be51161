#pragma once

// Minimal CSV emission/ingestion. Doubles are printed with 17 significant
// digits so tables round-trip and are byte-stable across runs.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "kc/error.hpp"

namespace kc::csv {

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string str() const {
    std::string out = join(header) + '\n';
    for (const auto& r : rows) out += join(r) + '\n';
    return out;
  }
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) {
    while (!cur.empty() && (cur.back() == '\r' || cur.back() == ' ')) cur.pop_back();
    std::size_t s = 0;
    while (s < cur.size() && cur[s] == ' ') ++s;
    cells.push_back(cur.substr(s));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline Table read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("io", "cannot open " + path);
  Table t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw ValidationError("csv", path + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                                         std::to_string(cells.size()) + " cells, header has " +
                                         std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw ValidationError("csv", path + ": empty file");
  return t;
}

inline double parse_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (...) {
    used = 0;
  }
  if (used == 0 || used != s.size())
    throw ValidationError("csv", where + ": '" + s + "' is not a number");
  return v;
}

}  // namespace kc::csv
