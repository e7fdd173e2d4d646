#pragma once

// Matrix and cube CSV files. The first line is a header, either
// `M=<int>,T1=<int>,T2=<int>` for cubes or `ROWS=<int>,COLS=<int>` for plain
// matrices; the body is comma-separated rows. Doubles are written in their
// shortest round-trip form, so load(store(x)) is bit-exact.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "hutamp/core_data.hpp"

namespace hutamp {

enum class CubeFormat { kCsv };

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError(where + ": cannot parse number '" + std::string(s) + "'");
  return v;
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::map<std::string, long long> parse_header(const std::string& line,
                                                     const std::string& path) {
  std::map<std::string, long long> kv;
  for (auto field : split_commas(line)) {
    const auto eq = field.find('=');
    if (eq == std::string_view::npos)
      throw InputError(path + ": malformed header field '" + std::string(field) + "'");
    std::string key(field.substr(0, eq));
    std::string_view val = field.substr(eq + 1);
    while (!val.empty() && (val.back() == '\r' || val.back() == ' ')) val.remove_suffix(1);
    long long n = 0;
    auto res = std::from_chars(val.data(), val.data() + val.size(), n);
    if (val.empty() || res.ec != std::errc() || res.ptr != val.data() + val.size())
      throw InputError(path + ": header value for " + key + " is not an integer");
    kv[key] = n;
  }
  return kv;
}

}  // namespace detail

struct CsvMatrix {
  Matrix data;
  std::optional<GridShape> grid;  // present for M/T1/T2 headers
};

inline CsvMatrix read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path + ": cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw InputError(path + ": missing header line");
  const auto kv = detail::parse_header(line, path);
  Index rows = 0, cols = 0;
  CsvMatrix out;
  if (kv.count("M") && kv.count("T1") && kv.count("T2")) {
    rows = kv.at("M");
    out.grid = GridShape{static_cast<Index>(kv.at("T1")), static_cast<Index>(kv.at("T2"))};
    if (out.grid->rows < 1 || out.grid->cols < 1)
      throw InputError(path + ": T1 and T2 must be >= 1");
    cols = out.grid->size();
  } else if (kv.count("ROWS") && kv.count("COLS")) {
    rows = kv.at("ROWS");
    cols = kv.at("COLS");
  } else {
    throw InputError(path + ": header must declare M,T1,T2 or ROWS,COLS");
  }
  if (rows < 1 || cols < 1) throw InputError(path + ": dimensions must be >= 1");
  out.data.resize(rows, cols);
  Index r = 0;
  Index lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (r >= rows)
      throw ShapeError(path + ": body has more than " + std::to_string(rows) + " rows");
    const auto fields = detail::split_commas(line);
    if (static_cast<Index>(fields.size()) != cols)
      throw ShapeError(path + ": line " + std::to_string(lineno) + " has " +
                       std::to_string(fields.size()) + " values, expected " +
                       std::to_string(cols));
    const std::string where = path + ":" + std::to_string(lineno);
    for (Index c = 0; c < cols; ++c) out.data(r, c) = parse_double(fields[c], where);
    ++r;
  }
  if (r != rows)
    throw ShapeError(path + ": body has " + std::to_string(r) + " rows, header says " +
                     std::to_string(rows));
  return out;
}

inline void write_csv_body(std::ostream& os, const Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) os << ',';
      os << format_double(m(r, c));
    }
    os << '\n';
  }
}

inline void write_csv_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw InputError(path + ": cannot open for writing");
  out << "ROWS=" << m.rows() << ",COLS=" << m.cols() << '\n';
  write_csv_body(out, m);
  if (!out) throw InputError(path + ": write failed");
}

inline void store_cube(const std::string& path, const HsiCube& cube) {
  std::ofstream out(path);
  if (!out) throw InputError(path + ": cannot open for writing");
  out << "M=" << cube.bands_count() << ",T1=" << cube.grid().rows
      << ",T2=" << cube.grid().cols << '\n';
  write_csv_body(out, cube.data());
  if (!out) throw InputError(path + ": write failed");
}

// Plain ROWS/COLS files load as a 1 x COLS pixel layout.
inline HsiCube load_cube(const std::string& path, CubeFormat format = CubeFormat::kCsv) {
  (void)format;
  CsvMatrix m = read_csv_matrix(path);
  const GridShape grid = m.grid.value_or(GridShape{1, m.data.cols()});
  return HsiCube(std::move(m.data), grid);
}

inline Matrix load_matrix(const std::string& path) {
  return read_csv_matrix(path).data;
}

}  // namespace hutamp
