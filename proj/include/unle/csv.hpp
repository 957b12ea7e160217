#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace unle::csv {

// RFC-4180 tables: CRLF line ends, header row required, fields quoted only
// when they contain a comma, quote or line break.

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws unle::Error(parse_error) when absent.
  std::size_t column(const std::string& name) const;
};

void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Throws unle::Error(parse_error) naming the offending line.
Table read(std::istream& in);
Table read_file(const std::string& path);

/// Shortest round-trip representation ("%.17g").
std::string format_double(double v);
double parse_double(const std::string& s, std::size_t line);

/// One column per row of `m`, one CSV row per column of `m`.
void write_columns(std::ostream& out, const std::vector<std::string>& header,
                   const Eigen::MatrixXd& m);

std::vector<std::string> numbered(const std::string& prefix, Eigen::Index n);

}  // namespace unle::csv
