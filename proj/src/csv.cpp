#include "unle/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

#include "unle/errors.hpp"

namespace unle {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::initialization_failure: return "initialization-failure";
    case ErrorKind::sampler_failure: return "sampler-failure";
    case ErrorKind::degenerate_bridge: return "degenerate-bridge";
    case ErrorKind::training_failure: return "training-failure";
    case ErrorKind::task_unsuitable: return "task-unsuitable";
    case ErrorKind::parse_error: return "parse-error";
    case ErrorKind::io_error: return "io-error";
  }
  return "unknown";
}

namespace csv {

std::size_t Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw Error(ErrorKind::parse_error, "missing CSV column '" + name + "'");
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\r\n") == std::string::npos) {
      out << f;
      continue;
    }
    out << '"';
    for (char c : f) {
      if (c == '"') out << '"';
      out << c;
    }
    out << '"';
  }
  out << "\r\n";
}

Table read(std::istream& in) {
  Table t;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false, field_started = false, any = false;
  std::size_t line = 1, record_line = 1;
  auto finish_record = [&] {
    record.push_back(std::move(field));
    field.clear();
    if (t.header.empty()) {
      t.header = std::move(record);
    } else {
      if (record.size() != t.header.size())
        throw Error(ErrorKind::parse_error,
                    "line " + std::to_string(record_line) + ": expected " +
                        std::to_string(t.header.size()) + " fields, found " +
                        std::to_string(record.size()));
      t.rows.push_back(std::move(record));
    }
    record.clear();
    any = false;
    field_started = false;
  };
  char c;
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !field.empty())
          throw Error(ErrorKind::parse_error, "line " + std::to_string(line) + ": stray quote");
        in_quotes = true;
        field_started = any = true;
        break;
      case ',':
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
        any = true;
        break;
      case '\r':
        break;
      case '\n':
        if (any || !field.empty()) finish_record();
        ++line;
        record_line = line;
        break;
      default:
        field += c;
        field_started = any = true;
    }
  }
  if (in_quotes) throw Error(ErrorKind::parse_error, "line " + std::to_string(line) + ": unterminated quote");
  if (any || !field.empty()) finish_record();
  if (t.header.empty()) throw Error(ErrorKind::parse_error, "line 1: missing header row");
  return t;
}

Table read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_error, "cannot open " + path);
  return read(in);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw Error(ErrorKind::parse_error,
                "line " + std::to_string(line) + ": not a number '" + s + "'");
  return v;
}

void write_columns(std::ostream& out, const std::vector<std::string>& header,
                   const Eigen::MatrixXd& m) {
  write_row(out, header);
  std::vector<std::string> fields(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) fields[static_cast<std::size_t>(r)] = format_double(m(r, c));
    write_row(out, fields);
  }
}

std::vector<std::string> numbered(const std::string& prefix, Eigen::Index n) {
  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i));
  return names;
}

}  // namespace csv
}  // namespace unle
