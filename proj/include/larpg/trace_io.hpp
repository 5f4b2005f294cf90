#pragma once

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "larpg/bal_io.hpp"
#include "larpg/runtime.hpp"

namespace larpg {

inline constexpr const char* kTraceHeader =
    "iter,f,grad_norm,what_normsq,lyapunov,uploads_cum_bytes,"
    "broadcast_cum_bytes,ate,reproj";

// CSV export of a run trace: fixed header, one row per iteration, numbers
// with 17 significant digits so values round-trip exactly and the format is
// locale independent.
inline void write_trace(const IterationTrace& trace, std::ostream& out) {
  out << kTraceHeader << '\n';
  for (const IterationRecord& rec : trace) {
    out << rec.iter << ',' << format_double(rec.f) << ','
        << format_double(rec.grad_norm) << ','
        << format_double(rec.what_normsq) << ','
        << format_double(rec.lyapunov) << ',' << rec.cum_upload_bytes << ','
        << rec.cum_broadcast_bytes << ',' << format_double(rec.ate) << ','
        << format_double(rec.reproj) << '\n';
  }
  if (!out) throw std::runtime_error("write_trace: stream write failed");
}

namespace detail {

inline double parse_csv_double(const std::string& field, int line) {
  if (field == "nan" || field == "nan(ind)")
    return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw std::runtime_error("trace CSV: bad number '" + field + "' at line " +
                             std::to_string(line));
  return v;
}

}  // namespace detail

// Reads back a trace CSV. Only the exported columns are populated.
inline IterationTrace read_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader)
    throw std::runtime_error("trace CSV: missing or unexpected header");
  IterationTrace trace;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9)
      throw std::runtime_error("trace CSV: expected 9 fields at line " +
                               std::to_string(line_no));
    IterationRecord rec;
    rec.iter = std::stoi(fields[0]);
    rec.f = detail::parse_csv_double(fields[1], line_no);
    rec.grad_norm = detail::parse_csv_double(fields[2], line_no);
    rec.what_normsq = detail::parse_csv_double(fields[3], line_no);
    rec.lyapunov = detail::parse_csv_double(fields[4], line_no);
    rec.cum_upload_bytes = std::stoull(fields[5]);
    rec.cum_broadcast_bytes = std::stoull(fields[6]);
    rec.ate = detail::parse_csv_double(fields[7], line_no);
    rec.reproj = detail::parse_csv_double(fields[8], line_no);
    trace.push_back(std::move(rec));
  }
  return trace;
}

}  // namespace larpg
