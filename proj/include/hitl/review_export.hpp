#pragma once

// The review export CSV: the hand-off between the store and the analyses.

#include <charconv>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hitl/allocation.hpp"
#include "hitl/csv.hpp"

namespace hitl {

inline constexpr std::array<std::string_view, 7> kExportHeader = {
    "reviewer_id", "image_id", "assignment_kind", "model_label", "raw_label", "page_id", "duration_context"};

struct ExportRow {
  std::string reviewer_id;
  std::string image_id;
  AssignmentKind kind = AssignmentKind::Primary;
  std::string model_label;
  std::string raw_label;  // empty: the reviewer agreed with the model
  std::string page_id;
  double duration = 0.0;  // seconds spent on the page this label was submitted with

  // What the reviewer asserted: the raw text, or the model label when empty.
  const std::string& effective_label() const { return raw_label.empty() ? model_label : raw_label; }
};

// Shortest decimal text that round-trips.
inline std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline void write_export_header(std::ostream& out) {
  write_csv_row(out, {kExportHeader.begin(), kExportHeader.end()});
}

inline void write_export_row(std::ostream& out, const ExportRow& r) {
  write_csv_row(out, {r.reviewer_id, r.image_id, std::string(to_string(r.kind)), r.model_label, r.raw_label,
                      r.page_id, format_number(r.duration)});
}

inline std::vector<ExportRow> read_review_export(std::istream& in) {
  CsvReader reader(in);
  std::vector<std::string> row;
  std::vector<ExportRow> rows;
  if (!reader.next(row)) return rows;
  auto cols = csv_columns(row, {kExportHeader.begin(), kExportHeader.end()});
  while (reader.next(row)) {
    if (row.size() < kExportHeader.size()) throw CsvError(reader.record(), "short row");
    ExportRow r;
    r.reviewer_id = row[cols[0]];
    r.image_id = row[cols[1]];
    auto kind = parse_assignment_kind(row[cols[2]]);
    if (!kind) throw CsvError(reader.record(), "unknown assignment_kind '" + row[cols[2]] + "'");
    r.kind = *kind;
    r.model_label = row[cols[3]];
    r.raw_label = row[cols[4]];
    r.page_id = row[cols[5]];
    const auto& d = row[cols[6]];
    if (!d.empty()) {
      auto [ptr, ec] = std::from_chars(d.data(), d.data() + d.size(), r.duration);
      if (ec != std::errc() || ptr != d.data() + d.size())
        throw CsvError(reader.record(), "bad duration_context '" + d + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace hitl
