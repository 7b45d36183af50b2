#pragma once

// RFC-4180 CSV reading and writing.

#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hitl {

class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t record, const std::string& what)
      : std::runtime_error("record " + std::to_string(record) + ": " + what), record_(record) {}
  std::size_t record() const { return record_; }

 private:
  std::size_t record_;
};

class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {
    if (in_.peek() == 0xEF) {
      char bom[3];
      in_.read(bom, 3);
      if (!(static_cast<unsigned char>(bom[1]) == 0xBB && static_cast<unsigned char>(bom[2]) == 0xBF)) {
        throw CsvError(1, "invalid byte order mark");
      }
    }
  }

  // Reads the next record into `row`. Returns false at end of input.
  // Blank lines are skipped.
  bool next(std::vector<std::string>& row) {
    row.clear();
    for (;;) {
      if (in_.peek() == std::char_traits<char>::eof()) return false;
      ++record_;
      if (read_record(row)) return true;
      row.clear();
    }
  }

  // 1-based number of the record most recently returned.
  std::size_t record() const { return record_; }

 private:
  bool read_record(std::vector<std::string>& row) {
    std::string field;
    bool quoted = false;
    bool any = false;
    for (;;) {
      int c = in_.get();
      if (c == std::char_traits<char>::eof()) {
        if (quoted) throw CsvError(record_, "unterminated quoted field");
        if (any || !field.empty()) row.push_back(std::move(field));
        return !row.empty();
      }
      any = true;
      if (quoted) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get();
            field.push_back('"');
          } else {
            quoted = false;
            int n = in_.peek();
            if (n != ',' && n != '\n' && n != '\r' && n != std::char_traits<char>::eof()) {
              throw CsvError(record_, "unexpected character after closing quote");
            }
          }
        } else {
          field.push_back(static_cast<char>(c));
        }
        continue;
      }
      switch (c) {
        case '"':
          if (!field.empty()) throw CsvError(record_, "quote inside unquoted field");
          quoted = true;
          break;
        case ',':
          row.push_back(std::move(field));
          field.clear();
          break;
        case '\r':
          if (in_.peek() == '\n') in_.get();
          [[fallthrough]];
        case '\n':
          if (row.empty() && field.empty()) return false;  // blank line
          row.push_back(std::move(field));
          return true;
        default:
          field.push_back(static_cast<char>(c));
      }
    }
  }

  std::istream& in_;
  std::size_t record_ = 0;
};

inline std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << csv_escape(fields[i]);
  }
  out << '\n';
}

// Maps header names to column indices; throws if a required column is absent.
inline std::vector<std::size_t> csv_columns(const std::vector<std::string>& header,
                                            const std::vector<std::string_view>& required) {
  std::vector<std::size_t> idx;
  for (auto name : required) {
    std::size_t found = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) {
        found = i;
        break;
      }
    }
    if (found == header.size()) throw CsvError(1, "missing column '" + std::string(name) + "'");
    idx.push_back(found);
  }
  return idx;
}

}  // namespace hitl
