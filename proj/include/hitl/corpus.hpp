#pragma once

// Machine-labelled image corpus and selection of the manual-review subset.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "hitl/csv.hpp"
#include "hitl/label_grammar.hpp"

namespace hitl {

struct CodeImage {
  std::string image_id;
  std::string image_ref;
  std::string model_label;
  double model_confidence = 0.0;
};

class Corpus {
 public:
  // Throws std::invalid_argument on a duplicate id.
  void add(CodeImage image) {
    auto [it, inserted] = index_.emplace(image.image_id, images_.size());
    if (!inserted) throw std::invalid_argument("duplicate image_id '" + image.image_id + "'");
    images_.push_back(std::move(image));
  }

  const CodeImage* find(const std::string& image_id) const {
    auto it = index_.find(image_id);
    return it == index_.end() ? nullptr : &images_[it->second];
  }

  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  const CodeImage& operator[](std::size_t i) const { return images_[i]; }
  auto begin() const { return images_.begin(); }
  auto end() const { return images_.end(); }

 private:
  std::vector<CodeImage> images_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct RowDiagnostic {
  std::size_t row = 0;  // 1-based record number; the header is row 1
  std::string message;
};

class IngestError : public std::runtime_error {
 public:
  IngestError(const std::string& what, std::vector<RowDiagnostic> diagnostics = {})
      : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
  const std::vector<RowDiagnostic>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<RowDiagnostic> diagnostics_;
};

// Malformed rows are skipped and reported; the corpus holds the rest.
struct IngestResult {
  Corpus corpus;
  std::vector<RowDiagnostic> diagnostics;
};

inline constexpr std::array<std::string_view, 4> kManifestHeader = {"image_id", "image_ref", "model_label",
                                                                    "model_confidence"};

// Decimal confidence in [0, 1]. from_chars rounds to nearest, ties to even.
inline std::optional<double> parse_confidence(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  double value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  if (!std::isfinite(value) || value < 0.0 || value > 1.0) return std::nullopt;
  return value;
}

// Reads a manifest CSV (`image_id,image_ref,model_label,model_confidence`).
// Throws IngestError on a missing header, broken CSV, or duplicate ids.
inline IngestResult ingest_corpus(std::istream& in) {
  IngestResult result;
  CsvReader reader(in);
  std::vector<std::string> row;
  std::vector<std::size_t> cols;
  try {
    if (!reader.next(row)) return result;
    cols = csv_columns(row, {kManifestHeader.begin(), kManifestHeader.end()});
    const std::size_t width = *std::max_element(cols.begin(), cols.end()) + 1;
    std::unordered_map<std::string, std::size_t> first_seen;
    while (reader.next(row)) {
      const std::size_t rec = reader.record();
      if (row.size() < width) {
        result.diagnostics.push_back(
            {rec, "expected " + std::to_string(width) + " fields, got " + std::to_string(row.size())});
        continue;
      }
      CodeImage image;
      image.image_id = std::string(trim(row[cols[0]]));
      image.image_ref = row[cols[1]];
      image.model_label = row[cols[2]];
      if (image.image_id.empty()) {
        result.diagnostics.push_back({rec, "empty image_id"});
        continue;
      }
      auto conf = parse_confidence(row[cols[3]]);
      if (!conf) {
        result.diagnostics.push_back({rec, "model_confidence '" + row[cols[3]] + "' is not a number in [0,1]"});
        continue;
      }
      image.model_confidence = *conf;
      if (auto [it, fresh] = first_seen.emplace(image.image_id, rec); !fresh) {
        throw IngestError("duplicate image_id '" + image.image_id + "' (rows " + std::to_string(it->second) +
                              " and " + std::to_string(rec) + ")",
                          {{rec, "duplicate image_id '" + image.image_id + "'"}});
      }
      result.corpus.add(std::move(image));
    }
  } catch (const CsvError& e) {
    throw IngestError(std::string("malformed manifest: ") + e.what(), {{e.record(), e.what()}});
  }
  return result;
}

inline IngestResult ingest_corpus_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open manifest " + path.string());
  return ingest_corpus(in);
}

enum class TriageReason : unsigned {
  BelowThreshold = 1u << 0,
  NonsensicalLabel = 1u << 1,
  NotInOfficialList = 1u << 2,
  NotInTrainingSet = 1u << 3,
};

// Reporting priority, highest first.
inline constexpr std::array<TriageReason, 4> kReasonPriority = {
    TriageReason::NonsensicalLabel, TriageReason::NotInOfficialList, TriageReason::NotInTrainingSet,
    TriageReason::BelowThreshold};

inline std::string_view to_string(TriageReason r) {
  switch (r) {
    case TriageReason::BelowThreshold: return "below_threshold";
    case TriageReason::NonsensicalLabel: return "nonsensical_label";
    case TriageReason::NotInOfficialList: return "not_in_official_list";
    case TriageReason::NotInTrainingSet: return "not_in_training_set";
  }
  return "?";
}

inline std::size_t reason_slot(TriageReason r) {
  for (std::size_t i = 0; i < kReasonPriority.size(); ++i)
    if (kReasonPriority[i] == r) return i;
  return 0;
}

struct TriageEntry {
  std::string image_id;
  unsigned reasons = 0;  // bitwise OR of TriageReason
  TriageReason primary = TriageReason::BelowThreshold;

  bool has(TriageReason r) const { return (reasons & static_cast<unsigned>(r)) != 0; }
};

struct TriageResult {
  double threshold = 0.0;
  std::size_t considered = 0;
  std::vector<TriageEntry> selected;  // corpus order
  // Indexed in kReasonPriority order. `by_primary` counts each selected image
  // once under its highest-priority reason; `by_predicate` counts every
  // predicate that fired.
  std::array<std::size_t, 4> by_primary{};
  std::array<std::size_t, 4> by_predicate{};

  std::size_t count(TriageReason r) const { return by_primary[reason_slot(r)]; }
};

inline unsigned triage_reasons(const CodeImage& image, const CodeList& codes, double threshold) {
  unsigned reasons = 0;
  if (image.model_confidence < threshold) reasons |= static_cast<unsigned>(TriageReason::BelowThreshold);
  auto code = clean_code(image.model_label);
  if (!code) {
    reasons |= static_cast<unsigned>(TriageReason::NonsensicalLabel);
  } else if (!codes.in_official(*code)) {
    reasons |= static_cast<unsigned>(TriageReason::NotInOfficialList);
  } else if (!codes.in_training(*code)) {
    reasons |= static_cast<unsigned>(TriageReason::NotInTrainingSet);
  }
  return reasons;
}

inline TriageResult triage(const Corpus& corpus, const CodeList& codes, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("threshold must be in [0,1]");
  TriageResult result;
  result.threshold = threshold;
  result.considered = corpus.size();
  for (const auto& image : corpus) {
    unsigned reasons = triage_reasons(image, codes, threshold);
    if (reasons == 0) continue;
    TriageEntry entry{image.image_id, reasons, TriageReason::BelowThreshold};
    for (auto r : kReasonPriority) {
      if (entry.has(r)) {
        entry.primary = r;
        break;
      }
    }
    for (std::size_t i = 0; i < kReasonPriority.size(); ++i)
      if (entry.has(kReasonPriority[i])) ++result.by_predicate[i];
    ++result.by_primary[reason_slot(entry.primary)];
    result.selected.push_back(std::move(entry));
  }
  return result;
}

}  // namespace hitl
