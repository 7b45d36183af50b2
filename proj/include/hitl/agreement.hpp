#pragma once

// Reviewer agreement: single-review outcome fractions, categorisation of
// double-reviewed images, and reviewers' consistency with themselves.

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hitl/label_grammar.hpp"
#include "hitl/review_export.hpp"

namespace hitl {

enum class PairCategory { Certain, Unknown, Uncertain };

inline std::string_view to_string(PairCategory c) {
  switch (c) {
    case PairCategory::Certain: return "Certain";
    case PairCategory::Unknown: return "Unknown";
    case PairCategory::Uncertain: return "Uncertain";
  }
  return "Unknown";
}

// Both labels must parse; the model's label plays no part. Any uncertainty
// wins over equality.
inline PairCategory categorize_pair(std::string_view a, std::string_view b) {
  auto pa = parse_label(a);
  auto pb = parse_label(b);
  if (!pa || !pb) throw std::invalid_argument("categorize_pair needs two parseable labels");
  if (pa->uncertain || pb->uncertain) return PairCategory::Uncertain;
  return normalize(pa.value()).candidates == normalize(pb.value()).candidates ? PairCategory::Certain
                                                                              : PairCategory::Unknown;
}

enum class ReviewOutcome { Corrected, ModelAgreed, Unlabelable, Uncertain, Invalid };
inline constexpr std::array<ReviewOutcome, 5> kOutcomes = {ReviewOutcome::Corrected, ReviewOutcome::ModelAgreed,
                                                           ReviewOutcome::Unlabelable, ReviewOutcome::Uncertain,
                                                           ReviewOutcome::Invalid};

inline std::string_view to_string(ReviewOutcome o) {
  switch (o) {
    case ReviewOutcome::Corrected: return "corrected";
    case ReviewOutcome::ModelAgreed: return "model_agreed";
    case ReviewOutcome::Unlabelable: return "unlabelable";
    case ReviewOutcome::Uncertain: return "uncertain";
    case ReviewOutcome::Invalid: return "invalid";
  }
  return "invalid";
}

// An empty box stands for the model's label; agreeing with a label that is
// not a code (e.g. "5bb") is invalid.
inline ReviewOutcome review_outcome(const ExportRow& row) {
  auto model = clean_code(row.model_label);
  if (row.raw_label.empty()) return model ? ReviewOutcome::ModelAgreed : ReviewOutcome::Invalid;
  switch (classify_raw(row.raw_label)) {
    case LabelClass::CleanCode:
      return model && *clean_code(row.raw_label) == *model ? ReviewOutcome::ModelAgreed : ReviewOutcome::Corrected;
    case LabelClass::Unlabelable: return ReviewOutcome::Unlabelable;
    case LabelClass::Uncertain: return ReviewOutcome::Uncertain;
    case LabelClass::Invalid: return ReviewOutcome::Invalid;
  }
  return ReviewOutcome::Invalid;
}

// True when the reviewer's effective label is exactly the model's code.
inline bool agrees_with_model(const ExportRow& row) { return review_outcome(row) == ReviewOutcome::ModelAgreed; }

inline double fraction(std::size_t part, std::size_t whole) {
  return whole ? static_cast<double>(part) / static_cast<double>(whole) : 0.0;
}

struct SingleReviewSummary {
  std::size_t images = 0;
  std::array<std::size_t, 5> counts{};  // kOutcomes order

  std::size_t count(ReviewOutcome o) const { return counts[static_cast<std::size_t>(o)]; }
  double fraction_of(ReviewOutcome o) const { return fraction(count(o), images); }
};

class EmptyInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Primary reviews only, one per image.
inline SingleReviewSummary single_review_summary(std::span<const ExportRow> rows) {
  SingleReviewSummary s;
  std::map<std::string_view, bool> seen;
  for (const auto& row : rows) {
    if (row.kind != AssignmentKind::Primary) continue;
    if (!seen.emplace(row.image_id, true).second) continue;
    ++s.images;
    ++s.counts[static_cast<std::size_t>(review_outcome(row))];
  }
  if (s.images == 0) throw EmptyInput("no records");
  return s;
}

struct OverlapSummary {
  std::size_t pairs = 0;  // categorised pairs (no invalid label)
  std::array<std::size_t, 3> counts{};
  std::size_t certain_model_agree = 0;  // Certain and the shared label is the model's
  std::size_t unknown_one_agrees = 0;   // Unknown and one reviewer gave the model's label
  std::size_t any_agrees = 0;           // at least one reviewer gave the model's label
  std::size_t invalid_pairs = 0;        // excluded: an invalid label on either side
  std::size_t missing_partner = 0;      // overlap images lacking one of the two reviews
  std::vector<std::string> warnings;

  std::size_t count(PairCategory c) const { return counts[static_cast<std::size_t>(c)]; }
  double fraction_of(PairCategory c) const { return fraction(count(c), pairs); }
  double certain_model_agree_rate() const { return fraction(certain_model_agree, count(PairCategory::Certain)); }
  double unknown_one_agrees_rate() const { return fraction(unknown_one_agrees, count(PairCategory::Unknown)); }
  double any_agrees_rate() const { return fraction(any_agrees, pairs); }
};

// Pairs each overlap image's Primary review with its OverlapSecond review.
inline OverlapSummary overlap_summary(std::span<const ExportRow> rows) {
  struct Pair {
    const ExportRow* primary = nullptr;
    const ExportRow* second = nullptr;
  };
  std::map<std::string_view, Pair> by_image;
  for (const auto& row : rows) {
    if (row.kind == AssignmentKind::OverlapSecond) by_image[row.image_id].second = &row;
  }
  for (const auto& row : rows) {
    if (row.kind != AssignmentKind::Primary) continue;
    if (auto it = by_image.find(row.image_id); it != by_image.end()) it->second.primary = &row;
  }

  OverlapSummary s;
  for (const auto& [image, pair] : by_image) {
    if (!pair.primary || !pair.second) {
      ++s.missing_partner;
      continue;
    }
    const bool invalid = review_outcome(*pair.primary) == ReviewOutcome::Invalid ||
                         review_outcome(*pair.second) == ReviewOutcome::Invalid;
    if (invalid) {
      ++s.invalid_pairs;
      continue;
    }
    auto category = categorize_pair(pair.primary->effective_label(), pair.second->effective_label());
    ++s.pairs;
    ++s.counts[static_cast<std::size_t>(category)];
    const bool a = agrees_with_model(*pair.primary);
    const bool b = agrees_with_model(*pair.second);
    if (a || b) ++s.any_agrees;
    if (category == PairCategory::Certain && a && b) ++s.certain_model_agree;
    if (category == PairCategory::Unknown && (a || b)) ++s.unknown_one_agrees;
  }
  if (s.pairs == 0) s.warnings.push_back("no overlap data");
  if (s.missing_partner) s.warnings.push_back(std::to_string(s.missing_partner) + " overlap image(s) missing a review");
  return s;
}

enum class MismatchKind { Truncation, Transposition, Other };

inline std::string_view to_string(MismatchKind k) {
  switch (k) {
    case MismatchKind::Truncation: return "truncation";
    case MismatchKind::Transposition: return "transposition";
    case MismatchKind::Other: return "other";
  }
  return "other";
}

// True when both labels denote the same normalised reading.
inline bool same_label(std::string_view a, std::string_view b) {
  auto pa = parse_label(a);
  auto pb = parse_label(b);
  if (pa && pb) return normalize(pa.value()) == normalize(pb.value());
  return trim(a) == trim(b);
}

inline MismatchKind classify_mismatch(std::string_view a, std::string_view b) {
  a = trim(a);
  b = trim(b);
  if (a.size() != b.size() && (a.starts_with(b) || b.starts_with(a))) return MismatchKind::Truncation;
  auto digits = [](std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (a != b && digits(a) && digits(b)) {
    std::string sa(a), sb(b);
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    if (sa == sb) return MismatchKind::Transposition;
  }
  return MismatchKind::Other;
}

struct Mismatch {
  std::string image_id;
  std::string first;
  std::string second;
  MismatchKind kind = MismatchKind::Other;
};

struct ReviewerConsistency {
  std::string reviewer_id;
  std::size_t duplicates = 0;
  std::size_t exact = 0;
  std::vector<Mismatch> mismatches;
};

struct ConsistencyReport {
  std::vector<ReviewerConsistency> reviewers;  // sorted by id

  std::size_t duplicates() const {
    std::size_t n = 0;
    for (const auto& r : reviewers) n += r.duplicates;
    return n;
  }
};

// Compares each SelfDuplicate review with the same reviewer's Primary review.
inline ConsistencyReport self_consistency(std::span<const ExportRow> rows) {
  std::map<std::pair<std::string_view, std::string_view>, const ExportRow*> primaries;
  for (const auto& row : rows)
    if (row.kind == AssignmentKind::Primary) primaries[{row.reviewer_id, row.image_id}] = &row;

  std::map<std::string, ReviewerConsistency> by_reviewer;
  for (const auto& dup : rows) {
    if (dup.kind != AssignmentKind::SelfDuplicate) continue;
    auto it = primaries.find({dup.reviewer_id, dup.image_id});
    if (it == primaries.end()) continue;
    auto& rc = by_reviewer[dup.reviewer_id];
    rc.reviewer_id = dup.reviewer_id;
    ++rc.duplicates;
    const auto& first = it->second->effective_label();
    const auto& second = dup.effective_label();
    if (same_label(first, second)) {
      ++rc.exact;
    } else {
      rc.mismatches.push_back({dup.image_id, first, second, classify_mismatch(first, second)});
    }
  }
  ConsistencyReport report;
  for (auto& [id, rc] : by_reviewer) report.reviewers.push_back(std::move(rc));
  return report;
}

struct AgreementReport {
  std::optional<SingleReviewSummary> single;
  OverlapSummary overlap;
  ConsistencyReport consistency;
};

inline AgreementReport analyze_agreement(std::span<const ExportRow> rows) {
  AgreementReport report;
  try {
    report.single = single_review_summary(rows);
  } catch (const EmptyInput&) {
  }
  report.overlap = overlap_summary(rows);
  report.consistency = self_consistency(rows);
  return report;
}

inline std::string percent(double f, int decimals = 1) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f%%", decimals, f * 100.0);
  return buf;
}

inline nlohmann::ordered_json to_json(const AgreementReport& r) {
  nlohmann::ordered_json j;
  if (r.single) {
    auto& s = j["single_review"];
    s["images"] = r.single->images;
    for (auto o : kOutcomes) {
      s["counts"][std::string(to_string(o))] = r.single->count(o);
      s["fractions"][std::string(to_string(o))] = r.single->fraction_of(o);
    }
  } else {
    j["single_review"] = nullptr;
  }
  auto& o = j["overlap"];
  o["pairs"] = r.overlap.pairs;
  for (auto c : {PairCategory::Certain, PairCategory::Unknown, PairCategory::Uncertain}) {
    o["counts"][std::string(to_string(c))] = r.overlap.count(c);
    o["fractions"][std::string(to_string(c))] = r.overlap.fraction_of(c);
  }
  o["certain_model_agree"] = {{"count", r.overlap.certain_model_agree}, {"rate", r.overlap.certain_model_agree_rate()}};
  o["unknown_one_agrees"] = {{"count", r.overlap.unknown_one_agrees}, {"rate", r.overlap.unknown_one_agrees_rate()}};
  o["any_agrees"] = {{"count", r.overlap.any_agrees}, {"rate", r.overlap.any_agrees_rate()}};
  o["invalid_pairs"] = r.overlap.invalid_pairs;
  o["missing_partner"] = r.overlap.missing_partner;
  o["warnings"] = r.overlap.warnings;
  auto& c = j["consistency"];
  c = nlohmann::ordered_json::array();
  for (const auto& rc : r.consistency.reviewers) {
    nlohmann::ordered_json e;
    e["reviewer_id"] = rc.reviewer_id;
    e["duplicates"] = rc.duplicates;
    e["exact"] = rc.exact;
    e["mismatches"] = nlohmann::ordered_json::array();
    for (const auto& m : rc.mismatches)
      e["mismatches"].push_back(
          {{"image_id", m.image_id}, {"first", m.first}, {"second", m.second}, {"kind", to_string(m.kind)}});
    c.push_back(std::move(e));
  }
  return j;
}

inline std::string text_summary(const AgreementReport& r) {
  std::string out;
  auto line = [&](const std::string& s) { out += s + "\n"; };
  if (r.single) {
    line("Single review (" + std::to_string(r.single->images) + " images)");
    line("  Corrected: " + percent(r.single->fraction_of(ReviewOutcome::Corrected)));
    line("  Agreed with model: " + percent(r.single->fraction_of(ReviewOutcome::ModelAgreed)));
    line("  Unlabelable: " + percent(r.single->fraction_of(ReviewOutcome::Unlabelable)));
    line("  Uncertain: " + percent(r.single->fraction_of(ReviewOutcome::Uncertain)));
    line("  Invalid: " + percent(r.single->fraction_of(ReviewOutcome::Invalid)));
  } else {
    line("Single review: no records");
  }
  if (r.overlap.pairs == 0) {
    line("Overlap: no overlap data");
  } else {
    line("Overlap (" + std::to_string(r.overlap.pairs) + " double-reviewed images)");
    line("  Certain: " + percent(r.overlap.fraction_of(PairCategory::Certain)));
    line("    both agreed with model: " + percent(r.overlap.certain_model_agree_rate(), 2));
    line("  Unknown: " + percent(r.overlap.fraction_of(PairCategory::Unknown)));
    line("    one agreed with model: " + percent(r.overlap.unknown_one_agrees_rate(), 2));
    line("  Uncertain: " + percent(r.overlap.fraction_of(PairCategory::Uncertain)));
    line("  At least one reviewer agreed with model: " + percent(r.overlap.any_agrees_rate(), 2));
    if (r.overlap.invalid_pairs) line("  Excluded (invalid label): " + std::to_string(r.overlap.invalid_pairs));
  }
  line("Self-consistency (" + std::to_string(r.consistency.duplicates()) + " duplicates)");
  for (const auto& rc : r.consistency.reviewers) {
    line("  " + rc.reviewer_id + ": " + std::to_string(rc.exact) + "/" + std::to_string(rc.duplicates) +
         " identical, " + std::to_string(rc.mismatches.size()) + " differing");
  }
  return out;
}

}  // namespace hitl
