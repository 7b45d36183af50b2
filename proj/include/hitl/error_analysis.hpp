#pragma once

// Model error analysis against human truth: per-class error rates and their
// trend over class size, most misread classes, where wrong predictions came
// from, digit similarity of confusions, and the confidence-threshold curve.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hitl/label_grammar.hpp"
#include "hitl/review_export.hpp"
#include "hitl/spline.hpp"

namespace hitl {

struct LabeledImage {
  std::string image_id;
  std::string model_label;  // as predicted
  Code truth;

  // Canonical form of the prediction: the code when it is one, else the text.
  std::string predicted() const {
    auto code = clean_code(model_label);
    return code ? code->str() : std::string(trim(model_label));
  }
  bool misclassified() const { return predicted() != truth.str(); }
};

// Human truth per image. With two independent reviews the pair must resolve to
// one code; otherwise the primary review must be a clean code. Uncertain,
// unlabelable and invalid reviews yield no truth.
inline std::vector<LabeledImage> human_truth(std::span<const ExportRow> rows) {
  std::map<std::string_view, std::pair<const ExportRow*, const ExportRow*>> by_image;
  for (const auto& row : rows) {
    if (row.kind == AssignmentKind::Primary) by_image[row.image_id].first = &row;
    if (row.kind == AssignmentKind::OverlapSecond) by_image[row.image_id].second = &row;
  }
  std::vector<LabeledImage> out;
  for (const auto& [id, pair] : by_image) {
    const auto* primary = pair.first;
    if (!primary) continue;
    std::optional<Code> truth;
    if (pair.second) {
      auto a = parse_label(primary->effective_label());
      auto b = parse_label(pair.second->effective_label());
      if (a && b) truth = resolve_pair(a.value(), b.value());
    } else {
      truth = clean_code(primary->effective_label());
    }
    if (truth) out.push_back({primary->image_id, primary->model_label, *truth});
  }
  return out;
}

struct ClassErrorPoint {
  Code code;
  std::size_t class_size = 0;
  std::size_t misclassified = 0;
  double error_rate = 0.0;
};

// One point per truth code, sorted by code.
inline std::vector<ClassErrorPoint> per_class_error(std::span<const LabeledImage> images) {
  std::map<Code, std::pair<std::size_t, std::size_t>> tally;
  for (const auto& img : images) {
    auto& [size, wrong] = tally[img.truth];
    ++size;
    if (img.misclassified()) ++wrong;
  }
  std::vector<ClassErrorPoint> out;
  for (const auto& [code, t] : tally)
    out.push_back({code, t.first, t.second, static_cast<double>(t.second) / static_cast<double>(t.first)});
  return out;
}

// Truth codes by misclassification count (descending, ties by code); only
// codes misread at least once.
inline std::vector<std::pair<Code, std::size_t>> top_misclassified(std::span<const LabeledImage> images,
                                                                   std::size_t k) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  std::map<Code, std::size_t> wrong;
  for (const auto& img : images)
    if (img.misclassified()) ++wrong[img.truth];
  std::vector<std::pair<Code, std::size_t>> ranked(wrong.begin(), wrong.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > k) ranked.erase(ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end());
  return ranked;
}

struct ConfusionFlow {
  std::string predicted;
  std::vector<std::pair<Code, std::size_t>> sources;  // count desc, then code asc

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [c, k] : sources) n += k;
    return n;
  }
};

// The true classes of images the model wrongly labelled `predicted`.
inline ConfusionFlow confusion_into(std::span<const LabeledImage> images, std::string_view predicted) {
  ConfusionFlow flow;
  auto code = clean_code(predicted);
  flow.predicted = code ? code->str() : std::string(trim(predicted));
  std::map<Code, std::size_t> counts;
  for (const auto& img : images)
    if (img.misclassified() && img.predicted() == flow.predicted) ++counts[img.truth];
  flow.sources.assign(counts.begin(), counts.end());
  std::stable_sort(flow.sources.begin(), flow.sources.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return flow;
}

// Most frequent (canonical) model predictions among the labelled images.
inline std::vector<std::string> most_predicted(std::span<const LabeledImage> images, std::size_t k) {
  std::map<std::string, std::size_t> counts;
  for (const auto& img : images) ++counts[img.predicted()];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) out.push_back(ranked[i].first);
  return out;
}

struct SimilarityProfile {
  bool numeric = false;
  std::size_t hamming = 0;  // mismatches over aligned positions, plus the length difference
  std::size_t levenshtein = 0;
  bool digit_anagram = false;  // same multiset of digits
  std::size_t shared_digits = 0;
};

inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline SimilarityProfile similarity_profile(const Code& truth, const Code& predicted) {
  SimilarityProfile p;
  if (truth.is_sentinel() || predicted.is_sentinel() || truth.is_partial() || predicted.is_partial()) return p;
  p.numeric = true;
  const auto& a = truth.str();
  const auto& b = predicted.str();
  const std::size_t common = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < common; ++i)
    if (a[i] != b[i]) ++p.hamming;
  p.hamming += std::max(a.size(), b.size()) - common;
  p.levenshtein = levenshtein(a, b);
  std::array<std::size_t, 10> ca{}, cb{};
  for (char c : a) ++ca[static_cast<std::size_t>(c - '0')];
  for (char c : b) ++cb[static_cast<std::size_t>(c - '0')];
  p.digit_anagram = ca == cb;
  for (std::size_t d = 0; d < 10; ++d) p.shared_digits += std::min(ca[d], cb[d]);
  return p;
}

struct ConfidencePoint {
  double confidence = 0.0;
  bool model_correct = false;
};

struct TradeoffPoint {
  double threshold = 0.0;
  std::size_t manual_volume = 0;  // confidence < threshold
  std::size_t retained = 0;
  std::size_t retained_correct = 0;
  std::optional<double> auto_accuracy;  // absent when nothing is retained
};

inline std::vector<TradeoffPoint> threshold_tradeoff(std::span<const ConfidencePoint> items,
                                                     std::span<const double> grid) {
  if (items.empty()) throw std::invalid_argument("threshold_tradeoff needs at least one item");
  if (!std::is_sorted(grid.begin(), grid.end())) throw std::invalid_argument("threshold grid must be ascending");
  std::vector<ConfidencePoint> sorted(items.begin(), items.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ConfidencePoint& a, const ConfidencePoint& b) { return a.confidence < b.confidence; });
  // correct_suffix[i]: correct items among sorted[i..].
  std::vector<std::size_t> correct_suffix(sorted.size() + 1, 0);
  for (std::size_t i = sorted.size(); i-- > 0;)
    correct_suffix[i] = correct_suffix[i + 1] + (sorted[i].model_correct ? 1 : 0);

  std::vector<TradeoffPoint> curve;
  curve.reserve(grid.size());
  for (double t : grid) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), t,
                               [](const ConfidencePoint& p, double v) { return p.confidence < v; });
    TradeoffPoint p;
    p.threshold = t;
    p.manual_volume = static_cast<std::size_t>(it - sorted.begin());
    p.retained = sorted.size() - p.manual_volume;
    p.retained_correct = correct_suffix[p.manual_volume];
    if (p.retained) p.auto_accuracy = static_cast<double>(p.retained_correct) / static_cast<double>(p.retained);
    curve.push_back(p);
  }
  return curve;
}

struct ErrorTrend {
  std::string x_transform = "log10(class_size)";
  std::size_t knots = 6;
  std::vector<std::pair<double, double>> points;  // (transformed size, error rate)
  std::optional<SplineFit> fit;
  std::string fit_error;  // why no fit was produced
};

// Error rate regressed on log10(class size).
inline ErrorTrend error_trend(std::span<const ClassErrorPoint> classes, std::size_t knots = 6) {
  ErrorTrend trend;
  trend.knots = knots;
  for (const auto& c : classes) trend.points.emplace_back(std::log10(static_cast<double>(c.class_size)), c.error_rate);
  try {
    trend.fit = spline_trend(trend.points, knots);
  } catch (const std::invalid_argument& e) {
    trend.fit_error = e.what();
  }
  return trend;
}

}  // namespace hitl
