#pragma once

// Campaign stages. Each stage reads its inputs from files written by earlier
// stages in the output directory and writes its own artifacts there:
//
//   triage            triage_selected.csv, triage_counts.json
//   allocate          plan.jsonl, allocation_summary.json
//   serve             campaign.sqlite (live)
//   export            reviews.csv, timings.csv
//   analyze agreement agreement.json, agreement.txt, time_usage.json
//   analyze errors    errors.json, class_errors.csv, fig2_class_error.svg,
//                     top_misclassified.csv, confusion_flows.csv, threshold_tradeoff.csv
//   report            report.md

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "hitl/agreement.hpp"
#include "hitl/allocation.hpp"
#include "hitl/config.hpp"
#include "hitl/corpus.hpp"
#include "hitl/csv.hpp"
#include "hitl/error_analysis.hpp"
#include "hitl/review_export.hpp"
#include "hitl/review_store.hpp"
#include "hitl/timing.hpp"

namespace hitl {

namespace files {
inline constexpr const char* kTriageSelected = "triage_selected.csv";
inline constexpr const char* kTriageCounts = "triage_counts.json";
inline constexpr const char* kPlan = "plan.jsonl";
inline constexpr const char* kAllocationSummary = "allocation_summary.json";
inline constexpr const char* kStore = "campaign.sqlite";
inline constexpr const char* kReviews = "reviews.csv";
inline constexpr const char* kTimings = "timings.csv";
inline constexpr const char* kAgreementJson = "agreement.json";
inline constexpr const char* kAgreementText = "agreement.txt";
inline constexpr const char* kTimeUsage = "time_usage.json";
inline constexpr const char* kErrorsJson = "errors.json";
inline constexpr const char* kClassErrors = "class_errors.csv";
inline constexpr const char* kFig2 = "fig2_class_error.svg";
inline constexpr const char* kTopMisclassified = "top_misclassified.csv";
inline constexpr const char* kConfusionFlows = "confusion_flows.csv";
inline constexpr const char* kTradeoff = "threshold_tradeoff.csv";
inline constexpr const char* kReport = "report.md";
}  // namespace files

class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A stage's input file is absent; names the stage that produces it.
class MissingPrerequisite : public StageError {
 public:
  MissingPrerequisite(const std::filesystem::path& file, std::string stage)
      : StageError("missing " + file.string() + "; run the '" + stage + "' stage first"), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

using ojson = nlohmann::ordered_json;

namespace detail {

inline std::filesystem::path require(const std::filesystem::path& file, const std::string& stage) {
  if (!std::filesystem::is_regular_file(file)) throw MissingPrerequisite(file, stage);
  return file;
}

inline std::ifstream open_in(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw StageError("cannot read " + file.string());
  return in;
}

// Writes through a temporary so a failed stage never leaves a half file.
inline void write_file(const std::filesystem::path& file, const std::string& content) {
  std::filesystem::create_directories(file.parent_path());
  auto tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StageError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw StageError("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

inline ojson read_json(const std::filesystem::path& file, const std::string& stage) {
  auto in = open_in(require(file, stage));
  try {
    return ojson::parse(in);
  } catch (const ojson::parse_error& e) {
    throw StageError(file.string() + ": " + e.what());
  }
}

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline Corpus load_corpus(const CampaignConfig& cfg) {
  auto result = ingest_corpus_file(cfg.manifest);
  if (!result.diagnostics.empty()) throw IngestError("malformed manifest rows", result.diagnostics);
  return std::move(result.corpus);
}

}  // namespace detail

// ---- triage -----------------------------------------------------------------

inline TriageResult run_triage(const CampaignConfig& cfg, std::ostream& log = std::cerr) {
  auto corpus = detail::load_corpus(cfg);
  auto codes = cfg.load_codes();
  auto result = triage(corpus, codes, cfg.threshold);
  if (corpus.empty()) log << "warning: manifest has no images\n";

  std::ostringstream csv;
  write_csv_row(csv, {"image_id", "primary_reason", "reasons", "model_label", "model_confidence"});
  for (const auto& e : result.selected) {
    const auto* img = corpus.find(e.image_id);
    std::string reasons;
    for (auto r : kReasonPriority)
      if (e.has(r)) reasons += (reasons.empty() ? "" : "|") + std::string(to_string(r));
    write_csv_row(csv, {e.image_id, std::string(to_string(e.primary)), reasons, img->model_label,
                        format_number(img->model_confidence)});
  }
  detail::write_file(cfg.out(files::kTriageSelected), csv.str());

  ojson j;
  j["threshold"] = result.threshold;
  j["considered"] = result.considered;
  j["selected"] = result.selected.size();
  for (std::size_t i = 0; i < kReasonPriority.size(); ++i) {
    j["by_primary_reason"][std::string(to_string(kReasonPriority[i]))] = result.by_primary[i];
  }
  for (std::size_t i = 0; i < kReasonPriority.size(); ++i) {
    j["by_predicate"][std::string(to_string(kReasonPriority[i]))] = result.by_predicate[i];
  }
  detail::write_file(cfg.out(files::kTriageCounts), j.dump(2) + "\n");
  return result;
}

inline std::vector<std::string> read_selected_ids(const std::filesystem::path& file) {
  auto in = detail::open_in(detail::require(file, "triage"));
  CsvReader reader(in);
  std::vector<std::string> row, ids;
  if (!reader.next(row)) return ids;
  auto cols = csv_columns(row, {"image_id"});
  while (reader.next(row)) ids.push_back(row.at(cols[0]));
  return ids;
}

// ---- allocate ---------------------------------------------------------------

inline std::vector<Page> run_allocate(const CampaignConfig& cfg) {
  auto ids = read_selected_ids(cfg.out(files::kTriageSelected));
  auto corpus = detail::load_corpus(cfg);
  for (const auto& id : ids)
    if (!corpus.find(id)) throw StageError("selected image '" + id + "' is not in the manifest");
  auto reviewers = cfg.reviewers();
  AllocationParams params{cfg.overlap_frac, cfg.selfdup_frac, cfg.seed};
  auto plan = allocate(ids, reviewers, params);
  auto pages = paginate(plan, corpus, cfg.page_size);

  std::ostringstream out;
  write_plan_jsonl(out, pages);
  detail::write_file(cfg.out(files::kPlan), out.str());

  ojson j;
  j["seed"] = cfg.seed;
  j["images"] = ids.size();
  j["overlap_frac"] = cfg.overlap_frac;
  j["selfdup_frac"] = cfg.selfdup_frac;
  j["page_size"] = cfg.page_size;
  j["reviewers"] = ojson::array();
  for (const auto& r : plan.reviewers) {
    std::size_t counts[3] = {0, 0, 0};
    std::size_t n_pages = 0;
    for (const auto& a : plan.assignments)
      if (a.reviewer_id == r) ++counts[static_cast<std::size_t>(a.kind)];
    for (const auto& p : pages)
      if (p.reviewer_id == r) ++n_pages;
    j["reviewers"].push_back({{"reviewer_id", r},
                              {"primary", counts[0]},
                              {"overlap_second", counts[1]},
                              {"self_duplicate", counts[2]},
                              {"pages", n_pages}});
  }
  detail::write_file(cfg.out(files::kAllocationSummary), j.dump(2) + "\n");
  return pages;
}

// ---- serve ------------------------------------------------------------------

inline std::filesystem::path campaign_store_path(const CampaignConfig& cfg) { return cfg.out(files::kStore); }

// Opens (creating if needed) the campaign store and installs the plan.
inline ReviewStore open_campaign_store(const CampaignConfig& cfg, const std::filesystem::path& store_path) {
  auto corpus = detail::load_corpus(cfg);
  auto in = detail::open_in(detail::require(cfg.out(files::kPlan), "allocate"));
  auto pages = read_plan_jsonl(in, corpus);
  std::filesystem::create_directories(store_path.parent_path());
  auto store = ReviewStore::open(store_path);
  store.load_pages(pages);
  return store;
}

// ---- export -----------------------------------------------------------------

inline void write_timings_csv(std::ostream& out, std::span<const TimingRecord> records) {
  write_csv_row(out, {"reviewer_id", "page_id", "duration", "recorded_at", "images"});
  for (const auto& r : records)
    write_csv_row(out, {r.reviewer_id, r.page_id, format_number(r.duration), std::to_string(r.recorded_at),
                        std::to_string(r.images)});
}

inline std::vector<TimingRecord> read_timings_csv(std::istream& in) {
  CsvReader reader(in);
  std::vector<std::string> row;
  std::vector<TimingRecord> out;
  if (!reader.next(row)) return out;
  auto cols = csv_columns(row, {"reviewer_id", "page_id", "duration", "recorded_at", "images"});
  while (reader.next(row)) {
    TimingRecord r;
    try {
      r.reviewer_id = row.at(cols[0]);
      r.page_id = row.at(cols[1]);
      r.duration = std::stod(row.at(cols[2]));
      r.recorded_at = std::stoll(row.at(cols[3]));
      r.images = static_cast<std::size_t>(std::stoull(row.at(cols[4])));
    } catch (const std::exception&) {
      throw CsvError(reader.record(), "bad timing row");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void run_export(const CampaignConfig& cfg, const std::filesystem::path& store_path) {
  detail::require(store_path, "serve");
  auto store = ReviewStore::open(store_path);
  std::ostringstream reviews;
  store.export_reviews(reviews);
  detail::write_file(cfg.out(files::kReviews), reviews.str());
  std::ostringstream timings;
  write_timings_csv(timings, store.timings());
  detail::write_file(cfg.out(files::kTimings), timings.str());
}

inline std::vector<ExportRow> read_reviews(const CampaignConfig& cfg) {
  auto in = detail::open_in(detail::require(cfg.out(files::kReviews), "export"));
  return read_review_export(in);
}

// ---- analyze agreement ------------------------------------------------------

inline ojson to_json(const TimeReport& t) {
  auto phase = [](const PhaseTime& p) {
    return ojson{{"seconds", p.seconds},
                 {"pages", p.pages},
                 {"images", p.images},
                 {"seconds_per_image", p.seconds_per_image()}};
  };
  ojson j;
  j["break_threshold"] = t.break_threshold;
  j["kept"] = t.kept;
  j["removed"] = t.removed;
  j["reviewers"] = ojson::array();
  for (const auto& r : t.reviewers) {
    j["reviewers"].push_back({{"reviewer_id", r.reviewer_id},
                              {"removed", r.removed},
                              {"total", phase(r.total)},
                              {"phases", {phase(r.phases[0]), phase(r.phases[1]), phase(r.phases[2])}}});
  }
  return j;
}

inline AgreementReport run_analyze_agreement(const CampaignConfig& cfg) {
  auto rows = read_reviews(cfg);
  auto report = analyze_agreement(rows);
  detail::write_file(cfg.out(files::kAgreementJson), to_json(report).dump(2) + "\n");
  detail::write_file(cfg.out(files::kAgreementText), text_summary(report));

  auto tin = detail::open_in(detail::require(cfg.out(files::kTimings), "export"));
  auto timings = read_timings_csv(tin);
  detail::write_file(cfg.out(files::kTimeUsage), to_json(time_report(timings, cfg.break_threshold)).dump(2) + "\n");
  return report;
}

// ---- analyze errors ---------------------------------------------------------

inline std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
  return grid;
}

inline std::string class_error_svg(const std::vector<ClassErrorPoint>& classes, const ErrorTrend& trend) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 30, B = 50;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  svg << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg << "<text x=\"320\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">Model classification error by class size</text>\n";
  if (classes.empty()) {
    svg << "<text x=\"320\" y=\"200\" text-anchor=\"middle\">no labelled images</text>\n</svg>\n";
    return svg.str();
  }
  double xmin = trend.points.front().first, xmax = xmin;
  for (const auto& [x, y] : trend.points) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
  }
  if (xmax - xmin < 1e-9) xmax = xmin + 1.0;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - std::clamp(y, 0.0, 1.0) * (H - T - B); };
  svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (double y : {0.0, 0.5, 1.0})
    svg << "<text x=\"" << L - 6 << "\" y=\"" << detail::fixed(py(y) + 4, 2) << "\" text-anchor=\"end\" font-size=\"11\">"
        << detail::fixed(y, 1) << "</text>\n";
  svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-size=\"12\">log10(class size)</text>\n";
  svg << "<text x=\"14\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 "
      << (T + H - B) / 2 << ")\" text-anchor=\"middle\">error rate</text>\n";
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& [x, y] = trend.points[i];
    svg << "<circle cx=\"" << detail::fixed(px(x), 2) << "\" cy=\"" << detail::fixed(py(y), 2)
        << "\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.6\"><title>" << classes[i].code.str() << "</title></circle>\n";
  }
  if (trend.fit) {
    svg << "<polyline fill=\"none\" stroke=\"darkred\" stroke-width=\"2\" points=\"";
    for (int i = 0; i <= 100; ++i) {
      double x = xmin + (xmax - xmin) * i / 100.0;
      svg << (i ? " " : "") << detail::fixed(px(x), 2) << "," << detail::fixed(py(trend.fit->predict(x)), 2);
    }
    svg << "\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

inline ojson run_analyze_errors(const CampaignConfig& cfg) {
  auto rows = read_reviews(cfg);
  auto corpus = detail::load_corpus(cfg);
  auto truth = human_truth(rows);
  ojson j;
  std::size_t wrong = 0;
  for (const auto& t : truth) wrong += t.misclassified() ? 1 : 0;
  j["labeled_images"] = truth.size();
  j["misclassified"] = wrong;

  auto classes = per_class_error(truth);
  std::ostringstream class_csv;
  write_csv_row(class_csv, {"code", "class_size", "misclassified", "error_rate"});
  j["classes"] = ojson::array();
  for (const auto& c : classes) {
    write_csv_row(class_csv, {c.code.str(), std::to_string(c.class_size), std::to_string(c.misclassified),
                              format_number(c.error_rate)});
    j["classes"].push_back(
        {{"code", c.code.str()}, {"class_size", c.class_size}, {"misclassified", c.misclassified}, {"error_rate", c.error_rate}});
  }

  auto trend = error_trend(classes, 6);
  auto& tj = j["trend"];
  tj["x_transform"] = trend.x_transform;
  tj["knot_placement"] = "equally spaced quantiles of the distinct x values";
  tj["requested_knots"] = trend.knots;
  if (trend.fit) {
    tj["knots"] = trend.fit->knots;
    tj["coefficients"] = trend.fit->coefficients;
    tj["residual_norm"] = trend.fit->residual_norm;
  } else {
    tj["error"] = trend.fit_error;
  }

  auto top = top_misclassified(truth, 10);
  std::ostringstream top_csv;
  write_csv_row(top_csv, {"rank", "code", "misclassified"});
  j["top_misclassified"] = ojson::array();
  for (std::size_t i = 0; i < top.size(); ++i) {
    write_csv_row(top_csv, {std::to_string(i + 1), top[i].first.str(), std::to_string(top[i].second)});
    j["top_misclassified"].push_back({{"code", top[i].first.str()}, {"misclassified", top[i].second}});
  }

  auto targets = cfg.confusion_codes.empty() ? most_predicted(truth, 4) : cfg.confusion_codes;
  std::ostringstream flow_csv;
  write_csv_row(flow_csv, {"predicted", "true_code", "count"});
  j["confusion_flows"] = ojson::array();
  for (const auto& p : targets) {
    auto flow = confusion_into(truth, p);
    ojson fj{{"predicted", flow.predicted}, {"total", flow.total()}, {"sources", ojson::array()}};
    for (const auto& [code, n] : flow.sources) {
      write_csv_row(flow_csv, {flow.predicted, code.str(), std::to_string(n)});
      fj["sources"].push_back({{"code", code.str()}, {"count", n}});
    }
    j["confusion_flows"].push_back(std::move(fj));
  }

  std::size_t numeric = 0, hamming1 = 0, lev1 = 0, anagrams = 0;
  for (const auto& t : truth) {
    if (!t.misclassified()) continue;
    auto predicted = clean_code(t.model_label);
    if (!predicted) continue;
    auto p = similarity_profile(t.truth, *predicted);
    if (!p.numeric) continue;
    ++numeric;
    hamming1 += p.hamming == 1;
    lev1 += p.levenshtein == 1;
    anagrams += p.digit_anagram;
  }
  j["similarity"] = {{"numeric_confusions", numeric},
                     {"hamming_1", hamming1},
                     {"levenshtein_1", lev1},
                     {"digit_anagrams", anagrams}};

  std::vector<ConfidencePoint> points;
  for (const auto& t : truth)
    if (const auto* img = corpus.find(t.image_id)) points.push_back({img->model_confidence, !t.misclassified()});
  std::ostringstream trade_csv;
  write_csv_row(trade_csv, {"threshold", "manual_volume", "retained", "retained_correct", "auto_accuracy"});
  j["threshold_tradeoff"] = ojson::array();
  if (!points.empty()) {
    auto grid = default_threshold_grid();
    for (const auto& p : threshold_tradeoff(points, grid)) {
      write_csv_row(trade_csv, {format_number(p.threshold), std::to_string(p.manual_volume), std::to_string(p.retained),
                                std::to_string(p.retained_correct),
                                p.auto_accuracy ? format_number(*p.auto_accuracy) : std::string()});
      ojson pj{{"threshold", p.threshold},
               {"manual_volume", p.manual_volume},
               {"retained", p.retained},
               {"retained_correct", p.retained_correct}};
      pj["auto_accuracy"] = p.auto_accuracy ? ojson(*p.auto_accuracy) : ojson(nullptr);
      j["threshold_tradeoff"].push_back(std::move(pj));
    }
  }

  detail::write_file(cfg.out(files::kClassErrors), class_csv.str());
  detail::write_file(cfg.out(files::kFig2), class_error_svg(classes, trend));
  detail::write_file(cfg.out(files::kTopMisclassified), top_csv.str());
  detail::write_file(cfg.out(files::kConfusionFlows), flow_csv.str());
  detail::write_file(cfg.out(files::kTradeoff), trade_csv.str());
  detail::write_file(cfg.out(files::kErrorsJson), j.dump(2) + "\n");
  return j;
}

// ---- report -----------------------------------------------------------------

inline std::string render_report(const ojson& triage_j, const ojson& alloc_j, const ojson& agree_j,
                                 const ojson& errors_j, const ojson& time_j) {
  std::ostringstream md;
  auto pct = [](const ojson& f, int decimals = 1) { return percent(f.get<double>(), decimals); };

  md << "# Campaign report\n\n";

  md << "## Triage\n\n";
  md << "Images considered: " << triage_j["considered"].get<std::size_t>() << "  \n";
  md << "Selected for manual review: " << triage_j["selected"].get<std::size_t>() << " (confidence threshold "
     << format_number(triage_j["threshold"].get<double>()) << ")\n\n";
  md << "| Reason | Images (highest-priority reason) | Images (predicate fired) |\n|---|---:|---:|\n";
  for (const auto& [reason, n] : triage_j["by_primary_reason"].items())
    md << "| " << reason << " | " << n.get<std::size_t>() << " | " << triage_j["by_predicate"][reason].get<std::size_t>()
       << " |\n";
  md << "\n";

  md << "## Allocation\n\n";
  md << "Seed " << alloc_j["seed"].get<std::uint64_t>() << ", overlap fraction " << format_number(alloc_j["overlap_frac"].get<double>())
     << ", self-duplicate fraction " << format_number(alloc_j["selfdup_frac"].get<double>()) << ", page size "
     << alloc_j["page_size"].get<std::size_t>() << ".\n\n";
  md << "| Reviewer | Primary | Overlap second | Self-duplicate | Pages |\n|---|---:|---:|---:|---:|\n";
  for (const auto& r : alloc_j["reviewers"])
    md << "| " << r["reviewer_id"].get<std::string>() << " | " << r["primary"].get<std::size_t>() << " | "
       << r["overlap_second"].get<std::size_t>() << " | " << r["self_duplicate"].get<std::size_t>() << " | "
       << r["pages"].get<std::size_t>() << " |\n";
  md << "\n";

  md << "## Corrected machine learning labels\n\n";
  const auto& single = agree_j["single_review"];
  if (single.is_null()) {
    md << "No reviews recorded.\n\n";
  } else {
    md << "Images reviewed once (primary review): " << single["images"].get<std::size_t>() << "\n\n";
    md << "| Outcome | Images | Share |\n|---|---:|---:|\n";
    for (const auto& [name, n] : single["counts"].items())
      md << "| " << name << " | " << n.get<std::size_t>() << " | " << pct(single["fractions"][name]) << " |\n";
    md << "\n";
  }

  md << "## Verification and correction quality\n\n";
  const auto& ov = agree_j["overlap"];
  if (ov["pairs"].get<std::size_t>() == 0) {
    md << "No overlap data.\n\n";
  } else {
    md << "Double-reviewed images: " << ov["pairs"].get<std::size_t>() << "\n\n";
    md << "| Category | Images | Share |\n|---|---:|---:|\n";
    for (const auto& [name, n] : ov["counts"].items())
      md << "| " << name << " | " << n.get<std::size_t>() << " | " << pct(ov["fractions"][name]) << " |\n";
    md << "\n";
    md << "- Certain, both reviewers gave the model's label: " << pct(ov["certain_model_agree"]["rate"], 2)
       << " of Certain\n";
    md << "- Unknown, one reviewer gave the model's label: " << pct(ov["unknown_one_agrees"]["rate"], 2)
       << " of Unknown\n";
    md << "- At least one reviewer gave the model's label: " << pct(ov["any_agrees"]["rate"], 2) << "\n";
    if (ov["invalid_pairs"].get<std::size_t>())
      md << "- Excluded pairs with an invalid label: " << ov["invalid_pairs"].get<std::size_t>() << "\n";
    md << "\n";
  }
  for (const auto& w : ov["warnings"])
    if (w.get<std::string>() != "no overlap data") md << "Warning: " << w.get<std::string>() << "\n\n";

  md << "## Labeling consistency\n\n";
  if (agree_j["consistency"].empty()) {
    md << "No self-duplicate reviews.\n\n";
  } else {
    md << "| Reviewer | Duplicates | Same label | Differing |\n|---|---:|---:|---:|\n";
    for (const auto& r : agree_j["consistency"])
      md << "| " << r["reviewer_id"].get<std::string>() << " | " << r["duplicates"].get<std::size_t>() << " | "
         << r["exact"].get<std::size_t>() << " | " << r["mismatches"].size() << " |\n";
    md << "\n";
    bool any = false;
    for (const auto& r : agree_j["consistency"])
      for (const auto& m : r["mismatches"]) {
        if (!any) md << "Differences:\n\n";
        any = true;
        md << "- " << r["reviewer_id"].get<std::string>() << ", " << m["image_id"].get<std::string>() << ": '"
           << m["first"].get<std::string>() << "' then '" << m["second"].get<std::string>() << "' ("
           << m["kind"].get<std::string>() << ")\n";
      }
    if (any) md << "\n";
  }

  md << "## Model classification error analysis\n\n";
  const auto labeled = errors_j["labeled_images"].get<std::size_t>();
  md << "Images with a human truth label: " << labeled << "; misclassified by the model: "
     << errors_j["misclassified"].get<std::size_t>() << "\n\n";
  const auto& trend = errors_j["trend"];
  md << "Error rate per class against " << trend["x_transform"].get<std::string>() << " (" << errors_j["classes"].size()
     << " classes; " << files::kClassErrors << ", " << files::kFig2 << "). ";
  if (trend.contains("error")) {
    md << "No spline trend: " << trend["error"].get<std::string>() << ".\n\n";
  } else {
    md << "Natural cubic spline trend with " << trend["knots"].size() << " knots at "
       << trend["knot_placement"].get<std::string>() << "; residual norm "
       << detail::fixed(trend["residual_norm"].get<double>(), 4) << ".\n\n";
  }
  md << "Most frequently misclassified classes:\n\n";
  if (errors_j["top_misclassified"].empty()) {
    md << "None.\n\n";
  } else {
    md << "| Rank | Code | Misclassified |\n|---:|---|---:|\n";
    std::size_t rank = 0;
    for (const auto& t : errors_j["top_misclassified"])
      md << "| " << ++rank << " | " << t["code"].get<std::string>() << " | " << t["misclassified"].get<std::size_t>()
         << " |\n";
    md << "\n";
  }
  md << "Re-classifications of images the model put in its most predicted classes:\n\n";
  for (const auto& f : errors_j["confusion_flows"]) {
    md << "- " << f["predicted"].get<std::string>() << ": ";
    if (f["sources"].empty()) {
      md << "no misclassifications";
    } else {
      bool first = true;
      for (const auto& s : f["sources"]) {
        md << (first ? "" : ", ") << s["code"].get<std::string>() << " x" << s["count"].get<std::size_t>();
        first = false;
      }
    }
    md << "\n";
  }
  md << "\n";
  const auto& sim = errors_j["similarity"];
  md << "Digit similarity of numeric confusions (" << sim["numeric_confusions"].get<std::size_t>()
     << "): one differing position " << sim["hamming_1"].get<std::size_t>() << ", one edit "
     << sim["levenshtein_1"].get<std::size_t>() << ", same digits reordered " << sim["digit_anagrams"].get<std::size_t>()
     << ".\n\n";
  if (!errors_j["threshold_tradeoff"].empty()) {
    md << "Confidence threshold trade-off over the labelled images:\n\n";
    md << "| Threshold | Manual review | Automatic | Automatic accuracy |\n|---:|---:|---:|---:|\n";
    for (const auto& p : errors_j["threshold_tradeoff"]) {
      md << "| " << detail::fixed(p["threshold"].get<double>(), 2) << " | " << p["manual_volume"].get<std::size_t>()
         << " | " << p["retained"].get<std::size_t>() << " | "
         << (p["auto_accuracy"].is_null() ? std::string("n/a") : pct(p["auto_accuracy"])) << " |\n";
    }
    md << "\n";
  }

  md << "## Time usage\n\n";
  md << "Page timing records longer than " << format_number(time_j["break_threshold"].get<double>())
     << " s are treated as breaks and removed (" << time_j["removed"].get<std::size_t>() << " removed, "
     << time_j["kept"].get<std::size_t>() << " kept).\n\n";
  if (time_j["reviewers"].empty()) {
    md << "No timing records.\n";
  } else {
    md << "| Reviewer | Total s | s/image start | s/image middle | s/image end |\n|---|---:|---:|---:|---:|\n";
    for (const auto& r : time_j["reviewers"]) {
      md << "| " << r["reviewer_id"].get<std::string>() << " | "
         << detail::fixed(r["total"]["seconds"].get<double>(), 1);
      for (const auto& p : r["phases"]) md << " | " << detail::fixed(p["seconds_per_image"].get<double>(), 2);
      md << " |\n";
    }
  }
  return md.str();
}

inline std::string run_report(const CampaignConfig& cfg) {
  auto triage_j = detail::read_json(cfg.out(files::kTriageCounts), "triage");
  auto alloc_j = detail::read_json(cfg.out(files::kAllocationSummary), "allocate");
  auto agree_j = detail::read_json(cfg.out(files::kAgreementJson), "analyze agreement");
  auto time_j = detail::read_json(cfg.out(files::kTimeUsage), "analyze agreement");
  auto errors_j = detail::read_json(cfg.out(files::kErrorsJson), "analyze errors");
  auto md = render_report(triage_j, alloc_j, agree_j, errors_j, time_j);
  detail::write_file(cfg.out(files::kReport), md);
  return md;
}

}  // namespace hitl
