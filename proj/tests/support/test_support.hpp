#pragma once

// Fixtures and seeded generators shared by the unit and acceptance suites.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <tuple>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "hitl/agreement.hpp"
#include "hitl/allocation.hpp"
#include "hitl/corpus.hpp"
#include "hitl/csv.hpp"
#include "hitl/error_analysis.hpp"
#include "hitl/review_store.hpp"
#include "hitl/rng.hpp"

namespace hitl::fixtures {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "hitl") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---- plan validator ---------------------------------------------------------

// Recounts every plan invariant from the raw assignment list. Returns one
// message per violation.
inline std::vector<std::string> validate_plan(const AllocationPlan& plan, const std::vector<std::string>& images,
                                              const std::vector<std::string>& reviewers) {
  std::vector<std::string> bad;
  std::set<std::string> image_set(images.begin(), images.end());
  std::set<std::string> reviewer_set(reviewers.begin(), reviewers.end());
  std::map<std::string, std::vector<const Assignment*>> by_image;
  std::set<std::tuple<std::string, std::string, int>> seen;
  for (const auto& a : plan.assignments) {
    if (!image_set.count(a.image_id)) bad.push_back("unknown image " + a.image_id);
    if (!reviewer_set.count(a.reviewer_id)) bad.push_back("unknown reviewer " + a.reviewer_id);
    if (!seen.insert({a.image_id, a.reviewer_id, static_cast<int>(a.kind)}).second)
      bad.push_back("repeated assignment " + a.image_id);
    by_image[a.image_id].push_back(&a);
  }

  std::map<std::string, std::size_t> primaries, dups, non_overlap;
  std::size_t overlap_images = 0;
  for (const auto& id : images) {
    const auto& list = by_image[id];
    std::vector<const Assignment*> p, o, d;
    for (const auto* a : list) {
      if (a->kind == AssignmentKind::Primary) p.push_back(a);
      if (a->kind == AssignmentKind::OverlapSecond) o.push_back(a);
      if (a->kind == AssignmentKind::SelfDuplicate) d.push_back(a);
    }
    if (p.size() != 1) {
      bad.push_back(id + " has " + std::to_string(p.size()) + " primaries");
      continue;
    }
    const auto& owner = p[0]->reviewer_id;
    ++primaries[owner];
    if (o.size() > 1) bad.push_back(id + " has several overlap seconds");
    if (d.size() > 1) bad.push_back(id + " has several self-duplicates");
    if (!o.empty() && !d.empty()) bad.push_back(id + " is both overlap and self-duplicate");
    for (const auto* a : o)
      if (a->reviewer_id == owner) bad.push_back(id + " overlap partner is its primary reviewer");
    for (const auto* a : d)
      if (a->reviewer_id != owner) bad.push_back(id + " self-duplicate goes to another reviewer");
    if (!o.empty()) {
      ++overlap_images;
    } else {
      ++non_overlap[owner];
    }
    dups[owner] += d.size();
  }

  const std::size_t n = images.size();
  if (overlap_images != static_cast<std::size_t>(std::llround(plan.params.overlap_frac * static_cast<double>(n))))
    bad.push_back("overlap image count " + std::to_string(overlap_images));
  std::size_t lo = n, hi = 0;
  for (const auto& r : reviewers) {
    lo = std::min(lo, primaries[r]);
    hi = std::max(hi, primaries[r]);
    const auto want =
        static_cast<std::size_t>(std::llround(plan.params.selfdup_frac * static_cast<double>(non_overlap[r])));
    if (dups[r] != want) bad.push_back(r + " has " + std::to_string(dups[r]) + " self-duplicates, want " + std::to_string(want));
  }
  if (!reviewers.empty() && hi - lo > 1) bad.push_back("primary counts differ by more than one");
  return bad;
}

// Page invariants: label homogeneity, size, coverage, contiguous indices and
// the gap between a self-duplicate and its original.
inline std::vector<std::string> validate_pages(const std::vector<Page>& pages, const AllocationPlan& plan,
                                               const Corpus& corpus, std::size_t page_size) {
  std::vector<std::string> bad;
  std::multiset<std::tuple<std::string, std::string, int>> planned, paged;
  for (const auto& a : plan.assignments) planned.insert({a.image_id, a.reviewer_id, static_cast<int>(a.kind)});
  std::map<std::string, std::size_t> next_index, last_index;
  std::set<std::string> ids;
  std::map<std::pair<std::string, std::string>, std::size_t> original_page;
  for (const auto& p : pages) {
    if (!ids.insert(p.page_id).second) bad.push_back("duplicate page id " + p.page_id);
    if (p.index != ++next_index[p.reviewer_id]) bad.push_back(p.page_id + " index not contiguous");
    if (p.items.empty() || p.items.size() > page_size) bad.push_back(p.page_id + " has bad size");
    for (const auto& it : p.items) {
      paged.insert({it.image_id, p.reviewer_id, static_cast<int>(it.kind)});
      if (std::string(trim(corpus.find(it.image_id)->model_label)) != p.model_label)
        bad.push_back(p.page_id + " mixes labels");
      if (it.kind != AssignmentKind::SelfDuplicate) {
        original_page[{p.reviewer_id, it.image_id}] = p.index;
        last_index[p.reviewer_id] = p.index;
      }
    }
  }
  if (planned != paged) bad.push_back("pages do not cover the plan exactly");
  for (const auto& p : pages) {
    for (const auto& it : p.items) {
      if (it.kind != AssignmentKind::SelfDuplicate) continue;
      auto o = original_page.find({p.reviewer_id, it.image_id});
      if (o == original_page.end()) {
        bad.push_back(it.image_id + " duplicate without original");
        continue;
      }
      const bool gap = p.index >= o->second + 2;
      // Fallback for short streams: only duplicate pages follow the original.
      const bool appended = p.index > o->second && o->second == last_index[p.reviewer_id];
      if (!gap && !appended) bad.push_back(it.image_id + " duplicate too close to its original");
    }
  }
  return bad;
}

// ---- triage fixture ---------------------------------------------------------

struct TriageFixture {
  std::string manifest;  // CSV text
  CodeList codes;
  std::array<std::size_t, 4> planted{};  // kReasonPriority order
};

// A manifest whose rows fall, by highest-priority reason, into the given
// counts (kReasonPriority order: nonsensical, not official, not training,
// below threshold), plus `unselected` rows that trip no predicate. Rows of the
// label-based reasons get random confidences, so several predicates often
// fire at once.
inline TriageFixture make_triage_fixture(std::array<std::size_t, 4> counts, std::size_t unselected,
                                         std::uint64_t seed, double threshold = 0.65) {
  TriageFixture f;
  f.planted = counts;
  // Official: 100..438 (339 codes). Training: 120..405 (286 codes), so
  // 406..438 are official-only and 100..119 too; 900..919 are training-only
  // codes outside the official list.
  std::vector<std::string> both, official_only, not_official;
  for (std::size_t c = 100; c <= 438; ++c) f.codes.official.insert(*Code::from_string(std::to_string(c)));
  for (std::size_t c = 120; c <= 405; ++c) f.codes.training.insert(*Code::from_string(std::to_string(c)));
  for (std::size_t c = 120; c <= 405; ++c) both.push_back(std::to_string(c));
  for (std::size_t c = 100; c < 120; ++c) official_only.push_back(std::to_string(c));
  for (std::size_t c = 406; c <= 438; ++c) official_only.push_back(std::to_string(c));
  for (std::size_t c = 500; c < 600; ++c) not_official.push_back(std::to_string(c));
  const std::vector<std::string> nonsense = {"t4b", "5bb", "1b1", "bt", "53x", "531@533", "1??8", "??",
                                             "12345", "", "531 537", "x", "b5b"};

  Rng rng(seed);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng.below(v.size())]; };
  auto conf_any = [&] { return static_cast<double>(rng.below(1001)) / 1000.0; };
  auto conf_high = [&] { return threshold + (1.0 - threshold) * static_cast<double>(rng.below(1001)) / 1000.0; };
  auto conf_low = [&] {
    double c = threshold * static_cast<double>(rng.below(1000)) / 1000.0;  // < threshold
    return c;
  };

  struct Row {
    std::string label;
    double conf;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < counts[0]; ++i) rows.push_back({pick(nonsense), conf_any()});
  for (std::size_t i = 0; i < counts[1]; ++i) rows.push_back({pick(not_official), conf_any()});
  for (std::size_t i = 0; i < counts[2]; ++i) rows.push_back({pick(official_only), conf_any()});
  for (std::size_t i = 0; i < counts[3]; ++i) rows.push_back({pick(both), conf_low()});
  for (std::size_t i = 0; i < unselected; ++i) {
    auto label = rng.below(20) == 0 ? std::string(rng.below(2) ? "BBB" : "ttt") : pick(both);
    rows.push_back({label, conf_high()});
  }
  rng.shuffle(std::span<Row>(rows));

  std::ostringstream csv;
  write_csv_row(csv, {"image_id", "image_ref", "model_label", "model_confidence"});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::string id = "img" + std::to_string(i);
    write_csv_row(csv, {id, "img/" + id + ".png", rows[i].label, format_number(rows[i].conf)});
  }
  f.manifest = csv.str();
  return f;
}

// ---- planted agreement generator -------------------------------------------

inline std::size_t planted(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
}

struct PlantedSingle {
  std::vector<ExportRow> rows;
  std::array<std::size_t, 5> counts{};  // kOutcomes order
};

// Primary reviews only; outcome shares (corrected, agreed, unlabelable,
// uncertain, invalid). Counts are round(frac * n); the last outcome absorbs
// the rounding remainder.
inline PlantedSingle plant_single(std::size_t n, std::array<double, 5> fracs, std::uint64_t seed) {
  PlantedSingle out;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    out.counts[i] = planted(fracs[i], n);
    assigned += out.counts[i];
  }
  out.counts[4] = n - assigned;

  Rng rng(seed);
  auto code = [&] { return std::to_string(100 + rng.below(900)); };
  auto other = [&](const std::string& c) {
    std::string d;
    do d = code();
    while (d == c);
    return d;
  };
  std::vector<ReviewOutcome> outcomes;
  for (std::size_t i = 0; i < 5; ++i) outcomes.insert(outcomes.end(), out.counts[i], kOutcomes[i]);
  rng.shuffle(std::span<ReviewOutcome>(outcomes));

  for (std::size_t i = 0; i < n; ++i) {
    ExportRow r;
    r.reviewer_id = "r" + std::to_string(i % 7);
    r.image_id = "s" + std::to_string(i);
    r.kind = AssignmentKind::Primary;
    r.page_id = r.reviewer_id + "-" + std::to_string(i / 60);
    r.duration = 30;
    r.model_label = code();
    switch (outcomes[i]) {
      case ReviewOutcome::Corrected: r.raw_label = other(r.model_label); break;
      case ReviewOutcome::ModelAgreed: r.raw_label = rng.below(4) ? "" : r.model_label; break;
      case ReviewOutcome::Unlabelable: r.raw_label = "??"; break;
      case ReviewOutcome::Uncertain:
        switch (rng.below(3)) {
          case 0: r.raw_label = r.model_label + "@" + other(r.model_label); break;
          case 1: r.raw_label = r.model_label.substr(0, 1) + "??" + r.model_label.substr(2); break;
          default: r.raw_label = other(r.model_label) + " %" + r.model_label.substr(0, 2) + "??%"; break;
        }
        break;
      case ReviewOutcome::Invalid:
        switch (rng.below(3)) {
          case 0: r.raw_label = "5bb"; break;
          case 1: r.raw_label = r.model_label + " " + other(r.model_label); break;
          default:
            r.model_label = "t4b";  // agreeing with an impossible label
            r.raw_label = "";
            break;
        }
        break;
    }
    out.rows.push_back(std::move(r));
  }
  return out;
}

struct PlantedOverlap {
  std::vector<ExportRow> rows;
  std::array<std::size_t, 3> counts{};  // Certain, Unknown, Uncertain
  std::size_t certain_model_agree = 0;
  std::size_t unknown_one_agrees = 0;
  std::size_t any_agrees = 0;
};

// Double-reviewed images. `certain_agree_frac` is a share of Certain,
// `unknown_one_frac` a share of Unknown, `any_agree_frac` a share of all
// pairs; Uncertain pairs supply whatever is needed to reach it.
inline PlantedOverlap plant_overlap(std::size_t n, std::array<double, 3> fracs, double certain_agree_frac,
                                    double unknown_one_frac, double any_agree_frac, std::uint64_t seed) {
  PlantedOverlap out;
  out.counts[0] = planted(fracs[0], n);
  out.counts[1] = planted(fracs[1], n);
  out.counts[2] = n - out.counts[0] - out.counts[1];
  out.certain_model_agree = planted(certain_agree_frac, out.counts[0]);
  out.unknown_one_agrees = planted(unknown_one_frac, out.counts[1]);
  out.any_agrees = planted(any_agree_frac, n);
  const std::size_t uncertain_agree = out.any_agrees - out.certain_model_agree - out.unknown_one_agrees;
  if (uncertain_agree > out.counts[2]) throw std::invalid_argument("planted fractions are inconsistent");

  // (category, model agreement) per pair.
  std::vector<std::pair<PairCategory, bool>> plan;
  auto push = [&](PairCategory c, std::size_t total, std::size_t agree) {
    for (std::size_t i = 0; i < total; ++i) plan.emplace_back(c, i < agree);
  };
  push(PairCategory::Certain, out.counts[0], out.certain_model_agree);
  push(PairCategory::Unknown, out.counts[1], out.unknown_one_agrees);
  push(PairCategory::Uncertain, out.counts[2], uncertain_agree);

  Rng rng(seed);
  rng.shuffle(std::span<std::pair<PairCategory, bool>>(plan));
  auto code = [&] { return std::to_string(100 + rng.below(900)); };
  auto other = [&](const std::string& c) {
    std::string d;
    do d = code();
    while (d == c);
    return d;
  };
  auto agree = [&](const std::string& m) { return rng.below(3) ? std::string() : m; };
  auto uncertain = [&](const std::string& avoid) -> std::string {
    switch (rng.below(3)) {
      case 0: return "??";
      case 1: return avoid + "@" + other(avoid);
      default: return avoid.substr(0, 2) + "??";
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    const std::string model = code();
    std::string a, b;
    const auto [category, agrees] = plan[i];
    switch (category) {
      case PairCategory::Certain:
        if (agrees) {
          a = agree(model);
          b = agree(model);
        } else {
          a = b = other(model);
        }
        break;
      case PairCategory::Unknown:
        if (agrees) {
          a = agree(model);
          b = other(model);
        } else {
          a = other(model);
          do b = other(model);
          while (b == a);
        }
        break;
      case PairCategory::Uncertain:
        if (agrees) {
          a = agree(model);
          b = uncertain(model);
        } else {
          a = uncertain(model);
          b = rng.below(2) ? other(model) : uncertain(model);
        }
        break;
    }
    if (rng.below(2)) std::swap(a, b);
    const std::string id = "o" + std::to_string(i);
    const std::size_t r1 = rng.below(7);
    std::size_t r2 = rng.below(6);
    if (r2 >= r1) ++r2;
    out.rows.push_back({"r" + std::to_string(r1), id, AssignmentKind::Primary, model, a, "p", 20});
    out.rows.push_back({"r" + std::to_string(r2), id, AssignmentKind::OverlapSecond, model, b, "q", 20});
  }
  rng.shuffle(std::span<ExportRow>(out.rows));
  return out;
}

// ---- threshold trade-off corpus ----------------------------------------------

struct TradeoffFixture {
  std::vector<ConfidencePoint> items;
  std::size_t below = 0;
  std::size_t retained_correct = 0;
};

// `n` items; `below` of them have confidence < threshold (and some sit
// exactly on it); among the rest `retained_correct` are correct.
inline TradeoffFixture plant_tradeoff(std::size_t n, std::size_t below, std::size_t retained_correct,
                                      double threshold, std::uint64_t seed) {
  TradeoffFixture f;
  f.below = below;
  f.retained_correct = retained_correct;
  Rng rng(seed);
  for (std::size_t i = 0; i < below; ++i) {
    double c = threshold * static_cast<double>(rng.below(10000)) / 10000.0;
    f.items.push_back({c, rng.below(2) == 0});
  }
  for (std::size_t i = 0; i < n - below; ++i) {
    double c = i < 10 ? threshold : threshold + (1.0 - threshold) * rng.uniform();
    f.items.push_back({c, i < retained_correct});
  }
  rng.shuffle(std::span<ConfidencePoint>(f.items));
  return f;
}

// ---- random labelled corpora ---------------------------------------------------

// Skewed class sizes: low codes are common, the model tends to predict a
// popular code or a digit shuffle of the truth, and a few predictions are not
// codes at all.
inline std::vector<LabeledImage> random_labeled(std::size_t n, Rng& rng) {
  static const std::vector<std::string> pool = {"531", "899", "555", "111", "324", "333", "224", "353",
                                                "861", "168", "bbb", "ttt", "12",  "4",   "7001"};
  auto pick = [&] {
    const auto r = rng.below(100);
    return pool[r < 60 ? rng.below(4) : 4 + rng.below(pool.size() - 4)];
  };
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string truth = pick();
    std::string model;
    switch (rng.below(10)) {
      case 0: model = pick(); break;
      case 1: model = rng.below(2) ? "t4b" : " 5bb"; break;
      case 2: {
        model = truth;
        rng.shuffle(std::span<char>(model));
        break;
      }
      default: model = rng.below(4) ? truth : " " + truth; break;
    }
    out.push_back({"i" + std::to_string(i), model, *Code::from_string(truth)});
  }
  return out;
}

// ---- simulated campaign -----------------------------------------------------

// Writes a small campaign (manifest, code lists, config, image files) into
// `dir`: `n_images` rows of which the low-confidence and off-list ones get
// selected. Returns the config path.
inline std::filesystem::path write_campaign(const std::filesystem::path& dir, std::size_t n_images,
                                            std::uint64_t seed, std::size_t reviewers = 3) {
  Rng rng(seed);
  std::ostringstream official, training;
  for (std::size_t c = 100; c < 140; ++c) official << c << "\n";
  for (std::size_t c = 100; c < 136; ++c) training << c << "\n";
  write_text(dir / "codes/official.txt", "# official codes\n" + official.str());
  write_text(dir / "codes/training.txt", training.str());

  std::ostringstream csv;
  write_csv_row(csv, {"image_id", "image_ref", "model_label", "model_confidence"});
  for (std::size_t i = 0; i < n_images; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "im%04zu", i);
    std::string label;
    switch (rng.below(20)) {
      case 0: label = "t4b"; break;
      case 1: label = "bbb"; break;
      case 2: label = "ttt"; break;
      case 3: label = std::to_string(136 + rng.below(4)); break;  // official, not training
      case 4: label = std::to_string(700 + rng.below(5)); break;  // not official
      default: label = std::to_string(100 + rng.below(12)); break;
    }
    double conf = rng.below(10) == 0 ? 0.9 : static_cast<double>(rng.below(640)) / 1000.0;
    const std::string ref = std::string("png/") + id + ".png";
    write_text(dir / "images" / ref, std::string("\x89PNG fake ") + id);
    write_csv_row(csv, {id, ref, label, format_number(conf)});
  }
  write_text(dir / "manifest.csv", csv.str());

  std::ostringstream cfg;
  cfg << "# simulated campaign\n"
      << "manifest = \"manifest.csv\"\n"
      << "official_codes = \"codes/official.txt\"\n"
      << "training_codes = \"codes/training.txt\"\n"
      << "output_dir = \"out\"\n"
      << "images_root = \"images\"\n"
      << "threshold = 0.65\n"
      << "overlap_frac = 0.10\n"
      << "selfdup_frac = 0.05\n"
      << "seed = " << seed << "\n"
      << "page_size = 12\n"
      << "break_threshold = 1800\n"
      << "\n[reviewers]\n";
  for (std::size_t r = 0; r < reviewers; ++r) cfg << "rev" << r << " = \"token-" << r << "\"\n";
  write_text(dir / "campaign.toml", cfg.str());
  return dir / "campaign.toml";
}

// Submits every page in the store with labels from a seeded reviewer model:
// the true code is the model's label 35% of the time; reviewers mostly type
// the truth and sometimes hedge. Clock and durations are deterministic, and
// one page in 25 carries a break-sized duration.
inline void simulate_reviews(ReviewStore& store, std::uint64_t seed) {
  auto now = std::make_shared<std::int64_t>(1'700'000'000'000);
  store.set_clock([now] { return *now; });
  auto pages = store.pages();
  std::size_t n = 0;
  for (const auto& page : pages) {
    std::map<std::string, std::string> labels;
    for (const auto& item : page.items) {
      Rng img(derive_seed(seed, "truth/" + item.image_id));
      std::string truth;
      const auto roll = img.below(100);
      auto model = clean_code(page.model_label);
      if (roll < 35 && model) {
        truth = model->str();
      } else if (roll < 40) {
        truth = img.below(2) ? "bbb" : "ttt";
      } else {
        truth = std::to_string(100 + img.below(12));
      }
      Rng who(derive_seed(seed, "review/" + page.reviewer_id + "/" + item.image_id + "/" +
                                    std::string(to_string(item.kind))));
      const auto act = who.below(100);
      std::string raw;
      if (act < 3) {
        raw = "??";
      } else if (act < 8) {
        raw = truth + "@" + std::to_string(100 + who.below(40));
      } else if (act < 10) {
        raw = truth.substr(0, 2);
      } else {
        raw = (model && truth == model->str()) ? "" : truth;
      }
      if (!raw.empty()) labels[item.image_id] = raw;
    }
    const double duration = (n % 25 == 24) ? 2400.0 : 20.0 + static_cast<double>(n % 7) * 3.5;
    *now += static_cast<std::int64_t>(duration * 1000.0) + 1000;
    store.submit_page(page.reviewer_id, page.page_id, labels, duration);
    ++n;
  }
}

}  // namespace hitl::fixtures
