#pragma once

// Splitting the review set among reviewers and paginating each reviewer's
// stream into label-homogeneous pages.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hitl/corpus.hpp"
#include "hitl/rng.hpp"

namespace hitl {

enum class AssignmentKind { Primary, OverlapSecond, SelfDuplicate };

inline std::string_view to_string(AssignmentKind k) {
  switch (k) {
    case AssignmentKind::Primary: return "primary";
    case AssignmentKind::OverlapSecond: return "overlap_second";
    case AssignmentKind::SelfDuplicate: return "self_duplicate";
  }
  return "primary";
}

inline std::optional<AssignmentKind> parse_assignment_kind(std::string_view s) {
  if (s == "primary") return AssignmentKind::Primary;
  if (s == "overlap_second") return AssignmentKind::OverlapSecond;
  if (s == "self_duplicate") return AssignmentKind::SelfDuplicate;
  return std::nullopt;
}

struct Assignment {
  std::string image_id;
  std::string reviewer_id;
  AssignmentKind kind = AssignmentKind::Primary;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

struct AllocationParams {
  double overlap_frac = 0.10;
  double selfdup_frac = 0.014;
  std::uint64_t seed = 0;
};

struct AllocationPlan {
  std::vector<Assignment> assignments;
  std::vector<std::string> reviewers;  // sorted
  AllocationParams params;
};

class AllocationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Reviewer ids end up in URLs and page ids.
inline bool valid_reviewer_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '.';
  });
}

inline std::size_t round_count(double x) { return static_cast<std::size_t>(std::llround(x)); }

// Deterministic allocation. Images and reviewers are treated as sets: the
// result does not depend on their input order.
//
//  * Primary: seeded shuffle dealt round-robin, so counts differ by <= 1.
//  * OverlapSecond: the first round(overlap_frac*N) images of that shuffle
//    get a second, uniformly chosen different reviewer.
//  * SelfDuplicate: per reviewer, round(selfdup_frac * |non-overlap
//    primaries|) of their non-overlap primaries are given to them again.
inline AllocationPlan allocate(std::span<const std::string> images, std::span<const std::string> reviewers,
                               const AllocationParams& params) {
  auto in_unit = [](double f) { return f >= 0.0 && f < 1.0; };
  if (!in_unit(params.overlap_frac) || !in_unit(params.selfdup_frac)) {
    throw AllocationError("fractions must lie in [0,1)");
  }
  if (params.overlap_frac + params.selfdup_frac > 1.0) {
    throw AllocationError("overlap_frac + selfdup_frac exceeds 1: overlap and self-duplicate pools would collide");
  }
  if (reviewers.empty()) throw AllocationError("no reviewers");

  AllocationPlan plan;
  plan.params = params;
  plan.reviewers.assign(reviewers.begin(), reviewers.end());
  std::sort(plan.reviewers.begin(), plan.reviewers.end());
  if (std::adjacent_find(plan.reviewers.begin(), plan.reviewers.end()) != plan.reviewers.end()) {
    throw AllocationError("duplicate reviewer id");
  }
  for (const auto& r : plan.reviewers)
    if (!valid_reviewer_id(r)) throw AllocationError("invalid reviewer id '" + r + "'");

  const std::size_t n_reviewers = plan.reviewers.size();
  std::vector<std::string> order(images.begin(), images.end());
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end()) throw AllocationError("duplicate image id");

  const std::size_t n = order.size();
  const std::size_t n_overlap = round_count(params.overlap_frac * static_cast<double>(n));
  if (n_overlap > 0 && n_reviewers < 2) throw AllocationError("overlap pairs need at least two reviewers");

  Rng rng(derive_seed(params.seed, "allocate/primary"));
  rng.shuffle(std::span<std::string>(order));

  plan.assignments.reserve(n + n_overlap + n / 50);
  std::vector<std::vector<std::size_t>> pool(n_reviewers);  // non-overlap primaries, shuffle order
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = i % n_reviewers;
    plan.assignments.push_back({order[i], plan.reviewers[r], AssignmentKind::Primary});
    if (i >= n_overlap) pool[r].push_back(i);
  }

  Rng partner_rng(derive_seed(params.seed, "allocate/overlap"));
  for (std::size_t i = 0; i < n_overlap; ++i) {
    const std::size_t primary = i % n_reviewers;
    std::size_t other = partner_rng.below(n_reviewers - 1);
    if (other >= primary) ++other;
    plan.assignments.push_back({order[i], plan.reviewers[other], AssignmentKind::OverlapSecond});
  }

  for (std::size_t r = 0; r < n_reviewers; ++r) {
    Rng dup_rng(derive_seed(params.seed, "allocate/selfdup/" + plan.reviewers[r]));
    auto& candidates = pool[r];
    const std::size_t k = std::min(candidates.size(), round_count(params.selfdup_frac * candidates.size()));
    // Partial Fisher-Yates: the first k slots become a uniform sample.
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t pick = j + dup_rng.below(candidates.size() - j);
      std::swap(candidates[j], candidates[pick]);
    }
    std::vector<std::size_t> chosen(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());
    for (auto i : chosen) plan.assignments.push_back({order[i], plan.reviewers[r], AssignmentKind::SelfDuplicate});
  }
  return plan;
}

struct PageItem {
  std::string image_id;
  AssignmentKind kind = AssignmentKind::Primary;

  friend bool operator==(const PageItem&, const PageItem&) = default;
};

struct Page {
  std::string page_id;
  std::string reviewer_id;
  std::size_t index = 0;  // 1-based position in the reviewer's stream
  std::string model_label;
  std::vector<PageItem> items;

  bool contains(std::string_view image_id) const {
    return std::any_of(items.begin(), items.end(), [&](const PageItem& it) { return it.image_id == image_id; });
  }
};

inline constexpr std::size_t kDefaultPageSize = 60;

inline std::string make_page_id(std::string_view reviewer, std::size_t index) {
  std::string num = std::to_string(index);
  if (num.size() < 4) num.insert(0, 4 - num.size(), '0');
  return std::string(reviewer) + "-" + num;
}

namespace detail {

struct DraftPage {
  std::string label;
  std::vector<PageItem> items;
};

// Groups items by model label, shuffles group order and in-group order, and
// chunks each group into pages.
inline std::vector<DraftPage> chunk_by_label(const std::vector<PageItem>& items, const Corpus& corpus,
                                             std::size_t page_size, Rng& rng) {
  std::map<std::string, std::vector<PageItem>> groups;
  for (const auto& item : items) {
    const CodeImage* image = corpus.find(item.image_id);
    if (!image) throw AllocationError("image '" + item.image_id + "' not in corpus");
    groups[std::string(trim(image->model_label))].push_back(item);
  }
  std::vector<std::string> labels;
  for (auto& [label, group] : groups) labels.push_back(label);
  rng.shuffle(std::span<std::string>(labels));

  std::vector<DraftPage> pages;
  for (const auto& label : labels) {
    auto& group = groups[label];
    rng.shuffle(std::span<PageItem>(group));
    for (std::size_t start = 0; start < group.size(); start += page_size) {
      DraftPage page{label, {}};
      auto end = std::min(group.size(), start + page_size);
      page.items.assign(group.begin() + static_cast<std::ptrdiff_t>(start),
                        group.begin() + static_cast<std::ptrdiff_t>(end));
      pages.push_back(std::move(page));
    }
  }
  return pages;
}

}  // namespace detail

// Pages for every reviewer, grouped by reviewer (sorted) and in stream order.
// Self-duplicates get their own pages, inserted at seeded positions with at
// least one full page between a duplicate and its original; if a stream is too
// short for that, the duplicate page goes after every regular page.
inline std::vector<Page> paginate(const AllocationPlan& plan, const Corpus& corpus,
                                  std::size_t page_size = kDefaultPageSize) {
  if (page_size < 1) throw AllocationError("page_size must be >= 1");

  std::map<std::string, std::pair<std::vector<PageItem>, std::vector<PageItem>>> streams;
  for (const auto& r : plan.reviewers) streams[r];
  for (const auto& a : plan.assignments) {
    auto& [regular, dups] = streams[a.reviewer_id];
    (a.kind == AssignmentKind::SelfDuplicate ? dups : regular).push_back({a.image_id, a.kind});
  }

  std::vector<Page> out;
  for (auto& [reviewer, stream] : streams) {
    auto& [regular, dups] = stream;
    // Sort first so pagination depends only on the assignment set.
    auto by_id = [](const PageItem& a, const PageItem& b) { return a.image_id < b.image_id; };
    std::sort(regular.begin(), regular.end(), by_id);
    std::sort(dups.begin(), dups.end(), by_id);

    Rng rng(derive_seed(plan.params.seed, "paginate/" + reviewer));
    auto sequence = detail::chunk_by_label(regular, corpus, page_size, rng);
    auto dup_pages = detail::chunk_by_label(dups, corpus, page_size, rng);

    for (auto& dup : dup_pages) {
      std::unordered_set<std::string> originals;
      for (const auto& item : dup.items) originals.insert(item.image_id);
      std::size_t last_original = 0;
      bool found = false;
      for (std::size_t p = 0; p < sequence.size(); ++p) {
        for (const auto& item : sequence[p].items) {
          if (item.kind != AssignmentKind::SelfDuplicate && originals.contains(item.image_id)) {
            last_original = p;
            found = true;
          }
        }
      }
      std::size_t lo = found ? last_original + 2 : 0;
      std::size_t pos = sequence.size();
      if (lo <= sequence.size()) pos = lo + rng.below(sequence.size() - lo + 1);
      sequence.insert(sequence.begin() + static_cast<std::ptrdiff_t>(pos), std::move(dup));
    }

    for (std::size_t i = 0; i < sequence.size(); ++i) {
      Page page;
      page.reviewer_id = reviewer;
      page.index = i + 1;
      page.page_id = make_page_id(reviewer, page.index);
      page.model_label = std::move(sequence[i].label);
      page.items = std::move(sequence[i].items);
      out.push_back(std::move(page));
    }
  }
  return out;
}

// Plan export: one JSON object per assignment and line,
// {image_id, reviewer_id, kind, page_id, slot}, in stream order.
inline void write_plan_jsonl(std::ostream& out, std::span<const Page> pages) {
  for (const auto& page : pages) {
    for (std::size_t slot = 0; slot < page.items.size(); ++slot) {
      nlohmann::ordered_json line;
      line["image_id"] = page.items[slot].image_id;
      line["reviewer_id"] = page.reviewer_id;
      line["kind"] = to_string(page.items[slot].kind);
      line["page_id"] = page.page_id;
      line["slot"] = slot;
      out << line.dump() << '\n';
    }
  }
}

class PlanFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rebuilds pages from a plan export. Page order follows first appearance;
// model labels come from the corpus and must be homogeneous per page.
inline std::vector<Page> read_plan_jsonl(std::istream& in, const Corpus& corpus) {
  std::vector<Page> pages;
  std::unordered_map<std::string, std::size_t> page_index;
  std::map<std::string, std::size_t> per_reviewer;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw PlanFormatError("plan line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(e.what());
    }
    std::string image_id, reviewer, kind_s, page_id;
    std::size_t slot = 0;
    try {
      image_id = j.at("image_id").get<std::string>();
      reviewer = j.at("reviewer_id").get<std::string>();
      kind_s = j.at("kind").get<std::string>();
      page_id = j.at("page_id").get<std::string>();
      slot = j.at("slot").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      fail(e.what());
    }
    auto kind = parse_assignment_kind(kind_s);
    if (!kind) fail("unknown kind '" + kind_s + "'");
    const CodeImage* image = corpus.find(image_id);
    if (!image) fail("image '" + image_id + "' not in corpus");

    auto [it, fresh] = page_index.emplace(page_id, pages.size());
    if (fresh) {
      Page page;
      page.page_id = page_id;
      page.reviewer_id = reviewer;
      page.index = ++per_reviewer[reviewer];
      page.model_label = std::string(trim(image->model_label));
      pages.push_back(std::move(page));
    }
    Page& page = pages[it->second];
    if (page.reviewer_id != reviewer) fail("page '" + page_id + "' shared by two reviewers");
    if (page.model_label != trim(image->model_label)) fail("page '" + page_id + "' mixes model labels");
    if (slot != page.items.size()) fail("slot " + std::to_string(slot) + " out of order");
    page.items.push_back({image_id, *kind});
  }
  std::stable_sort(pages.begin(), pages.end(),
                   [](const Page& a, const Page& b) { return a.reviewer_id < b.reviewer_id; });
  return pages;
}

inline std::vector<Assignment> assignments_of(std::span<const Page> pages) {
  std::vector<Assignment> out;
  for (const auto& page : pages)
    for (const auto& item : page.items) out.push_back({item.image_id, page.reviewer_id, item.kind});
  return out;
}

}  // namespace hitl
