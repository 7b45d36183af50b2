#pragma once

// Per-reviewer effort over the course of a campaign.

#include <algorithm>
#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hitl/review_store.hpp"

namespace hitl {

struct PhaseTime {
  double seconds = 0.0;
  std::size_t pages = 0;
  std::size_t images = 0;

  double seconds_per_image() const { return images ? seconds / static_cast<double>(images) : 0.0; }
};

struct ReviewerTime {
  std::string reviewer_id;
  PhaseTime total;
  std::array<PhaseTime, 3> phases;  // start, middle, end
  std::size_t removed = 0;          // records dropped as breaks
};

struct TimeReport {
  double break_threshold = 0.0;
  std::size_t kept = 0;
  std::size_t removed = 0;
  std::vector<ReviewerTime> reviewers;  // sorted by id
};

// Break-filters the records, then splits each reviewer's remaining records (in
// recording order) into three equal-count phases.
inline TimeReport time_report(std::span<const TimingRecord> records, double break_threshold) {
  auto filtered = filter_timings(records, break_threshold);
  TimeReport report;
  report.break_threshold = break_threshold;
  report.kept = filtered.kept.size();
  report.removed = filtered.removed.size();

  std::map<std::string, std::vector<const TimingRecord*>> by_reviewer;
  std::map<std::string, std::size_t> removed;
  for (const auto& r : filtered.kept) by_reviewer[r.reviewer_id].push_back(&r);
  for (const auto& r : filtered.removed) {
    by_reviewer[r.reviewer_id];
    ++removed[r.reviewer_id];
  }

  for (auto& [id, recs] : by_reviewer) {
    std::stable_sort(recs.begin(), recs.end(),
                     [](const TimingRecord* a, const TimingRecord* b) { return a->recorded_at < b->recorded_at; });
    ReviewerTime rt;
    rt.reviewer_id = id;
    rt.removed = removed[id];
    const std::size_t n = recs.size();
    for (std::size_t i = 0; i < n; ++i) {
      auto& phase = rt.phases[std::min<std::size_t>(2, i * 3 / n)];
      for (PhaseTime* p : {&phase, &rt.total}) {
        p->seconds += recs[i]->duration;
        p->pages += 1;
        p->images += recs[i]->images;
      }
    }
    report.reviewers.push_back(std::move(rt));
  }
  return report;
}

}  // namespace hitl
