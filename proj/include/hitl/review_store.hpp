#pragma once

// Campaign persistence: pages, submitted labels and page timings in one
// SQLite file. Every page submission is a single transaction; history is
// append-only and resubmissions add a new version.

#include <sqlite3.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "hitl/allocation.hpp"
#include "hitl/review_export.hpp"

namespace hitl {

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class UnknownPage : public StoreError {
 public:
  using StoreError::StoreError;
};
class ImageNotOnPage : public StoreError {
 public:
  using StoreError::StoreError;
};
class VersionConflict : public StoreError {
 public:
  VersionConflict(const std::string& what, int current) : StoreError(what), current_(current) {}
  int current_version() const { return current_; }

 private:
  int current_;
};
class SubmissionInvalid : public StoreError {
 public:
  using StoreError::StoreError;
};

struct ReviewRecord {
  std::string reviewer_id;
  std::string image_id;
  AssignmentKind kind = AssignmentKind::Primary;
  std::string raw_label;  // verbatim; "" means agreement with the model
  std::string page_id;
  std::int64_t submitted_at = 0;  // unix milliseconds
  int version = 0;
};

struct TimingRecord {
  std::string reviewer_id;
  std::string page_id;
  double duration = 0.0;  // seconds
  std::int64_t recorded_at = 0;
  std::size_t images = 0;  // images on the page
};

struct SubmitAck {
  std::string page_id;
  int version = 0;
  std::size_t records = 0;
};

namespace detail {

struct SqliteCloser {
  void operator()(sqlite3* db) const { sqlite3_close(db); }
};
struct StmtFinalizer {
  void operator()(sqlite3_stmt* s) const { sqlite3_finalize(s); }
};

class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) {
    sqlite3_stmt* raw = nullptr;
    if (sqlite3_prepare_v2(db, sql, -1, &raw, nullptr) != SQLITE_OK)
      throw StoreError(std::string("prepare failed: ") + sqlite3_errmsg(db));
    stmt_.reset(raw);
    db_ = db;
  }

  Stmt& bind(int i, std::string_view v) {
    check(sqlite3_bind_text(stmt_.get(), i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Stmt& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(stmt_.get(), i, v));
    return *this;
  }
  Stmt& bind(int i, double v) {
    check(sqlite3_bind_double(stmt_.get(), i, v));
    return *this;
  }

  // Returns true while rows are available.
  bool step() {
    int rc = sqlite3_step(stmt_.get());
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw StoreError(std::string("step failed: ") + sqlite3_errmsg(db_));
  }
  void run() {
    while (step()) {
    }
  }
  void reset() {
    sqlite3_reset(stmt_.get());
    sqlite3_clear_bindings(stmt_.get());
  }

  std::string text(int col) const {
    auto p = reinterpret_cast<const char*>(sqlite3_column_text(stmt_.get(), col));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt_.get(), col))) : std::string();
  }
  std::int64_t int64(int col) const { return sqlite3_column_int64(stmt_.get(), col); }
  double real(int col) const { return sqlite3_column_double(stmt_.get(), col); }

 private:
  void check(int rc) {
    if (rc != SQLITE_OK) throw StoreError(std::string("bind failed: ") + sqlite3_errmsg(db_));
  }
  std::unique_ptr<sqlite3_stmt, StmtFinalizer> stmt_;
  sqlite3* db_ = nullptr;
};

}  // namespace detail

class ReviewStore {
 public:
  using Clock = std::function<std::int64_t()>;
  // Called after each record insert inside a submission transaction, with the
  // number of records written so far. Crash-injection tests use it.
  using FaultHook = std::function<void(std::size_t)>;

  static ReviewStore open(const std::filesystem::path& path) {
    sqlite3* raw = nullptr;
    int rc = sqlite3_open_v2(path.c_str(), &raw, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                             nullptr);
    std::unique_ptr<sqlite3, detail::SqliteCloser> db(raw);
    if (rc != SQLITE_OK) throw StoreError("cannot open " + path.string() + ": " + sqlite3_errstr(rc));
    ReviewStore store(std::move(db));
    store.init_schema();
    return store;
  }

  ReviewStore(ReviewStore&&) noexcept = default;
  ReviewStore& operator=(ReviewStore&&) noexcept = default;

  void set_clock(Clock clock) { clock_ = std::move(clock); }
  void set_fault_hook(FaultHook hook) { fault_hook_ = std::move(hook); }

  bool has_pages() const {
    std::lock_guard lock(*mutex_);
    detail::Stmt q(db_.get(), "SELECT COUNT(*) FROM pages");
    q.step();
    return q.int64(0) > 0;
  }

  // Installs the paginated plan. A store accepts exactly one plan; loading the
  // same plan again is a no-op, a different plan is an error.
  void load_pages(std::span<const Page> pages) {
    std::lock_guard lock(*mutex_);
    Transaction tx(db_.get());
    detail::Stmt count(db_.get(), "SELECT COUNT(*) FROM pages");
    count.step();
    const bool loaded = count.int64(0) > 0;
    count.reset();
    if (loaded) {
      tx.rollback();
      auto existing = load_all_pages_locked();
      if (existing.size() != pages.size()) throw StoreError("store already holds a different plan");
      for (std::size_t i = 0; i < pages.size(); ++i) {
        if (existing[i].page_id != pages[i].page_id || existing[i].items != pages[i].items)
          throw StoreError("store already holds a different plan");
      }
      return;
    }
    detail::Stmt page_ins(db_.get(),
                          "INSERT INTO pages(reviewer_id, page_id, idx, model_label) VALUES (?1, ?2, ?3, ?4)");
    detail::Stmt item_ins(db_.get(),
                          "INSERT INTO page_items(reviewer_id, page_id, slot, image_id, kind) VALUES (?1,?2,?3,?4,?5)");
    for (const auto& page : pages) {
      page_ins.reset();
      page_ins.bind(1, page.reviewer_id)
          .bind(2, page.page_id)
          .bind(3, static_cast<std::int64_t>(page.index))
          .bind(4, page.model_label)
          .run();
      for (std::size_t slot = 0; slot < page.items.size(); ++slot) {
        item_ins.reset();
        item_ins.bind(1, page.reviewer_id)
            .bind(2, page.page_id)
            .bind(3, static_cast<std::int64_t>(slot))
            .bind(4, page.items[slot].image_id)
            .bind(5, to_string(page.items[slot].kind))
            .run();
      }
    }
    tx.commit();
  }

  std::vector<Page> pages() const {
    std::lock_guard lock(*mutex_);
    return load_all_pages_locked();
  }

  std::vector<Page> pages_for(std::string_view reviewer) const {
    std::lock_guard lock(*mutex_);
    return load_all_pages_locked(reviewer);
  }

  std::optional<Page> page(std::string_view reviewer, std::string_view page_id) const {
    std::lock_guard lock(*mutex_);
    return find_page_locked(reviewer, page_id);
  }

  std::vector<std::string> reviewers() const {
    std::lock_guard lock(*mutex_);
    detail::Stmt q(db_.get(), "SELECT DISTINCT reviewer_id FROM pages ORDER BY reviewer_id");
    std::vector<std::string> out;
    while (q.step()) out.push_back(q.text(0));
    return out;
  }

  // 0 when the page was never submitted.
  int current_version(std::string_view reviewer, std::string_view page_id) const {
    std::lock_guard lock(*mutex_);
    return current_version_locked(reviewer, page_id);
  }

  // page_id -> current version, for the reviewer's submitted pages.
  std::map<std::string, int> page_versions(std::string_view reviewer) const {
    std::lock_guard lock(*mutex_);
    detail::Stmt q(db_.get(),
                   "SELECT page_id, MAX(version) FROM submissions WHERE reviewer_id = ?1 GROUP BY page_id");
    q.bind(1, reviewer);
    std::map<std::string, int> out;
    while (q.step()) out.emplace(q.text(0), static_cast<int>(q.int64(1)));
    return out;
  }

  // Stores one record per image on the page (missing or empty textbox means
  // agreement) plus one timing record, atomically. When `base_version` is
  // given it must equal the page's current version (optimistic concurrency).
  SubmitAck submit_page(std::string_view reviewer, std::string_view page_id,
                        const std::map<std::string, std::string>& labels, double duration,
                        std::optional<int> base_version = std::nullopt) {
    if (!(std::isfinite(duration) && duration > 0.0)) throw SubmissionInvalid("duration must be a positive number");
    std::lock_guard lock(*mutex_);
    auto page = find_page_locked(reviewer, page_id);
    if (!page) throw UnknownPage("page '" + std::string(page_id) + "' is not assigned to '" + std::string(reviewer) + "'");
    for (const auto& [image_id, raw] : labels) {
      if (!page->contains(image_id))
        throw ImageNotOnPage("image '" + image_id + "' is not on page '" + std::string(page_id) + "'");
    }

    Transaction tx(db_.get(), true);
    const int current = current_version_locked(reviewer, page_id);
    if (base_version && *base_version != current) {
      throw VersionConflict("page '" + std::string(page_id) + "' is at version " + std::to_string(current) +
                                ", submission was based on " + std::to_string(*base_version),
                            current);
    }
    const int version = current + 1;
    const std::int64_t now = clock_();

    detail::Stmt sub(db_.get(),
                     "INSERT INTO submissions(reviewer_id, page_id, version, duration, submitted_at) "
                     "VALUES (?1, ?2, ?3, ?4, ?5)");
    sub.bind(1, reviewer).bind(2, page_id).bind(3, std::int64_t{version}).bind(4, duration).bind(5, now).run();

    std::size_t written = 0;
    detail::Stmt rec(db_.get(),
                     "INSERT INTO reviews(reviewer_id, image_id, kind, raw_label, page_id, version, submitted_at) "
                     "VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)");
    for (const auto& item : page->items) {
      auto it = labels.find(item.image_id);
      const std::string raw = it == labels.end() ? std::string() : it->second;
      rec.reset();
      rec.bind(1, reviewer)
          .bind(2, item.image_id)
          .bind(3, to_string(item.kind))
          .bind(4, raw)
          .bind(5, page_id)
          .bind(6, std::int64_t{version})
          .bind(7, now)
          .run();
      ++written;
      if (fault_hook_) fault_hook_(written);
    }

    detail::Stmt timing(db_.get(),
                        "INSERT INTO timings(reviewer_id, page_id, duration, recorded_at, images) "
                        "VALUES (?1, ?2, ?3, ?4, ?5)");
    timing.bind(1, reviewer)
        .bind(2, page_id)
        .bind(3, duration)
        .bind(4, now)
        .bind(5, static_cast<std::int64_t>(page->items.size()))
        .run();
    tx.commit();
    return {std::string(page_id), version, written};
  }

  // Every stored record, all versions, in insertion order.
  std::vector<ReviewRecord> history() const {
    std::lock_guard lock(*mutex_);
    detail::Stmt q(db_.get(),
                   "SELECT reviewer_id, image_id, kind, raw_label, page_id, submitted_at, version "
                   "FROM reviews ORDER BY id");
    return read_records(q);
  }

  // Latest version of one page's records, in slot order; empty if never submitted.
  std::vector<ReviewRecord> latest_page_records(std::string_view reviewer, std::string_view page_id) const {
    std::lock_guard lock(*mutex_);
    detail::Stmt q(db_.get(),
                   "SELECT r.reviewer_id, r.image_id, r.kind, r.raw_label, r.page_id, r.submitted_at, r.version "
                   "FROM reviews r JOIN page_items i ON i.reviewer_id = r.reviewer_id AND i.page_id = r.page_id "
                   "AND i.image_id = r.image_id AND i.kind = r.kind "
                   "WHERE r.reviewer_id = ?1 AND r.page_id = ?2 AND r.version = "
                   "(SELECT MAX(version) FROM submissions s WHERE s.reviewer_id = ?1 AND s.page_id = ?2) "
                   "ORDER BY i.slot");
    q.bind(1, reviewer).bind(2, page_id);
    return read_records(q);
  }

  std::vector<TimingRecord> timings() const {
    std::lock_guard lock(*mutex_);
    detail::Stmt q(db_.get(),
                   "SELECT reviewer_id, page_id, duration, recorded_at, images FROM timings ORDER BY id");
    std::vector<TimingRecord> out;
    while (q.step())
      out.push_back({q.text(0), q.text(1), q.real(2), q.int64(3), static_cast<std::size_t>(q.int64(4))});
    return out;
  }

  // Latest version per (reviewer, image, kind), sorted by
  // (reviewer_id, page_id, image_id).
  std::vector<ExportRow> export_rows() const {
    std::lock_guard lock(*mutex_);
    detail::Stmt q(db_.get(),
                   "SELECT r.reviewer_id, r.image_id, r.kind, p.model_label, r.raw_label, r.page_id, s.duration "
                   "FROM reviews r "
                   "JOIN submissions s ON s.reviewer_id = r.reviewer_id AND s.page_id = r.page_id "
                   "AND s.version = r.version "
                   "JOIN pages p ON p.reviewer_id = r.reviewer_id AND p.page_id = r.page_id "
                   "WHERE r.version = (SELECT MAX(version) FROM submissions m "
                   "WHERE m.reviewer_id = r.reviewer_id AND m.page_id = r.page_id)");
    std::vector<ExportRow> rows;
    while (q.step()) {
      ExportRow row;
      row.reviewer_id = q.text(0);
      row.image_id = q.text(1);
      row.kind = parse_assignment_kind(q.text(2)).value_or(AssignmentKind::Primary);
      row.model_label = q.text(3);
      row.raw_label = q.text(4);
      row.page_id = q.text(5);
      row.duration = q.real(6);
      rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(), [](const ExportRow& a, const ExportRow& b) {
      return std::tie(a.reviewer_id, a.page_id, a.image_id, a.kind) <
             std::tie(b.reviewer_id, b.page_id, b.image_id, b.kind);
    });
    return rows;
  }

  void export_reviews(std::ostream& out) const {
    write_export_header(out);
    for (const auto& row : export_rows()) write_export_row(out, row);
  }

 private:
  explicit ReviewStore(std::unique_ptr<sqlite3, detail::SqliteCloser> db)
      : db_(std::move(db)), mutex_(std::make_unique<std::mutex>()), clock_([] {
          return std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::system_clock::now().time_since_epoch())
              .count();
        }) {}

  class Transaction {
   public:
    explicit Transaction(sqlite3* db, bool immediate = false) : db_(db) {
      exec(immediate ? "BEGIN IMMEDIATE" : "BEGIN");
    }
    ~Transaction() {
      if (open_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
    }
    void commit() {
      exec("COMMIT");
      open_ = false;
    }
    void rollback() {
      exec("ROLLBACK");
      open_ = false;
    }

   private:
    void exec(const char* sql) {
      char* err = nullptr;
      if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
        std::string msg = err ? err : "unknown error";
        sqlite3_free(err);
        throw StoreError(std::string(sql) + ": " + msg);
      }
    }
    sqlite3* db_;
    bool open_ = true;
  };

  void init_schema() {
    const char* ddl = R"sql(
      PRAGMA journal_mode = WAL;
      PRAGMA synchronous = FULL;
      PRAGMA busy_timeout = 5000;
      CREATE TABLE IF NOT EXISTS pages (
        reviewer_id TEXT NOT NULL, page_id TEXT NOT NULL, idx INTEGER NOT NULL, model_label TEXT NOT NULL,
        PRIMARY KEY (reviewer_id, page_id));
      CREATE TABLE IF NOT EXISTS page_items (
        reviewer_id TEXT NOT NULL, page_id TEXT NOT NULL, slot INTEGER NOT NULL,
        image_id TEXT NOT NULL, kind TEXT NOT NULL,
        PRIMARY KEY (reviewer_id, page_id, slot));
      CREATE TABLE IF NOT EXISTS submissions (
        reviewer_id TEXT NOT NULL, page_id TEXT NOT NULL, version INTEGER NOT NULL,
        duration REAL NOT NULL, submitted_at INTEGER NOT NULL,
        PRIMARY KEY (reviewer_id, page_id, version));
      CREATE TABLE IF NOT EXISTS reviews (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        reviewer_id TEXT NOT NULL, image_id TEXT NOT NULL, kind TEXT NOT NULL, raw_label TEXT NOT NULL,
        page_id TEXT NOT NULL, version INTEGER NOT NULL, submitted_at INTEGER NOT NULL,
        UNIQUE (reviewer_id, image_id, kind, version));
      CREATE TABLE IF NOT EXISTS timings (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        reviewer_id TEXT NOT NULL, page_id TEXT NOT NULL, duration REAL NOT NULL,
        recorded_at INTEGER NOT NULL, images INTEGER NOT NULL);
      CREATE INDEX IF NOT EXISTS reviews_by_page ON reviews (reviewer_id, page_id, version);
    )sql";
    char* err = nullptr;
    if (sqlite3_exec(db_.get(), ddl, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown error";
      sqlite3_free(err);
      throw StoreError("schema: " + msg);
    }
  }

  // All pages, or one reviewer's pages, in (reviewer, index) order.
  std::vector<Page> load_all_pages_locked(std::optional<std::string_view> reviewer = std::nullopt) const {
    std::vector<Page> pages;
    std::map<std::pair<std::string, std::string>, std::size_t> at;
    detail::Stmt q(db_.get(),
                   "SELECT reviewer_id, page_id, idx, model_label FROM pages "
                   "WHERE ?1 IS NULL OR reviewer_id = ?1 ORDER BY reviewer_id, idx");
    if (reviewer) q.bind(1, *reviewer);
    while (q.step()) {
      Page p;
      p.reviewer_id = q.text(0);
      p.page_id = q.text(1);
      p.index = static_cast<std::size_t>(q.int64(2));
      p.model_label = q.text(3);
      at[{p.reviewer_id, p.page_id}] = pages.size();
      pages.push_back(std::move(p));
    }
    detail::Stmt items(db_.get(),
                       "SELECT reviewer_id, page_id, image_id, kind FROM page_items "
                       "WHERE ?1 IS NULL OR reviewer_id = ?1 ORDER BY reviewer_id, page_id, slot");
    if (reviewer) items.bind(1, *reviewer);
    while (items.step()) {
      auto it = at.find({items.text(0), items.text(1)});
      if (it == at.end()) continue;
      pages[it->second].items.push_back(
          {items.text(2), parse_assignment_kind(items.text(3)).value_or(AssignmentKind::Primary)});
    }
    return pages;
  }

  std::optional<Page> find_page_locked(std::string_view reviewer, std::string_view page_id) const {
    detail::Stmt q(db_.get(), "SELECT idx, model_label FROM pages WHERE reviewer_id = ?1 AND page_id = ?2");
    q.bind(1, reviewer).bind(2, page_id);
    if (!q.step()) return std::nullopt;
    Page p;
    p.reviewer_id = std::string(reviewer);
    p.page_id = std::string(page_id);
    p.index = static_cast<std::size_t>(q.int64(0));
    p.model_label = q.text(1);
    detail::Stmt items(db_.get(),
                       "SELECT image_id, kind FROM page_items WHERE reviewer_id = ?1 AND page_id = ?2 ORDER BY slot");
    items.bind(1, reviewer).bind(2, page_id);
    while (items.step())
      p.items.push_back({items.text(0), parse_assignment_kind(items.text(1)).value_or(AssignmentKind::Primary)});
    return p;
  }

  int current_version_locked(std::string_view reviewer, std::string_view page_id) const {
    detail::Stmt q(db_.get(),
                   "SELECT COALESCE(MAX(version), 0) FROM submissions WHERE reviewer_id = ?1 AND page_id = ?2");
    q.bind(1, reviewer).bind(2, page_id);
    q.step();
    return static_cast<int>(q.int64(0));
  }

  static std::vector<ReviewRecord> read_records(detail::Stmt& q) {
    std::vector<ReviewRecord> out;
    while (q.step()) {
      ReviewRecord r;
      r.reviewer_id = q.text(0);
      r.image_id = q.text(1);
      r.kind = parse_assignment_kind(q.text(2)).value_or(AssignmentKind::Primary);
      r.raw_label = q.text(3);
      r.page_id = q.text(4);
      r.submitted_at = q.int64(5);
      r.version = static_cast<int>(q.int64(6));
      out.push_back(std::move(r));
    }
    return out;
  }

  std::unique_ptr<sqlite3, detail::SqliteCloser> db_;
  std::unique_ptr<std::mutex> mutex_;
  Clock clock_;
  FaultHook fault_hook_;
};

struct FilteredTimings {
  std::vector<TimingRecord> kept;
  std::vector<TimingRecord> removed;
  double break_threshold = 0.0;
};

inline constexpr double kDefaultBreakThreshold = 1800.0;

// Records longer than `break_threshold` seconds are taken to include a break.
inline FilteredTimings filter_timings(std::span<const TimingRecord> records, double break_threshold) {
  if (!(break_threshold > 0.0)) throw std::invalid_argument("break_threshold must be > 0");
  FilteredTimings out;
  out.break_threshold = break_threshold;
  for (const auto& r : records) (r.duration > break_threshold ? out.removed : out.kept).push_back(r);
  return out;
}

}  // namespace hitl
