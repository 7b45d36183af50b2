#pragma once

// HTTP/JSON front of a campaign.
//
//   GET  /api/reviewers/{id}/pages/next       lowest-index page not yet submitted (204 when done)
//   GET  /api/reviewers/{id}/pages/{page_id}  one page, previous labels filled in
//   POST /api/reviewers/{id}/pages/{page_id}  {"labels": {...}, "duration": s, "base_version": v}
//   GET  /api/images/{image_id}               image bytes
//
// Requests carry the reviewer's pre-shared token as "Authorization: Bearer
// <token>" or, for <img> tags, as "?token=<token>".

#include <httplib.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hitl/corpus.hpp"
#include "hitl/review_store.hpp"

namespace hitl {

struct SessionToken {
  std::string reviewer_id;
  std::string token;
  std::int64_t issued_at = 0;  // unix seconds
};

struct Progress {
  std::size_t pages_done = 0;
  std::size_t pages_total = 0;
  std::size_t images_done = 0;
  std::size_t images_total = 0;
};

struct ServiceOptions {
  std::vector<SessionToken> tokens;
  std::int64_t token_ttl_seconds = 0;  // 0: no expiry
  std::filesystem::path images_root;
  std::filesystem::path static_dir;  // UI assets; empty: none
  double duration_slack = 1.2;       // client duration may exceed server wall-clock by this factor
  std::function<std::int64_t()> clock_ms;  // defaults to the system clock
};

inline std::string content_type_for(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".tif" || ext == ".tiff") return "image/tiff";
  if (ext == ".bmp") return "image/bmp";
  return "application/octet-stream";
}

class ReviewService {
 public:
  using json = nlohmann::ordered_json;

  // The plan is read from the store once; pages never change while serving.
  ReviewService(ReviewStore& store, const Corpus& corpus, ServiceOptions options)
      : store_(store), corpus_(corpus), opts_(std::move(options)) {
    if (!opts_.clock_ms) {
      opts_.clock_ms = [] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
            .count();
      };
    }
    for (const auto& t : opts_.tokens) {
      if (t.token.empty()) throw std::invalid_argument("empty token for reviewer '" + t.reviewer_id + "'");
      if (!tokens_.emplace(t.token, t).second) throw std::invalid_argument("token shared by two reviewers");
    }
    for (auto& page : store_.pages()) {
      for (const auto& item : page.items) visible_[item.image_id].insert(page.reviewer_id);
      auto& list = pages_[page.reviewer_id];
      list.push_back(std::move(page));
    }
  }

  void attach(httplib::Server& server) {
    server.Get(R"(/api/reviewers/([^/]+)/pages/next)",
               [this](const httplib::Request& req, httplib::Response& res) { get_next(req, res); });
    server.Get(R"(/api/reviewers/([^/]+)/pages/([^/]+))",
               [this](const httplib::Request& req, httplib::Response& res) { get_page(req, res); });
    server.Post(R"(/api/reviewers/([^/]+)/pages/([^/]+))",
                [this](const httplib::Request& req, httplib::Response& res) { post_page(req, res); });
    server.Get(R"(/api/images/(.+))",
               [this](const httplib::Request& req, httplib::Response& res) { get_image(req, res); });
    if (!opts_.static_dir.empty() && !server.set_mount_point("/", opts_.static_dir.string()))
      throw std::invalid_argument("cannot serve static assets from " + opts_.static_dir.string());
  }

  Progress progress(const std::string& reviewer) const {
    Progress p;
    auto it = pages_.find(reviewer);
    if (it == pages_.end()) return p;
    auto versions = store_.page_versions(reviewer);
    for (const auto& page : it->second) {
      p.pages_total += 1;
      p.images_total += page.items.size();
      if (versions.count(page.page_id)) {
        p.pages_done += 1;
        p.images_done += page.items.size();
      }
    }
    return p;
  }

 private:
  static void error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", message}}.dump(), "application/json");
  }

  static json to_json(const Progress& p) {
    return {{"pages_done", p.pages_done},
            {"pages_total", p.pages_total},
            {"images_done", p.images_done},
            {"images_total", p.images_total}};
  }

  std::optional<std::string> token_of(const httplib::Request& req) const {
    auto auth = req.get_header_value("Authorization");
    constexpr std::string_view bearer = "Bearer ";
    if (auth.size() > bearer.size() && auth.compare(0, bearer.size(), bearer) == 0) return auth.substr(bearer.size());
    if (req.has_param("token")) return req.get_param_value("token");
    return std::nullopt;
  }

  // The reviewer the request's token belongs to, if the token is valid.
  std::optional<std::string> authenticate(const httplib::Request& req) const {
    auto token = token_of(req);
    if (!token) return std::nullopt;
    auto it = tokens_.find(*token);
    if (it == tokens_.end()) return std::nullopt;
    if (opts_.token_ttl_seconds > 0 &&
        opts_.clock_ms() / 1000 >= it->second.issued_at + opts_.token_ttl_seconds)
      return std::nullopt;
    return it->second.reviewer_id;
  }

  bool authorize(const httplib::Request& req, httplib::Response& res, const std::string& reviewer) const {
    auto who = authenticate(req);
    if (!who || *who != reviewer) {
      error(res, 401, "missing, unknown or expired token");
      return false;
    }
    return true;
  }

  void mark_served(const std::string& reviewer, const std::string& page_id) {
    std::lock_guard lock(served_mutex_);
    served_.try_emplace(reviewer + "/" + page_id, opts_.clock_ms());
  }

  json page_payload(const Page& page, const std::string& reviewer) const {
    std::map<std::string, std::string> previous;
    int version = 0;
    for (const auto& rec : store_.latest_page_records(reviewer, page.page_id)) {
      previous[rec.image_id] = rec.raw_label;
      version = rec.version;
    }
    json items = json::array();
    for (std::size_t slot = 0; slot < page.items.size(); ++slot) {
      const auto& item = page.items[slot];
      auto prev = previous.find(item.image_id);
      items.push_back({{"slot", slot},
                       {"image_id", item.image_id},
                       {"kind", to_string(item.kind)},
                       {"image_url", "/api/images/" + item.image_id},
                       {"label", prev == previous.end() ? "" : prev->second}});
    }
    return {{"reviewer_id", reviewer},
            {"page_id", page.page_id},
            {"index", page.index},
            {"model_label", page.model_label},
            {"version", version},
            {"items", std::move(items)},
            {"progress", to_json(progress(reviewer))}};
  }

  const Page* find_page(const std::string& reviewer, const std::string& page_id) const {
    auto it = pages_.find(reviewer);
    if (it == pages_.end()) return nullptr;
    for (const auto& p : it->second)
      if (p.page_id == page_id) return &p;
    return nullptr;
  }

  void get_next(const httplib::Request& req, httplib::Response& res) {
    const std::string reviewer = req.matches[1];
    if (!authorize(req, res, reviewer)) return;
    auto it = pages_.find(reviewer);
    if (it == pages_.end()) {
      res.status = 204;
      return;
    }
    auto versions = store_.page_versions(reviewer);
    for (const auto& page : it->second) {  // index order
      if (versions.count(page.page_id)) continue;
      mark_served(reviewer, page.page_id);
      res.set_content(page_payload(page, reviewer).dump(), "application/json");
      return;
    }
    res.status = 204;
  }

  void get_page(const httplib::Request& req, httplib::Response& res) {
    const std::string reviewer = req.matches[1];
    const std::string page_id = req.matches[2];
    if (!authorize(req, res, reviewer)) return;
    const Page* page = find_page(reviewer, page_id);
    if (!page) return error(res, 404, "unknown page '" + page_id + "'");
    mark_served(reviewer, page_id);
    res.set_content(page_payload(*page, reviewer).dump(), "application/json");
  }

  void post_page(const httplib::Request& req, httplib::Response& res) {
    const std::string reviewer = req.matches[1];
    const std::string page_id = req.matches[2];
    if (!authorize(req, res, reviewer)) return;
    if (!find_page(reviewer, page_id)) return error(res, 404, "unknown page '" + page_id + "'");

    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) return error(res, 400, "body must be a JSON object");
    std::map<std::string, std::string> labels;
    if (body.contains("labels")) {
      if (!body["labels"].is_object()) return error(res, 422, "'labels' must map image ids to strings");
      for (const auto& [image_id, raw] : body["labels"].items()) {
        if (!raw.is_string()) return error(res, 422, "label for '" + image_id + "' must be a string");
        labels[image_id] = raw.get<std::string>();
      }
    }
    if (!body.contains("duration") || !body["duration"].is_number())
      return error(res, 422, "'duration' (seconds) is required");
    const double duration = body["duration"].get<double>();
    std::optional<int> base_version;
    if (body.contains("base_version") && !body["base_version"].is_null()) {
      if (!body["base_version"].is_number_integer()) return error(res, 422, "'base_version' must be an integer");
      base_version = body["base_version"].get<int>();
    }

    const std::string key = reviewer + "/" + page_id;
    {
      std::lock_guard lock(served_mutex_);
      auto it = served_.find(key);
      if (it != served_.end()) {
        const double elapsed = static_cast<double>(opts_.clock_ms() - it->second) / 1000.0;
        if (duration > opts_.duration_slack * elapsed)
          return error(res, 422, "duration exceeds the time since the page was served");
      }
    }

    try {
      auto ack = store_.submit_page(reviewer, page_id, labels, duration, base_version);
      {
        std::lock_guard lock(served_mutex_);
        served_.erase(key);
      }
      res.set_content(json{{"page_id", ack.page_id},
                           {"version", ack.version},
                           {"records", ack.records},
                           {"progress", to_json(progress(reviewer))}}
                          .dump(),
                      "application/json");
    } catch (const VersionConflict& e) {
      res.status = 409;
      res.set_content(json{{"error", e.what()}, {"current_version", e.current_version()}}.dump(),
                      "application/json");
    } catch (const ImageNotOnPage& e) {
      error(res, 422, e.what());
    } catch (const SubmissionInvalid& e) {
      error(res, 422, e.what());
    } catch (const UnknownPage& e) {
      error(res, 404, e.what());
    }
  }

  void get_image(const httplib::Request& req, httplib::Response& res) {
    auto who = authenticate(req);
    if (!who) return error(res, 401, "missing, unknown or expired token");
    const std::string image_id = req.matches[1];
    auto vis = visible_.find(image_id);
    const CodeImage* image = corpus_.find(image_id);
    if (vis == visible_.end() || !vis->second.count(*who) || !image) return error(res, 404, "unknown image");

    std::error_code ec;
    auto root = std::filesystem::weakly_canonical(opts_.images_root, ec);
    if (ec) return error(res, 404, "unknown image");
    auto file = std::filesystem::weakly_canonical(root / image->image_ref, ec);
    if (ec) return error(res, 404, "unknown image");
    auto rel = file.lexically_relative(root);
    if (rel.empty() || *rel.begin() == ".." || rel.is_absolute() || !std::filesystem::is_regular_file(file, ec))
      return error(res, 404, "unknown image");
    std::ifstream in(file, std::ios::binary);
    if (!in) return error(res, 404, "unknown image");
    std::ostringstream bytes;
    bytes << in.rdbuf();
    res.set_content(bytes.str(), content_type_for(file));
  }

  ReviewStore& store_;
  const Corpus& corpus_;
  ServiceOptions opts_;
  std::unordered_map<std::string, SessionToken> tokens_;
  std::map<std::string, std::vector<Page>> pages_;                      // reviewer -> pages, index order
  std::unordered_map<std::string, std::set<std::string>> visible_;      // image -> reviewers holding it
  std::mutex served_mutex_;
  std::unordered_map<std::string, std::int64_t> served_;  // reviewer/page -> first serve since last submit
};

}  // namespace hitl
