#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "hitl/review_service.hpp"
#include "test_support.hpp"

using namespace hitl;
using json = nlohmann::json;

namespace {

// A running server on an ephemeral port, a fake clock, and two reviewers.
class ServiceFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) {
      char id[8];
      std::snprintf(id, sizeof id, "i%02d", i);
      ids.push_back(id);
      corpus_.add({id, std::string("png/") + id + ".png", i % 2 ? "531" : "899", 0.3});
      fixtures::write_text(dir_ / "images" / "png" / (std::string(id) + ".png"), std::string("bytes-") + id);
    }
    ids.push_back("evil");
    corpus_.add({"evil", "../secret.txt", "531", 0.3});
    fixtures::write_text(dir_ / "secret.txt", "do not serve");

    auto plan = allocate(ids, std::vector<std::string>{"ann", "bob"}, {0.0, 0.0, 3});
    pages_ = paginate(plan, corpus_, 5);
    store_.emplace(ReviewStore::open(dir_ / "store.sqlite"));
    store_->load_pages(pages_);

    ServiceOptions opts;
    opts.tokens = {{"ann", "tok-ann", 1000}, {"bob", "tok-bob", 1000}};
    opts.token_ttl_seconds = 3600;
    opts.images_root = dir_ / "images";
    opts.clock_ms = [this] { return now_ms_.load(); };
    service_.emplace(*store_, corpus_, opts);
    service_->attach(server_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    client_.emplace("127.0.0.1", port_);
  }

  void TearDown() override {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  httplib::Headers auth(const std::string& reviewer) const { return {{"Authorization", "Bearer tok-" + reviewer}}; }

  httplib::Result get(const std::string& path, const std::string& reviewer = "ann") {
    return client_->Get(path, auth(reviewer));
  }

  httplib::Result post(const std::string& path, const json& body, const std::string& reviewer = "ann") {
    return client_->Post(path, auth(reviewer), body.dump(), "application/json");
  }

  std::vector<const Page*> pages_of(const std::string& reviewer) const {
    std::vector<const Page*> out;
    for (const auto& p : pages_)
      if (p.reviewer_id == reviewer) out.push_back(&p);
    return out;
  }

  void advance(double seconds) { now_ms_ += static_cast<std::int64_t>(seconds * 1000); }

  fixtures::TempDir dir_{"hitl-service"};
  Corpus corpus_;
  std::vector<Page> pages_;
  std::optional<ReviewStore> store_;
  std::atomic<std::int64_t> now_ms_{2'000'000};
  std::optional<ReviewService> service_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::optional<httplib::Client> client_;
};

}  // namespace

TEST_F(ServiceFixture, RequiresMatchingToken) {
  const auto page = pages_of("ann")[0]->page_id;
  EXPECT_EQ(client_->Get("/api/reviewers/ann/pages/next")->status, 401);
  EXPECT_EQ(get("/api/reviewers/ann/pages/next", "bob")->status, 401);
  EXPECT_EQ(client_->Get("/api/reviewers/ann/pages/next?token=tok-ann")->status, 200);
  EXPECT_EQ(client_->Get("/api/reviewers/ann/pages/next?token=wrong")->status, 401);
  EXPECT_EQ(post("/api/reviewers/ann/pages/" + page, {{"duration", 1}}, "bob")->status, 401);
  EXPECT_EQ(client_->Get("/api/images/i00")->status, 401);
}

TEST_F(ServiceFixture, TokensExpire) {
  now_ms_ = (1000 + 3599) * 1000LL;
  EXPECT_EQ(get("/api/reviewers/ann/pages/next")->status, 200);
  now_ms_ = (1000 + 3600) * 1000LL;
  EXPECT_EQ(get("/api/reviewers/ann/pages/next")->status, 401);
}

TEST_F(ServiceFixture, WalksThePagesInOrder) {
  auto mine = pages_of("ann");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    auto res = get("/api/reviewers/ann/pages/next");
    ASSERT_EQ(res->status, 200);
    auto page = json::parse(res->body);
    EXPECT_EQ(page["page_id"], mine[i]->page_id);
    EXPECT_EQ(page["index"], i + 1);
    EXPECT_EQ(page["model_label"], mine[i]->model_label);
    EXPECT_EQ(page["version"], 0);
    EXPECT_EQ(page["progress"]["pages_done"], i);
    EXPECT_EQ(page["progress"]["pages_total"], mine.size());
    ASSERT_EQ(page["items"].size(), mine[i]->items.size());
    EXPECT_EQ(page["items"][0]["image_url"], "/api/images/" + mine[i]->items[0].image_id);

    advance(30);
    auto ack = post("/api/reviewers/ann/pages/" + mine[i]->page_id, {{"labels", json::object()}, {"duration", 25}});
    ASSERT_EQ(ack->status, 200) << ack->body;
    auto body = json::parse(ack->body);
    EXPECT_EQ(body["version"], 1);
    EXPECT_EQ(body["progress"]["pages_done"], i + 1);
  }
  EXPECT_EQ(get("/api/reviewers/ann/pages/next")->status, 204);
  auto p = service_->progress("ann");
  EXPECT_EQ(p.pages_done, p.pages_total);
  EXPECT_EQ(p.images_done, p.images_total);
  EXPECT_EQ(service_->progress("bob").pages_done, 0u);
}

TEST_F(ServiceFixture, RevisitEchoesLatestVersion) {
  const auto& page = *pages_of("bob")[0];
  const auto url = "/api/reviewers/bob/pages/" + page.page_id;
  const auto img = page.items[0].image_id;
  ASSERT_EQ(post(url, {{"labels", {{img, "111"}}}, {"duration", 5}}, "bob")->status, 200);
  ASSERT_EQ(post(url, {{"labels", {{img, "531@533"}}}, {"duration", 5}, {"base_version", 1}}, "bob")->status, 200);
  auto res = get(url, "bob");
  ASSERT_EQ(res->status, 200);
  auto body = json::parse(res->body);
  EXPECT_EQ(body["version"], 2);
  EXPECT_EQ(body["items"][0]["label"], "531@533");
  EXPECT_EQ(body["items"][1]["label"], "");
}

TEST_F(ServiceFixture, RejectsBadSubmissions) {
  const auto& page = *pages_of("ann")[0];
  const auto url = "/api/reviewers/ann/pages/" + page.page_id;
  EXPECT_EQ(post("/api/reviewers/ann/pages/ann-9999", {{"duration", 1}})->status, 404);
  EXPECT_EQ(post("/api/reviewers/ann/pages/" + pages_of("bob")[0]->page_id, {{"duration", 1}})->status, 404);
  EXPECT_EQ(client_->Post(url, auth("ann"), "{not json", "application/json")->status, 400);
  EXPECT_EQ(post(url, json::array())->status, 400);
  EXPECT_EQ(post(url, json::object())->status, 422);
  EXPECT_EQ(post(url, {{"duration", 0}})->status, 422);
  EXPECT_EQ(post(url, {{"duration", -1}})->status, 422);
  EXPECT_EQ(post(url, {{"duration", "5"}})->status, 422);
  EXPECT_EQ(post(url, {{"duration", 5}, {"labels", {{"nope", "531"}}}})->status, 422);
  EXPECT_EQ(post(url, {{"duration", 5}, {"labels", {{page.items[0].image_id, 531}}}})->status, 422);
  EXPECT_EQ(post(url, {{"duration", 5}, {"base_version", "x"}})->status, 422);
  EXPECT_EQ(get("/api/reviewers/ann/pages/ann-9999")->status, 404);
  EXPECT_TRUE(store_->history().empty());
}

TEST_F(ServiceFixture, DurationBoundedByServeTime) {
  const auto& page = *pages_of("ann")[0];
  const auto url = "/api/reviewers/ann/pages/" + page.page_id;
  ASSERT_EQ(get(url)->status, 200);
  advance(10);
  EXPECT_EQ(post(url, {{"duration", 12.5}})->status, 422);  // > 1.2 * 10
  EXPECT_EQ(post(url, {{"duration", 12.0}})->status, 200);
  EXPECT_DOUBLE_EQ(store_->timings().at(0).duration, 12.0);
}

TEST_F(ServiceFixture, StaleVersionConflicts) {
  const auto url = "/api/reviewers/ann/pages/" + pages_of("ann")[0]->page_id;
  ASSERT_EQ(post(url, {{"duration", 3}, {"base_version", 0}})->status, 200);
  auto res = post(url, {{"duration", 3}, {"base_version", 0}});
  ASSERT_EQ(res->status, 409);
  EXPECT_EQ(json::parse(res->body)["current_version"], 1);
}

TEST_F(ServiceFixture, ConcurrentWritersOneWins) {
  const auto mine = pages_of("bob");
  ASSERT_GE(mine.size(), 2u);
  for (std::size_t round = 0; round < mine.size(); ++round) {
    const auto url = "/api/reviewers/bob/pages/" + mine[round]->page_id;
    std::atomic<bool> go{false};
    int status[2] = {0, 0};
    std::vector<std::thread> writers;
    for (int w = 0; w < 2; ++w) {
      writers.emplace_back([&, w] {
        httplib::Client c("127.0.0.1", port_);
        while (!go) std::this_thread::yield();
        auto r = c.Post(url, auth("bob"), json{{"duration", 4}, {"base_version", 0}}.dump(), "application/json");
        status[w] = r ? r->status : -1;
      });
    }
    go = true;
    for (auto& t : writers) t.join();
    std::multiset<int> got{status[0], status[1]};
    EXPECT_EQ(got, (std::multiset<int>{200, 409})) << "round " << round;
  }
}

TEST_F(ServiceFixture, ServesOnlyOwnImages) {
  const auto& mine = pages_of("ann")[0]->items[0].image_id;
  const auto& theirs = pages_of("bob")[0]->items[0].image_id;
  auto res = get("/api/images/" + mine);
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "bytes-" + mine);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(get("/api/images/" + theirs)->status, 404);
  EXPECT_EQ(get("/api/images/unknown")->status, 404);
}

TEST_F(ServiceFixture, TraversalNeverEscapes) {
  std::string owner;
  for (const auto& p : pages_)
    if (p.contains("evil")) owner = p.reviewer_id;
  ASSERT_FALSE(owner.empty());
  // The manifest itself points outside the image root.
  EXPECT_EQ(get("/api/images/evil", owner)->status, 404);
  const std::vector<std::string> attacks = {
      "../secret.txt", "..%2Fsecret.txt", "%2e%2e/secret.txt", "%2e%2e%2fsecret.txt", "png/../../secret.txt",
      "..%5csecret.txt", "/etc/passwd", "%2fetc%2fpasswd", "....//secret.txt", "i00%00.png", "..", ".", "%2e",
      "png%2F..%2F..%2Fsecret.txt", "i00/../../secret.txt"};
  for (const auto& a : attacks) {
    auto res = get("/api/images/" + a, owner);
    ASSERT_TRUE(res) << a;
    EXPECT_NE(res->status, 200) << a;
    EXPECT_EQ(res->body.find("do not serve"), std::string::npos) << a;
  }
  Rng rng(99);
  const std::string alphabet = "./%2e%2f\\secrt.x0";
  for (int i = 0; i < 300; ++i) {
    std::string a;
    const auto len = 1 + rng.below(24);
    for (std::size_t k = 0; k < len; ++k) a.push_back(alphabet[rng.below(alphabet.size())]);
    auto res = get("/api/images/" + a, owner);
    if (!res) continue;
    EXPECT_EQ(res->body.find("do not serve"), std::string::npos) << a;
  }
}

TEST(ContentType, ByExtension) {
  EXPECT_EQ(content_type_for("a/b.PNG"), "image/png");
  EXPECT_EQ(content_type_for("x.jpeg"), "image/jpeg");
  EXPECT_EQ(content_type_for("x"), "application/octet-stream");
}
