// hitl-review: campaign driver.
//
//   hitl-review triage   --config campaign.toml
//   hitl-review allocate --config campaign.toml [--seed N]
//   hitl-review serve    --config campaign.toml [--bind host:port] [--campaign db] [--images-root dir]
//   hitl-review export   --config campaign.toml [--campaign db]
//   hitl-review analyze agreement --config campaign.toml
//   hitl-review analyze errors    --config campaign.toml
//   hitl-review report   --config campaign.toml

#include <CLI11.hpp>
#include <httplib.h>

#include <chrono>
#include <csignal>
#include <iostream>

#include "hitl/pipeline.hpp"
#include "hitl/review_service.hpp"

namespace {

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

int serve(const hitl::CampaignConfig& cfg, const std::string& bind, const std::filesystem::path& store_path,
          const std::filesystem::path& static_dir) {
  auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("--bind expects host:port");
  const std::string host = bind.substr(0, colon);
  const int port = std::stoi(bind.substr(colon + 1));

  auto store = hitl::open_campaign_store(cfg, store_path);
  auto corpus = hitl::detail::load_corpus(cfg);
  hitl::ServiceOptions opts;
  const std::int64_t now =
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
  for (const auto& [id, token] : cfg.reviewer_tokens)
    opts.tokens.push_back({id, token, cfg.tokens_issued_at.value_or(now)});
  opts.token_ttl_seconds = cfg.token_ttl_seconds;
  opts.images_root = cfg.images_root;
  opts.static_dir = static_dir;
  hitl::ReviewService service(store, corpus, std::move(opts));

  httplib::Server server;
  service.attach(server);
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  std::cerr << "serving " << store.pages().size() << " pages on http://" << bind << "\n";
  if (!server.listen(host, port)) {
    std::cerr << "error: cannot listen on " << bind << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Human review campaigns for machine-transcribed occupation codes"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string bind = "127.0.0.1:8080";
  std::string campaign;
  std::string images_root;
  std::string static_dir;

  auto with_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "campaign config (TOML)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "override the config seed");
  };
  auto* triage_cmd = app.add_subcommand("triage", "select images for manual review");
  auto* allocate_cmd = app.add_subcommand("allocate", "assign selected images to reviewers and paginate");
  auto* serve_cmd = app.add_subcommand("serve", "run the review service");
  auto* export_cmd = app.add_subcommand("export", "export submitted reviews and timings");
  auto* analyze_cmd = app.add_subcommand("analyze", "analyse exported reviews");
  auto* agreement_cmd = analyze_cmd->add_subcommand("agreement", "reviewer agreement, consistency and time usage");
  auto* errors_cmd = analyze_cmd->add_subcommand("errors", "model error analysis");
  analyze_cmd->require_subcommand(1);
  auto* report_cmd = app.add_subcommand("report", "merge analyses into a Markdown report");
  for (auto* cmd : {triage_cmd, allocate_cmd, serve_cmd, export_cmd, agreement_cmd, errors_cmd, report_cmd})
    with_config(cmd);
  serve_cmd->add_option("--bind", bind, "host:port");
  for (auto* cmd : {serve_cmd, export_cmd}) cmd->add_option("--campaign", campaign, "campaign database file");
  serve_cmd->add_option("--images-root", images_root, "directory holding the image files");
  serve_cmd->add_option("--static", static_dir, "directory with the browser UI build");

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = hitl::load_campaign_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!images_root.empty()) cfg.images_root = images_root;
    const std::filesystem::path store_path =
        campaign.empty() ? hitl::campaign_store_path(cfg) : std::filesystem::path(campaign);

    if (triage_cmd->parsed()) {
      auto result = hitl::run_triage(cfg);
      std::cout << "selected " << result.selected.size() << " of " << result.considered << " images\n";
      for (std::size_t i = 0; i < hitl::kReasonPriority.size(); ++i)
        std::cout << "  " << hitl::to_string(hitl::kReasonPriority[i]) << ": " << result.by_primary[i] << "\n";
    } else if (allocate_cmd->parsed()) {
      auto pages = hitl::run_allocate(cfg);
      std::cout << "wrote " << pages.size() << " pages to " << cfg.out(hitl::files::kPlan).string() << "\n";
    } else if (serve_cmd->parsed()) {
      return serve(cfg, bind, store_path, static_dir);
    } else if (export_cmd->parsed()) {
      hitl::run_export(cfg, store_path);
      std::cout << "wrote " << cfg.out(hitl::files::kReviews).string() << "\n";
    } else if (agreement_cmd->parsed()) {
      std::cout << hitl::text_summary(hitl::run_analyze_agreement(cfg));
    } else if (errors_cmd->parsed()) {
      auto j = hitl::run_analyze_errors(cfg);
      std::cout << "labelled images: " << j["labeled_images"].get<std::size_t>()
                << ", misclassified: " << j["misclassified"].get<std::size_t>() << "\n";
    } else if (report_cmd->parsed()) {
      hitl::run_report(cfg);
      std::cout << "wrote " << cfg.out(hitl::files::kReport).string() << "\n";
    }
  } catch (const hitl::IngestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& d : e.diagnostics()) std::cerr << "  row " << d.row << ": " << d.message << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
