#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>

#include "hitl/pipeline.hpp"
#include "test_support.hpp"

using namespace hitl;

namespace {

struct Run {
  int status = -1;
  std::string output;  // stdout and stderr
};

Run cli(const std::string& args) {
  Run r;
  const std::string cmd = std::string(HITL_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

// Runs every stage, with simulated reviewers between allocate and export.
void run_campaign(const std::filesystem::path& config) {
  const std::string c = "--config " + config.string();
  for (const char* stage : {"triage", "allocate"}) {
    auto r = cli(std::string(stage) + " " + c);
    ASSERT_EQ(r.status, 0) << stage << ": " << r.output;
  }
  {
    auto cfg = load_campaign_config(config);
    auto store = open_campaign_store(cfg, campaign_store_path(cfg));
    fixtures::simulate_reviews(store, cfg.seed);
  }
  for (const char* stage : {"export", "analyze agreement", "analyze errors", "report"}) {
    auto r = cli(std::string(stage) + " " + c);
    ASSERT_EQ(r.status, 0) << stage << ": " << r.output;
  }
}

const std::vector<std::string> kOutputs = {
    files::kTriageSelected, files::kTriageCounts, files::kPlan,        files::kAllocationSummary,
    files::kReviews,        files::kTimings,      files::kAgreementJson,   files::kAgreementText,
    files::kTimeUsage,      files::kErrorsJson,       files::kClassErrors, files::kFig2,
    files::kTopMisclassified, files::kConfusionFlows, files::kTradeoff, files::kReport};

}  // namespace

TEST(CliPipeline, EndToEndMatchesGolden) {
  fixtures::TempDir dir("hitl-e2e");
  auto config = fixtures::write_campaign(dir.path(), 200, 1950);
  run_campaign(config);
  if (HasFatalFailure()) return;

  const auto out = dir.path() / "out";
  for (const auto& f : kOutputs) EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  const auto report = fixtures::read_text(out / files::kReport);
  for (const char* heading : {"# Campaign report", "## Triage", "## Allocation", "## Corrected machine learning labels",
                              "## Verification and correction quality", "## Labeling consistency",
                              "## Model classification error analysis", "## Time usage"})
    EXPECT_NE(report.find(heading), std::string::npos) << heading;
  EXPECT_EQ(report.find("No overlap data."), std::string::npos);
  EXPECT_EQ(report.find(dir.path().string()), std::string::npos) << "report leaks a temp path";

  const std::filesystem::path golden = std::filesystem::path(HITL_GOLDEN_DIR) / "campaign_report.md";
  if (std::getenv("HITL_UPDATE_GOLDEN")) fixtures::write_text(golden, report);
  ASSERT_TRUE(std::filesystem::exists(golden)) << "run with HITL_UPDATE_GOLDEN=1 to create " << golden;
  EXPECT_EQ(report, fixtures::read_text(golden));
}

TEST(CliPipeline, RerunIsByteIdentical) {
  fixtures::TempDir a("hitl-e2e-a"), b("hitl-e2e-b");
  run_campaign(fixtures::write_campaign(a.path(), 120, 7));
  run_campaign(fixtures::write_campaign(b.path(), 120, 7));
  if (HasFatalFailure()) return;
  for (const auto& f : kOutputs) {
    if (f == files::kStore) continue;
    EXPECT_EQ(fixtures::read_text(a.path() / "out" / f), fixtures::read_text(b.path() / "out" / f)) << f;
  }
}

TEST(CliPipeline, MissingPrerequisiteNamesTheStage) {
  fixtures::TempDir dir("hitl-e2e-missing");
  auto config = fixtures::write_campaign(dir.path(), 30, 1);
  auto r = cli("allocate --config " + config.string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find(files::kTriageSelected), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("triage"), std::string::npos) << r.output;
  r = cli("report --config " + config.string());
  EXPECT_EQ(r.status, 1);
  r = cli("export --config " + config.string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("serve"), std::string::npos) << r.output;
}

TEST(CliPipeline, BadManifestExitsWithRowDiagnostics) {
  fixtures::TempDir dir("hitl-e2e-bad");
  auto config = fixtures::write_campaign(dir.path(), 10, 1);
  fixtures::write_text(dir.path() / "manifest.csv",
                       "image_id,image_ref,model_label,model_confidence\na,a.png,531,2.0\nb,b.png,531,0.1\n");
  auto r = cli("triage --config " + config.string());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("row 2"), std::string::npos) << r.output;
}

TEST(CliPipeline, UsageErrors) {
  EXPECT_NE(cli("").status, 0);
  EXPECT_NE(cli("triage").status, 0);
  EXPECT_NE(cli("triage --config /nonexistent.toml").status, 0);
  EXPECT_NE(cli("analyze").status, 0);
}

TEST(CliPipeline, SeedOverrideChangesAllocation) {
  fixtures::TempDir dir("hitl-e2e-seed");
  auto config = fixtures::write_campaign(dir.path(), 150, 3);
  const std::string c = "--config " + config.string();
  ASSERT_EQ(cli("triage " + c).status, 0);
  ASSERT_EQ(cli("allocate " + c).status, 0);
  auto first = fixtures::read_text(dir.path() / "out" / files::kPlan);
  ASSERT_EQ(cli("allocate " + c + " --seed 4").status, 0);
  EXPECT_NE(first, fixtures::read_text(dir.path() / "out" / files::kPlan));
  ASSERT_EQ(cli("allocate " + c + " --seed 3").status, 0);
  EXPECT_EQ(first, fixtures::read_text(dir.path() / "out" / files::kPlan));
}
