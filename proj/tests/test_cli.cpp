#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sys/wait.h>

#include <json.hpp>

#include "../tools/cli_support.hpp"
#include "pagg/pagg.hpp"
#include "test_util.hpp"

using namespace pagg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(PAGG_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

bool same_bytes(const fs::path& a, const fs::path& b) {
  return detail::read_file_bytes(a) == detail::read_file_bytes(b);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    for (auto c : detail::split_csv_line(line)) cells.emplace_back(c);
    rows.push_back(cells);
  }
  return rows;
}

// Planted cohort with mirrored class profiles, written through the library.
fs::path planted_cohort(const testutil::TempDir& dir, std::uint64_t seed, const std::string& name) {
  auto spec = testutil::planted_spec(4, 4, 24, 1.0, seed);
  const fs::path p = dir / name;
  save_cohort(generate_synthetic_cohort(spec), p);
  return p;
}

}  // namespace

TEST(Cli, GenerateIsDeterministicAndLoadable) {
  testutil::TempDir dir("cli");
  const std::string flags = "generate --sets 40 --d 8 --components 3 --seed 1 -o ";
  ASSERT_EQ(run(flags + q(dir / "a.pagg")).code, 0);
  ASSERT_EQ(run(flags + q(dir / "b.pagg")).code, 0);
  EXPECT_TRUE(same_bytes(dir / "a.pagg", dir / "b.pagg"));
  const Cohort c = load_cohort(dir / "a.pagg");
  EXPECT_EQ(c.size(), 40u);
  EXPECT_EQ(c.dim(), 8);
  EXPECT_TRUE(fs::exists(dir / "a.pagg.manifest.json"));
  const auto manifest = nlohmann::json::parse(detail::read_file_text(dir / "a.pagg.manifest.json"));
  EXPECT_EQ(manifest["command"], "generate");
  EXPECT_EQ(manifest["config"]["sets"], "40");
}

TEST(Cli, GenerateCsvRoundTripsThroughLibrary) {
  testutil::TempDir dir("cli");
  ASSERT_EQ(run("generate --sets 3 --d 2 --seed 4 -o " + q(dir / "c.csv")).code, 0);
  const Cohort a = load_cohort(dir / "c.csv", CohortFormat::csv);
  ASSERT_EQ(run("generate --sets 3 --d 2 --seed 4 -o " + q(dir / "c.pagg")).code, 0);
  const Cohort b = load_cohort(dir / "c.pagg");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(a[j].features(), b[j].features());
}

TEST(Cli, UsageErrorsExitOne) {
  testutil::TempDir dir("cli");
  auto r = run("generate --components 0 -o " + q(dir / "x.pagg"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("components"), std::string::npos);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("generate").code, 1);
  EXPECT_EQ(run("bogus").code, 1);
  EXPECT_EQ(run("generate --sets notanumber -o " + q(dir / "x.pagg")).code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, RuntimeErrorsExitTwo) {
  testutil::TempDir dir("cli");
  detail::write_file_text(dir / "junk.pagg", "not a cohort");
  auto r = run("fit-prototypes --cohort " + q(dir / "junk.pagg") + " -o " + q(dir / "b.pbnk"));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(run("fit-prototypes --cohort " + q(dir / "missing.pagg") + " -o " + q(dir / "b.pbnk")).code, 2);
}

TEST(Cli, FitPrototypesDeterministicAndChecksPoolSize) {
  testutil::TempDir dir("cli");
  ASSERT_EQ(run("generate --sets 2 --d 2 --n-min 3 --n-max 3 --seed 2 -o " + q(dir / "tiny.pagg")).code, 0);
  auto r = run("fit-prototypes --cohort " + q(dir / "tiny.pagg") + " -o " + q(dir / "b.pbnk"));
  EXPECT_EQ(r.code, 1) << r.output;  // 6 points < default C = 16
  const fs::path cohort = planted_cohort(dir, 3, "p.pagg");
  const std::string args = "fit-prototypes --cohort " + q(cohort) + " --C 4 --seed 5 -o ";
  ASSERT_EQ(run(args + q(dir / "b1.pbnk")).code, 0);
  ASSERT_EQ(run(args + q(dir / "b2.pbnk")).code, 0);
  EXPECT_TRUE(same_bytes(dir / "b1.pbnk", dir / "b2.pbnk"));
  KMeansConfig kc;
  kc.C = 4;
  kc.seed = 5;
  EXPECT_EQ(load_bank(dir / "b1.pbnk"), fit_prototypes(load_cohort(cohort), kc));
}

TEST(Cli, EmbedMatchesLibraryForEveryMethod) {
  testutil::TempDir dir("cli");
  const fs::path cohort = planted_cohort(dir, 6, "p.pagg");
  ASSERT_EQ(run("fit-prototypes --cohort " + q(cohort) + " --C 4 -o " + q(dir / "b.pbnk")).code, 0);
  const Cohort c = load_cohort(cohort);
  const PrototypeBank bank = load_bank(dir / "b.pbnk");
  for (auto name : kMethodNames) {
    const fs::path out = dir / (std::string(name) + ".pemb");
    auto r = run("embed --cohort " + q(cohort) + " --bank " + q(dir / "b.pbnk") + " --method " +
                 std::string(name) + " --threads 2 -o " + q(out));
    ASSERT_EQ(r.code, 0) << r.output;
    const auto cli_embs = load_embeddings(out);
    const auto api = embed_cohort(c, bank, *method_from_string(name)).embeddings;
    ASSERT_EQ(cli_embs.size(), api.size());
    for (std::size_t j = 0; j < api.size(); ++j) {
      EXPECT_EQ(cli_embs[j].set_id, api[j].set_id);
      EXPECT_EQ(cli_embs[j].values, api[j].values.cast<float>().cast<double>()) << name;
    }
  }
  EXPECT_EQ(load_embeddings(dir / "deepsets.pemb").front().values.size(), 4);
  EXPECT_TRUE(fs::exists(dir / "panther_all.pemb.targets.csv"));
}

TEST(Cli, EmbedThreadCountDoesNotChangeBytes) {
  testutil::TempDir dir("cli");
  const fs::path cohort = planted_cohort(dir, 7, "p.pagg");
  ASSERT_EQ(run("fit-prototypes --cohort " + q(cohort) + " --C 4 -o " + q(dir / "b.pbnk")).code, 0);
  const std::string base = "embed --cohort " + q(cohort) + " --bank " + q(dir / "b.pbnk") + " --method panther_all ";
  ASSERT_EQ(run(base + "--threads 1 -o " + q(dir / "t1.pemb")).code, 0);
  ASSERT_EQ(run(base + "--threads 3 -o " + q(dir / "t3.pemb")).code, 0);
  EXPECT_TRUE(same_bytes(dir / "t1.pemb", dir / "t3.pemb"));
}

TEST(Cli, EmbedUnknownMethodListsValidOnes) {
  testutil::TempDir dir("cli");
  const fs::path cohort = planted_cohort(dir, 8, "p.pagg");
  auto r = run("embed --cohort " + q(cohort) + " --method panther -o " + q(dir / "e.pemb"));
  EXPECT_EQ(r.code, 1);
  for (auto name : kMethodNames) EXPECT_NE(r.output.find(std::string(name)), std::string::npos);
}

TEST(Cli, ProbeSeparableTaskAndDeterminism) {
  testutil::TempDir dir("cli");
  const fs::path cohort = planted_cohort(dir, 9, "p.pagg");
  ASSERT_EQ(run("fit-prototypes --cohort " + q(cohort) + " --C 4 -o " + q(dir / "b.pbnk")).code, 0);
  ASSERT_EQ(run("embed --cohort " + q(cohort) + " --bank " + q(dir / "b.pbnk") +
                " --method protocounts -o " + q(dir / "e.pemb")).code, 0);
  const std::string probe = "probe --train-emb " + q(dir / "e.pemb") +
                            " --lr 5e-2 --epochs 50 --batch-size 8 --schedule constant --seed 3 -o ";
  auto r = run(probe + q(dir / "h1.phed"));
  ASSERT_EQ(r.code, 0) << r.output;
  ASSERT_EQ(run(probe + q(dir / "h2.phed")).code, 0);
  EXPECT_TRUE(same_bytes(dir / "h1.phed", dir / "h2.phed"));
  const auto log = read_csv(dir / "h1.phed.log.csv");
  ASSERT_EQ(log.size(), 51u);
  EXPECT_EQ(log[0][2], "train_balanced_accuracy");
  EXPECT_EQ(log.back()[2], "1");

  r = run("probe --train-emb " + q(dir / "e.pemb") + " --loss cox -o " + q(dir / "h3.phed"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("target kind mismatch"), std::string::npos);
}

TEST(Cli, ProbeEarlyStopsOnValidationLoss) {
  testutil::TempDir dir("cli");
  const fs::path train = planted_cohort(dir, 10, "t.pagg");
  const fs::path val = planted_cohort(dir, 11, "v.pagg");
  ASSERT_EQ(run("fit-prototypes --cohort " + q(train) + " --C 4 -o " + q(dir / "b.pbnk")).code, 0);
  for (auto [c, e] : {std::pair{train, "t.pemb"}, std::pair{val, "v.pemb"}})
    ASSERT_EQ(run("embed --cohort " + q(c) + " --bank " + q(dir / "b.pbnk") + " --method panther_all -o " +
                  q(dir / e)).code, 0);
  // lr 0: validation loss never improves after the first epoch
  auto r = run("probe --train-emb " + q(dir / "t.pemb") + " --val-emb " + q(dir / "v.pemb") +
               " --lr 0 --epochs 100 --patience 3 -o " + q(dir / "h.phed"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_csv(dir / "h.phed.log.csv").size(), 1u + 4u);
}

TEST(Cli, EvaluateMatchesLibraryClassification) {
  testutil::TempDir dir("cli");
  const fs::path cohort = planted_cohort(dir, 12, "p.pagg");
  ASSERT_EQ(run("fit-prototypes --cohort " + q(cohort) + " --C 4 -o " + q(dir / "b.pbnk")).code, 0);
  ASSERT_EQ(run("embed --cohort " + q(cohort) + " --bank " + q(dir / "b.pbnk") + " --method panther_wa -o " +
                q(dir / "e.pemb")).code, 0);
  ASSERT_EQ(run("probe --train-emb " + q(dir / "e.pemb") + " --epochs 5 -o " + q(dir / "h.phed")).code, 0);
  auto r = run("evaluate --emb " + q(dir / "e.pemb") + " --head " + q(dir / "h.phed") + " -o " +
               q(dir / "r.json") + " --csv " + q(dir / "r.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto report = nlohmann::json::parse(detail::read_file_text(dir / "r.json"));
  for (auto key : {"balanced_accuracy", "weighted_f1", "kappa_quadratic"})
    EXPECT_TRUE(report["metrics"].contains(key)) << key;

  const auto embs = load_embeddings(dir / "e.pemb");
  const auto head = load_head(dir / "h.phed");
  const Cohort c = load_cohort(cohort);
  std::vector<int> preds, labels;
  for (std::size_t j = 0; j < embs.size(); ++j) {
    preds.push_back(predict_class(head, embs[j]));
    labels.push_back(static_cast<int>(*c[j].target()->class_label));
  }
  const auto expect = classification_report(preds, labels, 2);
  for (const auto& [k, v] : expect.metrics) EXPECT_EQ(report["metrics"][k].get<double>(), v) << k;
  EXPECT_EQ(read_csv(dir / "r.csv").size(), 2u);
}

TEST(Cli, EvaluateSurvivalReportsCIndexAndPairs) {
  testutil::TempDir dir("cli");
  ASSERT_EQ(run("generate --sets 30 --d 4 --components 3 --survival --seed 13 -o " + q(dir / "s.pagg")).code, 0);
  ASSERT_EQ(run("fit-prototypes --cohort " + q(dir / "s.pagg") + " --C 3 -o " + q(dir / "b.pbnk")).code, 0);
  ASSERT_EQ(run("embed --cohort " + q(dir / "s.pagg") + " --bank " + q(dir / "b.pbnk") +
                " --method panther_all -o " + q(dir / "e.pemb")).code, 0);
  auto r = run("probe --train-emb " + q(dir / "e.pemb") + " --loss cox --epochs 5 --batch-size 16 -o " +
               q(dir / "h.phed"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_csv(dir / "h.phed.log.csv")[0][2], "train_c_index");
  ASSERT_EQ(run("evaluate --emb " + q(dir / "e.pemb") + " --head " + q(dir / "h.phed") + " -o " +
                q(dir / "r.json")).code, 0);
  const auto report = nlohmann::json::parse(detail::read_file_text(dir / "r.json"));
  ASSERT_TRUE(report["metrics"].contains("c_index"));
  ASSERT_TRUE(report.contains("n_comparable_pairs"));

  const auto embs = load_embeddings(dir / "e.pemb");
  const auto head = load_head(dir / "h.phed");
  const Cohort c = load_cohort(dir / "s.pagg");
  std::vector<double> risks, times;
  std::vector<bool> events;
  for (std::size_t j = 0; j < embs.size(); ++j) {
    risks.push_back(head.forward(embs[j])(0));
    times.push_back(*c[j].target()->time);
    events.push_back(*c[j].target()->event);
  }
  const auto ci = concordance_index(risks, times, events);
  EXPECT_EQ(report["metrics"]["c_index"].get<double>(), ci.value);
  EXPECT_EQ(report["n_comparable_pairs"].get<std::int64_t>(), ci.comparable_pairs);
}

TEST(Cli, InterpretMatchesLibrary) {
  testutil::TempDir dir("cli");
  const fs::path cohort = planted_cohort(dir, 14, "p.pagg");
  ASSERT_EQ(run("fit-prototypes --cohort " + q(cohort) + " --C 4 -o " + q(dir / "b.pbnk")).code, 0);
  auto r = run("interpret --cohort " + q(cohort) + " --bank " + q(dir / "b.pbnk") +
               " --set-id set01 --heatmap 2 --out-dir " + q(dir / "out"));
  ASSERT_EQ(r.code, 0) << r.output;
  const Cohort c = load_cohort(cohort);
  const auto& set = *c.find("set01");
  const auto fit = fit_set(set.features(), load_bank(dir / "b.pbnk"));
  const auto m = assignment_map(set.features(), fit.posteriors, fit.params, set.coords(), set.id());

  const auto rows = read_csv(dir / "out" / "set01.assign.csv");
  ASSERT_EQ(static_cast<Index>(rows.size()), set.size() + 1);
  for (Index n = 0; n < set.size(); ++n) {
    const auto& row = rows[static_cast<std::size_t>(n + 1)];
    EXPECT_EQ(std::stoll(row[2]), m.assigned[static_cast<std::size_t>(n)]);
    double sum = 0.0;
    for (std::size_t k = 3; k < row.size(); ++k) sum += std::stod(row[k]);
    EXPECT_NEAR(sum, 1.0, 1e-7);
  }
  const auto raw = detail::read_file_bytes(dir / "out" / "set01.assign.f32");
  std::uint32_t h = 0, w = 0;
  std::memcpy(&h, raw.data(), 4);
  std::memcpy(&w, raw.data() + 4, 4);
  const auto& xy = *set.coords();
  EXPECT_EQ(static_cast<Index>(w), xy.col(0).maxCoeff() - xy.col(0).minCoeff() + 1);
  EXPECT_EQ(static_cast<Index>(h), xy.col(1).maxCoeff() - xy.col(1).minCoeff() + 1);
  EXPECT_TRUE(fs::exists(dir / "out" / "set01.q2.pgm"));
  EXPECT_TRUE(fs::exists(dir / "out" / "pi_table.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest.json"));
}

TEST(Cli, ConfigFilesWithFlagPrecedence) {
  testutil::TempDir dir("cli");
  detail::write_file_text(dir / "c.toml", "[generate]\nsets = 5\nd = 3\nseed = 2\n[embed]\nmethod = \"ot\"\n");
  detail::write_file_text(dir / "c.json", "{\"sets\": 5, \"d\": 3, \"seed\": 2}\n");
  ASSERT_EQ(run("generate --config " + q(dir / "c.toml") + " -o " + q(dir / "a.pagg")).code, 0);
  ASSERT_EQ(run("--config " + q(dir / "c.json") + " generate -o " + q(dir / "b.pagg")).code, 0);
  ASSERT_EQ(run("generate --sets 5 --d 3 --seed 2 -o " + q(dir / "c.pagg")).code, 0);
  EXPECT_TRUE(same_bytes(dir / "a.pagg", dir / "c.pagg"));
  EXPECT_TRUE(same_bytes(dir / "b.pagg", dir / "c.pagg"));
  ASSERT_EQ(run("generate --config " + q(dir / "c.toml") + " --sets 2 -o " + q(dir / "d.pagg")).code, 0);
  EXPECT_EQ(load_cohort(dir / "d.pagg").size(), 2u);
}

TEST(Cli, ManifestsDifferOnlyInWallTime) {
  testutil::TempDir dir("cli");
  const fs::path cohort = planted_cohort(dir, 15, "p.pagg");
  auto manifest_without_time = [&](const std::string& out) {
    EXPECT_EQ(run("fit-prototypes --cohort " + q(cohort) + " --C 4 -o " + q(dir / out)).code, 0);
    auto j = nlohmann::json::parse(detail::read_file_text(dir / (out + ".manifest.json")));
    j.erase("wall_time_seconds");
    j["outputs"] = nullptr;
    j["config"].erase("out");
    return j;
  };
  EXPECT_EQ(manifest_without_time("a.pbnk"), manifest_without_time("b.pbnk"));
}
