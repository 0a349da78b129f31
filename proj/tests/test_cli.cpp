#include "cli.hpp"

#include "mvmae/config.hpp"
#include "mvmae/data_pipeline.hpp"
#include "mvmae/report.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace mvmae;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mvmae_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Small synthetic run: 60 pairs, narrow backbone, one epoch per stage.
fs::path tiny_config(const fs::path& dir) {
  json j = {{"schema_version", 1},
            {"output_dir", (dir / "out").string()},
            {"data", {{"synthetic", {{"num_pairs", 60}}}}},
            {"backbone", {{"embed_dim", 8}, {"num_heads", 2}, {"decoder_dim", 8}}},
            {"objective", {{"beta", 0.01}, {"temperature", 0.1}}},
            {"pretrain", {{"epochs", 1}, {"batch_size", 8}}},
            {"finetune", {{"epochs", 1}, {"batch_size", 8}}},
            {"probe", {{"epochs", 2}}},
            {"eval", {{"budgets", {10, 20}}, {"seeds", {0}}}}};
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

}  // namespace

TEST_CASE("pairs: empty manifest, fixture and idempotence") {
  const fs::path dir = fresh_dir("pairs");
  std::string header = std::string(kManifestHeader) + "\nsubject_id\tstudy_id\timage_path\tprojection";
  for (auto n : kChexpertLabels) header += "\t" + std::string(n);
  header += "\n";
  std::ofstream(dir / "empty.tsv") << header;
  Result r = run({"pairs", "--manifest", (dir / "empty.tsv").string(), "--out", (dir / "e").string()});
  CHECK(r.code == 0);
  CHECK(slurp(dir / "e" / "pairs.tsv") == "subject_id\tstudy_id\tfrontal_ref\tlateral_ref\tlabels\n");

  auto row = [](const std::string& subject, const std::string& study, const std::string& ref,
                const std::string& proj) {
    std::string s = subject + "\t" + study + "\t" + ref + "\t" + proj;
    for (std::size_t i = 0; i < kNumChexpertLabels; ++i) s += i == 2 ? "\t1" : "\t0";
    return s + "\n";
  };
  std::ofstream(dir / "three.tsv") << header << row("p1", "a", "a_f0", "PA") << row("p1", "a", "a_l0", "LL")
                                   << row("p2", "b", "b_f0", "PA") << row("p2", "b", "b_f1", "AP")
                                   << row("p2", "b", "b_l0", "LL") << row("p2", "b", "b_l1", "Lateral")
                                   << row("p3", "c", "c_f0", "PA") << row("p3", "c", "c_f1", "PA")
                                   << row("p3", "c", "c_f2", "AP");
  r = run({"pairs", "--manifest", (dir / "three.tsv").string(), "--out", (dir / "t1").string()});
  REQUIRE(r.code == 0);
  const auto pairs = read_pairs(dir / "t1" / "pairs.tsv");
  CHECK(pairs.size() == 5);
  CHECK(pairs[0].labels[2] == 1);
  r = run({"pairs", "--manifest", (dir / "three.tsv").string(), "--out", (dir / "t2").string()});
  CHECK(slurp(dir / "t1" / "pairs.tsv") == slurp(dir / "t2" / "pairs.tsv"));
  CHECK(slurp(dir / "t1" / "split.tsv") == slurp(dir / "t2" / "split.tsv"));

  std::ofstream(dir / "bad.tsv") << header << row("p1", "a", "a_f0", "XR");
  r = run({"pairs", "--manifest", (dir / "bad.tsv").string(), "--out", (dir / "b").string()});
  CHECK(r.code == cli::kConfigInvalid);
  CHECK(r.err.find("row 3") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("invalid configs exit with the field path") {
  const fs::path dir = fresh_dir("badcfg");
  std::ofstream(dir / "c.json") << R"({"objective": {"temperature": -1}})";
  Result r = run({"pretrain", "-c", (dir / "c.json").string()});
  CHECK(r.code == cli::kConfigInvalid);
  CHECK(r.err.find("objective.temperature") != std::string::npos);

  std::ofstream(dir / "d.json") << R"({"pretrain": {"epochz": 1}})";
  r = run({"sweep", "-c", (dir / "d.json").string()});
  CHECK(r.code == cli::kConfigInvalid);
  CHECK(r.err.find("pretrain.epochz") != std::string::npos);

  r = run({"pretrain", "-c", tiny_config(dir).string(), "--set", "objective.nope=1"});
  CHECK(r.code == cli::kConfigInvalid);
  fs::remove_all(dir);
}

TEST_CASE("probe without a checkpoint is a contract violation") {
  const fs::path dir = fresh_dir("probe");
  const fs::path cfg = tiny_config(dir);
  CHECK(run({"probe", "-c", cfg.string()}).code == cli::kContractViolated);
  CHECK(run({"probe", "-c", cfg.string(), "--checkpoint", (dir / "nope.ckpt").string()}).code ==
        cli::kContractViolated);
  fs::remove_all(dir);
}

TEST_CASE("pretrain, finetune, probe and eval end to end") {
  const fs::path dir = fresh_dir("e2e");
  const std::string cfg = tiny_config(dir).string();
  const fs::path out = dir / "out";
  REQUIRE(run({"pretrain", "-c", cfg, "--objective", "mvmae"}).code == 0);
  const fs::path ckpt = out / "pretrain_mvmae_seed0.ckpt";
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(out / "pretrain_summary.json"));
  const json summary = json::parse(slurp(out / "pretrain_summary.json"));
  CHECK(summary.at("config_hash").get<std::string>().size() == 16);
  CHECK(summary.contains("wall_seconds"));
  CHECK(summary.contains("code_version"));

  REQUIRE(run({"finetune", "-c", cfg, "--init", ckpt.string(), "--budget", "10"}).code == 0);
  const fs::path f = out / "mvmae_10_seed0_frontal.ckpt";
  const fs::path l = out / "mvmae_10_seed0_lateral.ckpt";
  REQUIRE(fs::exists(f));
  REQUIRE(fs::exists(l));
  REQUIRE(run({"probe", "-c", cfg, "--checkpoint", ckpt.string(), "--budget", "10"}).code == 0);

  REQUIRE(run({"eval", "-c", cfg, "--frontal", f.string(), "--lateral", l.string(), "--csv",
               (dir / "a.csv").string()})
              .code == 0);
  REQUIRE(run({"eval", "-c", cfg, "--frontal", f.string(), "--lateral", l.string(), "--csv",
               (dir / "b.csv").string()})
              .code == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  const auto rows = read_eval_csv(dir / "a.csv");
  CHECK(rows.size() == 3 * kNumChexpertLabels);
  CHECK(rows[0].method == "mvmae");
  CHECK(rows[0].budget == 10);

  // swapped views are rejected
  CHECK(run({"eval", "-c", cfg, "--frontal", l.string(), "--lateral", f.string()}).code == cli::kContractViolated);
  fs::remove_all(dir);
}

TEST_CASE("sweep writes one row per method, scenario, budget, seed and label") {
  const fs::path dir = fresh_dir("sweep");
  const std::string cfg = tiny_config(dir).string();
  const Result r = run({"sweep", "-c", cfg});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = read_eval_csv(dir / "out" / "sweep.csv");
  // 3 fine-tuned methods x 2 budgets, plus 2 probes at the smallest budget
  CHECK(rows.size() == (3 * 2 + 2) * 3 * kNumChexpertLabels);
  std::set<std::tuple<std::string, std::string, long, std::uint64_t, std::string>> keys;
  for (const EvalRow& row : rows) keys.emplace(row.method, row.scenario, row.budget, row.seed, row.label);
  CHECK(keys.size() == rows.size());
  CHECK(fs::exists(dir / "out" / "report" / "table.md"));
  CHECK(fs::exists(dir / "out" / "report" / "ensemble.svg"));
  CHECK(fs::exists(dir / "out" / "sweep_summary.json"));
  CHECK(r.out.find("| Strategy |") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("report command") {
  const fs::path dir = fresh_dir("report");
  const Result r = run({"report", std::string(MVMAE_FIXTURE_DIR) + "/strategy_table.csv", "-o", dir.string()});
  CHECK(r.code == 0);
  CHECK(slurp(dir / "table.md") == slurp(fs::path(MVMAE_FIXTURE_DIR) / "strategy_table.md"));
  std::ofstream(dir / "bad.csv") << "method,seed\nx,0\n";
  const Result bad = run({"report", (dir / "bad.csv").string(), "-o", dir.string()});
  CHECK(bad.code == cli::kConfigInvalid);
  CHECK(bad.err.find("missing columns") != std::string::npos);
  fs::remove_all(dir);
}
