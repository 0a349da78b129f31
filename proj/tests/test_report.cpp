#include "mvmae/errors.hpp"
#include "mvmae/report.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mvmae;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::filesystem::path kFixtures = MVMAE_FIXTURE_DIR;

}  // namespace

TEST_CASE("reference comparison table renders exactly") {
  const auto rows = read_eval_csv(kFixtures / "strategy_table.csv");
  CHECK(rows.size() == 15);
  CHECK(render_strategy_table(rows) == slurp(kFixtures / "strategy_table.md"));
}

TEST_CASE("seed means and table budget") {
  const auto rows = parse_eval_csv(
      "method,scenario,budget,seed,label,auroc,macro_auroc\n"
      "mvmae,Frontal,200,0,a,0.6,0.6\n"
      "mvmae,Frontal,200,1,a,0.8,0.8\n"
      "mvmae,Frontal,full,0,a,0.9,0.9\n"
      "mvmae-probe,Frontal,500,0,a,0.5,0.5\n");
  const auto means = seed_mean_macro(rows);
  CHECK(means.at(MacroKey{"mvmae", "Frontal", 200}) == doctest::Approx(0.7));
  CHECK(table_budget(rows) == 500);
  CHECK(table_budget(parse_eval_csv("method,scenario,budget,seed,label,auroc,macro_auroc\n"
                                    "x,Frontal,full,0,a,0.5,0.5\nx,Frontal,300,0,a,0.5,0.5\n")) == 300);
}

TEST_CASE("schema errors list missing columns") {
  try {
    (void)parse_eval_csv("method,budget,seed,label\nmvmae,200,0,a\n");
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    const std::string what = e.what();
    CHECK(what.find("missing columns: scenario, auroc, macro_auroc") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_eval_csv("method,scenario,budget,seed,label,auroc,macro_auroc\nm,Frontal,zero,0,a,1,1\n"),
                  SchemaError);
  // columns in another order with an extra one
  const auto rows = parse_eval_csv("extra,macro_auroc,auroc,label,seed,budget,scenario,method\n"
                                   "z,0.5,skipped,a,3,full,Lateral,supervised\n");
  REQUIRE(rows.size() == 1);
  CHECK_FALSE(rows[0].auroc.has_value());
  CHECK(rows[0].budget == kFullBudget);
  CHECK(rows[0].seed == 3);
}

TEST_CASE("single-row CSV gives a one-cell table and a one-point plot") {
  const auto rows = parse_eval_csv("method,scenario,budget,seed,label,auroc,macro_auroc\n"
                                   "supervised,Frontal,100,0,a,0.61,0.61\n");
  CHECK(render_strategy_table(rows) ==
        "| Strategy | Modality | Fine-tuning | Linear Probing |\n|---|---|---|---|\n"
        "| Supervised | Frontal | 0.61 | - |\n\nLabel budget: 100\n");
  const std::string svg = render_budget_plot(rows, "Frontal");
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("<circle") != std::string::npos);
}

TEST_CASE("report files are byte-deterministic") {
  const auto rows = read_eval_csv(kFixtures / "strategy_table.csv");
  const auto a = std::filesystem::temp_directory_path() / "mvmae_report_a";
  const auto b = std::filesystem::temp_directory_path() / "mvmae_report_b";
  const auto pa = write_report(rows, a);
  const auto pb = write_report(rows, b);
  REQUIRE(pa.size() == 4);  // table plus one plot per scenario
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].filename() == pb[i].filename());
    CHECK(slurp(pa[i]) == slurp(pb[i]));
  }
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST_CASE("run summary fields") {
  RunSummary s;
  s.command = "sweep";
  s.overrides = {"objective.beta=0.5"};
  s.wall_seconds = 1.5;
  const json j = to_json(s);
  CHECK(j.at("command") == "sweep");
  CHECK(j.at("config_hash") == config_hash(s.config));
  CHECK(j.at("code_version").get<std::string>() == code_version());
  CHECK(j.at("overrides").size() == 1);
  CHECK(j.at("config").at("objective").at("beta") == s.config.objective.beta);
}
