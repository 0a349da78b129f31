#pragma once

// Reading evaluation CSVs back, the fine-tune vs. probe summary table,
// macro-AUROC vs. label-budget SVG plots, and the run summary document.

#include "mvmae/config.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mvmae {

struct EvalRow {
  std::string method;
  std::string scenario;
  long budget = kFullBudget;
  std::uint64_t seed = 0;
  std::string label;
  std::optional<double> auroc;  // nullopt for skipped labels
  double macro_auroc = 0.0;
};

/// Parses a CSV in the evaluation schema. Columns may come in any order;
/// extra columns are ignored. Throws SchemaError listing missing columns,
/// or naming the line of a malformed row.
std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path);
std::vector<EvalRow> parse_eval_csv(const std::string& text, const std::string& source = "<csv>");

/// Seed-averaged macro-AUROC keyed by (method, scenario, budget).
struct MacroKey {
  std::string method;
  std::string scenario;
  long budget;
  auto operator<=>(const MacroKey&) const = default;
};
std::map<MacroKey, double> seed_mean_macro(const std::vector<EvalRow>& rows);

/// Budget used for the strategy table: the smallest budget with probe rows,
/// else the smallest budget present. Full budget counts as the largest.
std::optional<long> table_budget(const std::vector<EvalRow>& rows);

/// Markdown table: Strategy | Modality | Fine-tuning | Linear Probing, two
/// decimals, "-" where a cell has no data.
std::string render_strategy_table(const std::vector<EvalRow>& rows);

/// One SVG per scenario: seed-mean macro-AUROC against label budget, one
/// polyline per method (probe methods dashed).
std::string render_budget_plot(const std::vector<EvalRow>& rows, const std::string& scenario);

/// Writes table.md and one <scenario>.svg per scenario present. Returns the written paths.
std::vector<std::filesystem::path> write_report(const std::vector<EvalRow>& rows,
                                                const std::filesystem::path& out_dir);

/// Version string baked in at configure time (git describe), or "unknown".
std::string code_version();

struct RunSummary {
  std::string command;
  RunConfig config;
  std::vector<std::string> overrides;
  double wall_seconds = 0.0;
  json results = json::object();
};

json to_json(const RunSummary& s);
void write_run_summary(const std::filesystem::path& path, const RunSummary& s);

}  // namespace mvmae
