#include "cli.hpp"

#include "mvmae/checkpoint.hpp"
#include "mvmae/config.hpp"
#include "mvmae/data_pipeline.hpp"
#include "mvmae/errors.hpp"
#include "mvmae/report.hpp"
#include "mvmae/train_eval.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>
#include <set>

namespace mvmae::cli {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct ConfigOptions {
  std::string path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_config_options(CLI::App& cmd, ConfigOptions& o) {
  cmd.add_option("-c,--config", o.path, "Run config (JSON)")->required();
  cmd.add_option("--set", o.overrides, "Override a config field, e.g. --set pretrain.epochs=2");
  cmd.add_option("--seed", o.seed, "Training seed (defaults to the config's seed)");
}

RunConfig resolve_config(const ConfigOptions& o) {
  RunConfig base = load_run_config(o.path);
  if (o.overrides.empty()) return base;
  json doc = to_json(base);
  for (const std::string& a : o.overrides) apply_override(doc, a);
  return run_config_from_json(doc);
}

void summarize(const std::string& command, const RunConfig& config, const ConfigOptions& o, Clock::time_point t0,
               json results) {
  RunSummary s;
  s.command = command;
  s.config = config;
  s.overrides = o.overrides;
  s.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  s.results = std::move(results);
  write_run_summary(fs::path(config.output_dir) / (command + "_summary.json"), s);
}

std::vector<View> parse_views(const std::string& v) {
  if (v == "frontal") return {View::frontal};
  if (v == "lateral") return {View::lateral};
  if (v == "both") return {View::frontal, View::lateral};
  throw ConfigError("--view: expected frontal, lateral or both");
}

std::string view_name(View v) { return v == View::frontal ? "frontal" : "lateral"; }

long resolve_budget(const std::string& text, const RunConfig& config) {
  if (text.empty()) return config.eval.budgets.front();
  if (text == "full") return kFullBudget;
  try {
    std::size_t used = 0;
    const long b = std::stol(text, &used);
    if (used == text.size() && b > 0) return b;
  } catch (const std::exception&) {
  }
  throw ConfigError("--budget: expected a positive integer or \"full\"");
}

// Shared by finetune and probe: trains one classifier per requested view.
json train_classifiers(const RunConfig& config, const Checkpoint* init, const std::string& method, long budget_size,
                       std::uint64_t seed, const std::vector<View>& views, bool probe, std::ostream& out) {
  PairedDataset data = make_dataset(config);
  const LabelBudget budget = sample_budget(data, budget_size, seed);
  json written = json::array();
  for (View v : views) {
    const ClassifierResult r = probe ? linear_probe(init, budget, config, data, v, seed)
                                     : finetune(init, budget, config, data, v, seed);
    Checkpoint ckpt = r.classifier.to_checkpoint(method, seed, r.history.steps);
    ckpt.metadata.extra["method"] = method;
    ckpt.metadata.extra["budget"] = budget_name(budget_size);
    const fs::path path = fs::path(config.output_dir) /
                          (method + "_" + budget_name(budget_size) + "_seed" + std::to_string(seed) + "_" +
                           view_name(v) + ".ckpt");
    save_checkpoint(path, ckpt);
    const double best = r.history.best_epoch >= 0 ? r.history.val_macro[static_cast<std::size_t>(r.history.best_epoch)]
                                                  : std::nan("");
    out << view_name(v) << ": " << path.string() << " (best val macro-AUROC " << format_double(best) << ", epoch "
        << r.history.best_epoch << ")\n";
    written.push_back({{"view", view_name(v)},
                       {"checkpoint", path.string()},
                       {"best_epoch", r.history.best_epoch},
                       {"val_macro_auroc", r.history.val_macro}});
  }
  return written;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-view masked autoencoder pretraining and evaluation", "mvmae"};
  app.require_subcommand(1);

  // pairs
  auto* pairs = app.add_subcommand("pairs", "Enumerate frontal/lateral pairs and split subjects");
  std::string manifest_path;
  std::string pairs_out;
  std::uint64_t pairs_seed = 0;
  std::vector<double> ratios{0.8, 0.1, 0.1};
  pairs->add_option("--manifest", manifest_path, "Study manifest (TSV)")->required();
  pairs->add_option("-o,--out", pairs_out, "Output directory")->required();
  pairs->add_option("--seed", pairs_seed, "Split seed");
  pairs->add_option("--ratios", ratios, "Train/val/test ratios")->expected(3);

  // pretrain
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Self-supervised pretraining");
  ConfigOptions pre_opts;
  std::string objective_name = "mvmae";
  add_config_options(*pretrain_cmd, pre_opts);
  pretrain_cmd->add_option("--objective", objective_name, "mvmae or contrastive");

  // finetune
  auto* finetune_cmd = app.add_subcommand("finetune", "Fine-tune encoder and head on a label budget");
  ConfigOptions ft_opts;
  std::string init_path;
  std::string ft_budget;
  std::string ft_view = "both";
  add_config_options(*finetune_cmd, ft_opts);
  finetune_cmd->add_option("--init", init_path, "Pretrained checkpoint (omit to train from scratch)");
  finetune_cmd->add_option("--budget", ft_budget, "Labeled pairs, or 'full'");
  finetune_cmd->add_option("--view", ft_view, "frontal, lateral or both");

  // probe
  auto* probe_cmd = app.add_subcommand("probe", "Linear probe on a frozen pretrained encoder");
  ConfigOptions probe_opts;
  std::string probe_ckpt;
  std::string probe_budget;
  std::string probe_view = "both";
  add_config_options(*probe_cmd, probe_opts);
  probe_cmd->add_option("--checkpoint", probe_ckpt, "Pretrained checkpoint");
  probe_cmd->add_option("--budget", probe_budget, "Labeled pairs, or 'full'");
  probe_cmd->add_option("--view", probe_view, "frontal, lateral or both");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score saved classifiers and write per-label AUROC CSV");
  ConfigOptions eval_opts;
  std::string frontal_ckpt;
  std::string lateral_ckpt;
  std::string eval_split = "test";
  std::string eval_csv;
  add_config_options(*eval_cmd, eval_opts);
  eval_cmd->add_option("--frontal", frontal_ckpt, "Frontal classifier checkpoint")->required();
  eval_cmd->add_option("--lateral", lateral_ckpt, "Lateral classifier checkpoint")->required();
  eval_cmd->add_option("--split", eval_split, "train, val or test");
  eval_cmd->add_option("--csv", eval_csv, "Output CSV (default <output_dir>/eval.csv)");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Full label-efficiency sweep over methods, budgets and seeds");
  ConfigOptions sweep_opts;
  add_config_options(*sweep_cmd, sweep_opts);

  // report
  auto* report_cmd = app.add_subcommand("report", "Render plots and the strategy table from evaluation CSVs");
  std::vector<std::string> csvs;
  std::string report_out;
  report_cmd->add_option("csv", csvs, "Evaluation CSVs")->required();
  report_cmd->add_option("-o,--out", report_out, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const auto t0 = Clock::now();
  try {
    if (*pairs) {
      if (ratios.size() != 3) throw ConfigError("--ratios: expected three values");
      const std::vector<StudyRecord> studies = load_manifest(manifest_path);
      const std::vector<ViewPair> enumerated = enumerate_pairs(studies);
      std::set<std::string> subjects;
      for (const StudyRecord& s : studies) subjects.insert(s.subject_id);
      fs::create_directories(pairs_out);
      write_pairs(fs::path(pairs_out) / "pairs.tsv", enumerated);
      SplitAssignment split;
      split.seed = pairs_seed;
      split.ratios = {ratios[0], ratios[1], ratios[2]};
      if (!subjects.empty()) split = split_subjects(subjects, split.ratios, pairs_seed);
      write_split(fs::path(pairs_out) / "split.tsv", split);
      out << enumerated.size() << " pairs from " << studies.size() << " studies, " << subjects.size()
          << " subjects\n";
      return kOk;
    }
    if (*pretrain_cmd) {
      const RunConfig config = resolve_config(pre_opts);
      const Objective objective = parse_objective(objective_name);
      if (objective == Objective::supervised) throw ConfigError("--objective: must be mvmae or contrastive");
      const std::uint64_t seed = pre_opts.seed.value_or(config.seed);
      PairedDataset data = make_dataset(config);
      const PretrainResult r = pretrain(config, objective, data, seed);
      const std::string stem = "pretrain_" + objective_name + "_seed" + std::to_string(seed);
      const fs::path ckpt = fs::path(config.output_dir) / (stem + ".ckpt");
      save_checkpoint(ckpt, r.checkpoint);
      std::ofstream log(fs::path(config.output_dir) / (stem + "_loss.csv"), std::ios::binary | std::ios::trunc);
      log << "epoch,total,rec,align,contrastive\n";
      json losses = json::array();
      for (const EpochLoss& e : r.log) {
        log << e.epoch << ',' << format_double(e.total) << ',' << format_double(e.rec) << ','
            << format_double(e.align) << ',' << format_double(e.contrastive) << '\n';
        losses.push_back(e.total);
        out << "epoch " << e.epoch << " loss " << format_double(e.total) << '\n';
      }
      out << "checkpoint: " << ckpt.string() << '\n';
      summarize("pretrain", config, pre_opts, t0,
                {{"objective", objective_name}, {"seed", seed}, {"checkpoint", ckpt.string()}, {"epoch_loss", losses}});
      return kOk;
    }
    if (*finetune_cmd) {
      const RunConfig config = resolve_config(ft_opts);
      const std::uint64_t seed = ft_opts.seed.value_or(config.seed);
      std::optional<Checkpoint> init;
      if (!init_path.empty()) init = load_checkpoint(init_path);
      const std::string method = init ? init->metadata.objective : "supervised";
      const long budget = resolve_budget(ft_budget, config);
      json written = train_classifiers(config, init ? &*init : nullptr, method, budget, seed, parse_views(ft_view),
                                       false, out);
      summarize("finetune", config, ft_opts, t0,
                {{"method", method}, {"budget", budget_name(budget)}, {"seed", seed}, {"classifiers", written}});
      return kOk;
    }
    if (*probe_cmd) {
      const RunConfig config = resolve_config(probe_opts);
      if (probe_ckpt.empty()) throw ContractError("probe requires --checkpoint with a pretrained encoder");
      const Checkpoint init = load_checkpoint(probe_ckpt);
      const std::uint64_t seed = probe_opts.seed.value_or(config.seed);
      const std::string method = init.metadata.objective + "-probe";
      const long budget = resolve_budget(probe_budget, config);
      json written = train_classifiers(config, &init, method, budget, seed, parse_views(probe_view), true, out);
      summarize("probe", config, probe_opts, t0,
                {{"method", method}, {"budget", budget_name(budget)}, {"seed", seed}, {"classifiers", written}});
      return kOk;
    }
    if (*eval_cmd) {
      const RunConfig config = resolve_config(eval_opts);
      const Checkpoint fc = load_checkpoint(frontal_ckpt);
      const Checkpoint lc = load_checkpoint(lateral_ckpt);
      const Classifier f = Classifier::from_checkpoint(fc);
      const Classifier l = Classifier::from_checkpoint(lc);
      if (f.view() != View::frontal || l.view() != View::lateral) {
        throw ContractError("--frontal/--lateral checkpoints were trained on the other view");
      }
      const std::string method = fc.metadata.extra.value("method", fc.metadata.objective);
      const long budget = fc.metadata.extra.contains("budget")
                              ? (fc.metadata.extra["budget"] == "full" ? kFullBudget
                                                                       : std::stol(fc.metadata.extra["budget"].get<std::string>()))
                              : kFullBudget;
      const std::uint64_t seed = eval_opts.seed.value_or(fc.metadata.seed);
      PairedDataset data = make_dataset(config);
      const Split split = parse_split(eval_split);
      const std::vector<EvalReport> reports = evaluate(f, l, data, split, method, budget, seed);
      const fs::path csv = eval_csv.empty() ? fs::path(config.output_dir) / "eval.csv" : fs::path(eval_csv);
      write_eval_csv(csv, reports);
      json results = json::object();
      for (const EvalReport& r : reports) {
        out << to_string(r.scenario) << " macro-AUROC " << format_double(r.macro_auroc) << '\n';
        results[to_string(r.scenario)] = r.macro_auroc;
      }
      out << "csv: " << csv.string() << '\n';
      summarize("eval", config, eval_opts, t0, {{"csv", csv.string()}, {"macro_auroc", results}});
      return kOk;
    }
    if (*sweep_cmd) {
      const RunConfig config = resolve_config(sweep_opts);
      const SweepResult r = run_sweep(config, config.output_dir, &out);
      const std::vector<EvalRow> rows = read_eval_csv(fs::path(config.output_dir) / "sweep.csv");
      write_report(rows, fs::path(config.output_dir) / "report");
      json means = json::array();
      for (const auto& [key, v] : seed_mean_macro(rows)) {
        means.push_back({{"method", key.method}, {"scenario", key.scenario}, {"budget", budget_name(key.budget)},
                         {"mean_macro_auroc", v}});
      }
      out << render_strategy_table(rows);
      summarize("sweep", config, sweep_opts, t0, {{"csv", (fs::path(config.output_dir) / "sweep.csv").string()},
                                                   {"mean_macro_auroc", means}});
      return kOk;
    }
    if (*report_cmd) {
      std::vector<EvalRow> rows;
      for (const std::string& p : csvs) {
        std::vector<EvalRow> part = read_eval_csv(p);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      for (const fs::path& p : write_report(rows, report_out)) out << p.string() << '\n';
      out << render_strategy_table(rows);
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigInvalid;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return kConfigInvalid;
  } catch (const MalformedMetadataError& e) {
    err << "malformed metadata: " << e.what() << '\n';
    return kConfigInvalid;
  } catch (const ContractError& e) {
    err << "contract error: " << e.what() << '\n';
    return kContractViolated;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace mvmae::cli
