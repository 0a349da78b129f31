#pragma once

// Run configuration: one JSON document per run, schema-versioned. Unknown
// keys are rejected with their full path.

#include "mvmae/data_pipeline.hpp"
#include "mvmae/objectives.hpp"
#include "mvmae/synthetic_views.hpp"
#include "mvmae/vision_backbone.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mvmae {

using json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

struct OptimizerConfig {
  double lr = 1e-3;
  double min_lr = 1e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_epochs = 1;
};

struct AugmentConfig {
  bool random_resized_crop = false;
  double crop_min_scale = 0.6;
  bool horizontal_flip = false;
  bool intensity_jitter = false;
  double jitter_strength = 0.1;
};

struct StageConfig {
  int epochs = 10;
  std::int64_t min_steps = 0;  // more epochs when a small budget would give fewer steps
  int batch_size = 32;
  OptimizerConfig optimizer;
  AugmentConfig augment;
};

struct ObjectiveConfig {
  double mask_ratio = 0.75;
  double beta = 1.0;
  double temperature = 0.1;
  AlignMode align_mode = AlignMode::shared_visible;
  ContrastiveDenominator denominator = ContrastiveDenominator::negatives_only;
  bool norm_pix_loss = false;
};

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "manifest"
  std::string manifest;
  std::string data_root;  // relative image paths resolve here; MVMAE_DATA_ROOT overrides when empty
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  PreprocessConfig preprocess;
  SyntheticSpec synthetic;
};

/// Label budgets: positive counts, or kFullBudget for the whole training split.
inline constexpr long kFullBudget = -1;

struct EvalConfig {
  std::vector<std::string> methods{"supervised", "mvmae", "contrastive"};
  std::vector<long> budgets{kFullBudget};
  std::vector<std::uint64_t> seeds{0};
  bool linear_probe = true;
  std::vector<long> probe_budgets;  // empty: smallest budget only
  int workers = 0;                  // seeds run in parallel; 0 = one per hardware thread
};

/// Pass thresholds for the synthetic end-to-end acceptance run.
struct AcceptanceConfig {
  double min_pretrain_margin = 0.03;
  double min_finetune_over_probe = 0.0;
};

struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DataConfig data;
  BackboneConfig backbone;
  ObjectiveConfig objective;
  StageConfig pretrain;
  StageConfig finetune;
  StageConfig probe;
  EvalConfig eval;
  AcceptanceConfig acceptance;

  /// Cross-section consistency (image size, channels, patch divisibility).
  void validate() const;
};

RunConfig run_config_from_json(const json& j);
json to_json(const RunConfig& c);
json to_json(const BackboneConfig& c);
BackboneConfig backbone_config_from_json(const json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies "a.b.c=value" to a config document; value is parsed as JSON when
/// possible, otherwise taken as a string. The key path must already exist.
void apply_override(json& document, const std::string& assignment);

/// Hex FNV-1a over the canonical (fully resolved) serialization.
std::string config_hash(const RunConfig& c);

std::string budget_name(long budget);
long parse_budget(const json& j);

}  // namespace mvmae
