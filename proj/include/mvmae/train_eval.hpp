#pragma once

// Pretraining (MVMAE or contrastive), downstream fine-tuning and linear
// probing under label budgets, per-view and ensemble scoring, macro-AUROC
// reports and the label-efficiency sweep.

#include "mvmae/checkpoint.hpp"
#include "mvmae/config.hpp"
#include "mvmae/data_pipeline.hpp"
#include "mvmae/metrics.hpp"
#include "mvmae/objectives.hpp"
#include "mvmae/vision_backbone.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mvmae {

enum class Objective { mvmae, contrastive, supervised };
Objective parse_objective(const std::string& name);
std::string to_string(Objective o);

enum class Scenario { frontal, lateral, ensemble };
std::string to_string(Scenario s);  // "Frontal" / "Lateral" / "Ensemble"
Scenario parse_scenario(const std::string& name);

ImageTensor augment(const ImageTensor& image, const AugmentConfig& config, std::mt19937_64& rng);

/// Rescales every image by the pixel mean and standard deviation of the
/// training split (both views pooled).
void standardize_images(PairedDataset& data);

/// Builds the dataset a run config describes (synthetic or manifest-backed).
/// Synthetic images are standardized with standardize_images.
PairedDataset make_dataset(const RunConfig& config);

/// Backbone config of a run for a given training seed (init seed mixed with it).
BackboneConfig backbone_for_seed(const BackboneConfig& base, std::uint64_t seed);

/// Forward (and, when grad_scale != 0, backward) of the MVMAE objective for
/// one pair with fixed mask plans. Parameter gradients are accumulated
/// scaled by grad_scale.
LossBreakdown mvmae_pair_loss(VisionBackbone& backbone, const Eigen::MatrixXd& patches_f,
                              const Eigen::MatrixXd& patches_l, const MaskPlan& plan_f, const MaskPlan& plan_l,
                              const ObjectiveConfig& objective, double grad_scale);

/// Contrastive objective over a batch of unmasked pairs (CLS embeddings),
/// with the same gradient convention.
LossBreakdown contrastive_batch_loss(VisionBackbone& backbone, std::span<const Eigen::MatrixXd> patches_f,
                                     std::span<const Eigen::MatrixXd> patches_l, const ObjectiveConfig& objective,
                                     double grad_scale);

struct EpochLoss {
  int epoch = 0;
  double total = 0.0;
  double rec = 0.0;
  double align = 0.0;
  double contrastive = 0.0;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLoss> log;
};

/// Self-supervised pretraining on the training split (labels ignored).
/// Throws NumericError naming the step on a non-finite loss.
PretrainResult pretrain(const RunConfig& config, Objective objective, PairedDataset& data, std::uint64_t seed);

struct LabelBudget {
  long size = kFullBudget;
  std::uint64_t seed = 0;
  std::vector<std::size_t> pair_ids;  // indices into PairedDataset::pairs
};

/// Seeded permutation of the training pairs truncated to `size`; budgets
/// drawn with one seed are nested. Throws ConfigError past the pool size.
LabelBudget sample_budget(const PairedDataset& data, long size, std::uint64_t seed);

/// Backbone plus a linear head on the CLS embedding, trained for one view.
class Classifier {
 public:
  Classifier(const BackboneConfig& backbone, int num_labels, View view, std::uint64_t head_seed);

  VisionBackbone& backbone() { return backbone_; }
  const VisionBackbone& backbone() const { return backbone_; }
  ParameterStore& head() { return head_; }
  const ParameterStore& head() const { return head_; }
  View view() const { return view_; }
  int num_labels() const { return num_labels_; }

  /// 1 x num_labels logits on the tape.
  ag::Var logits(ag::Tape& tape, const ImageTensor& image);
  Eigen::RowVectorXd logits(const ImageTensor& image) const;
  Eigen::RowVectorXd head_logits(const Eigen::VectorXd& cls) const;

  Checkpoint to_checkpoint(const std::string& objective, std::uint64_t seed, std::int64_t step) const;
  static Classifier from_checkpoint(const Checkpoint& ckpt);

 private:
  VisionBackbone backbone_;
  ParameterStore head_;
  View view_;
  int num_labels_;
};

struct TrainHistory {
  std::vector<double> val_macro;  // one per epoch
  int best_epoch = -1;            // -1: no epoch ran or no validation data
  std::int64_t steps = 0;
};

struct ClassifierResult {
  Classifier classifier;
  TrainHistory history;
};

/// End-to-end fine-tuning of encoder and a fresh head on the budget's pairs.
/// `init` == nullptr trains from scratch (supervised baseline).
ClassifierResult finetune(const Checkpoint* init, const LabelBudget& budget, const RunConfig& config,
                          PairedDataset& data, View view, std::uint64_t seed);

/// Trains only a linear head on frozen CLS features of `init`'s encoder.
/// Throws ContractError when `init` is null.
ClassifierResult linear_probe(const Checkpoint* init, const LabelBudget& budget, const RunConfig& config,
                              PairedDataset& data, View view, std::uint64_t seed);

struct LinearHead {
  Eigen::MatrixXd weight;  // d x L
  Eigen::RowVectorXd bias;
};

/// AdamW + BCE on fixed features, selecting the epoch with the best
/// validation macro-AUROC when validation features are given.
LinearHead train_linear_head(const Eigen::MatrixXd& features, const Eigen::MatrixXd& targets,
                             const Eigen::MatrixXd* val_features, const Eigen::MatrixXd* val_targets,
                             const StageConfig& stage, std::uint64_t seed, TrainHistory* history = nullptr);

struct ViewScores {
  std::vector<std::size_t> pair_ids;
  Eigen::MatrixXd probs;  // pair x label sigmoid probabilities
};

/// Sigmoid scores of `view` images of the given pairs.
ViewScores score_view(const Classifier& classifier, PairedDataset& data, std::span<const std::size_t> pair_ids,
                      View view);
Eigen::MatrixXd score_images(const Classifier& classifier, std::span<const ImageTensor* const> images);

/// Element-wise mean. Throws ContractError unless ids and widths agree.
ViewScores ensemble_scores(const ViewScores& frontal, const ViewScores& lateral);

struct EvalReport {
  std::string method;
  Scenario scenario = Scenario::frontal;
  long budget = kFullBudget;
  std::uint64_t seed = 0;
  std::vector<std::string> label_names;
  std::vector<std::optional<double>> per_label;  // nullopt = skipped
  double macro_auroc = 0.0;
  std::size_t num_samples = 0;
};

EvalReport make_report(const ViewScores& scores, const PairedDataset& data, const std::string& method,
                       Scenario scenario, long budget, std::uint64_t seed);

/// Frontal, Lateral and Ensemble reports on one split.
std::vector<EvalReport> evaluate(const Classifier& frontal, const Classifier& lateral, PairedDataset& data,
                                 Split split, const std::string& method, long budget, std::uint64_t seed);

std::vector<std::string> label_names(int num_labels);

inline constexpr std::string_view kEvalCsvHeader = "method,scenario,budget,seed,label,auroc,macro_auroc";
void write_eval_csv(const std::filesystem::path& path, std::span<const EvalReport> reports);
std::string format_double(double v);

struct SweepResult {
  std::vector<EvalReport> reports;
  std::vector<std::pair<std::string, std::vector<EpochLoss>>> pretrain_logs;
  double wall_seconds = 0.0;
};

/// Full protocol: per seed, pretrain each self-supervised method, fine-tune
/// every method at every budget for both views, probe pretrained encoders,
/// and evaluate on the test split. Artifacts go under `out_dir` when not empty.
SweepResult run_sweep(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream* log);

/// Mean over seeds of the macro-AUROC for (method, scenario, budget).
std::optional<double> mean_macro(std::span<const EvalReport> reports, const std::string& method, Scenario scenario,
                                 long budget);

}  // namespace mvmae
