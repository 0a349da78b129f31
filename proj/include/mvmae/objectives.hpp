#pragma once

// Reconstruction, cross-view alignment and cross-view contrastive losses.
// Every loss is a pure function returning its value together with the
// gradient with respect to each of its direct inputs.

#include "mvmae/patch_masking.hpp"
#include "mvmae/vision_backbone.hpp"

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <span>
#include <string>

namespace mvmae {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class View { frontal, lateral };
std::string_view to_string(View v);

enum class AlignMode { shared_visible, cls_only };
AlignMode parse_align_mode(const std::string& name);
std::string to_string(AlignMode m);

/// negatives_only: positive pair excluded from the denominator (2(N-1) terms).
/// simclr_standard: positive pair also in the denominator.
enum class ContrastiveDenominator { negatives_only, simclr_standard };
ContrastiveDenominator parse_denominator(const std::string& name);
std::string to_string(ContrastiveDenominator d);

struct RecLoss {
  double value = 0.0;
  MatrixXd grad_reconstruction;
};

/// Mean squared error over masked positions and patch components. With
/// `normalize_targets`, each target patch is standardized by its own mean and
/// variance first. Throws UndefinedLossError when nothing is masked.
RecLoss rec_loss(const MatrixXd& reconstruction, const MatrixXd& target, const MaskPlan& plan,
                 bool normalize_targets = false);

struct AlignLoss {
  double value = 0.0;
  bool cls_fallback = false;  // shared-visible set was empty
  std::size_t correspondences = 0;
  LatentSequence grad_f;      // same layout as the inputs
  LatentSequence grad_l;
};

/// Mean over corresponding tokens of the per-token MSE between the two
/// views' latents. shared_visible pairs tokens at positions visible in both
/// views and falls back to the CLS pair when there are none.
AlignLoss align_loss(const LatentSequence& lat_f, const LatentSequence& lat_l, AlignMode mode);

struct LossBreakdown {
  std::map<View, double> rec_per_view;
  double align = 0.0;
  double beta = 0.0;
  std::optional<double> contrastive;
  double total = 0.0;
  bool align_cls_fallback = false;

  bool finite() const;
};

/// total = mean of the per-view reconstruction terms + beta * align.
LossBreakdown mvmae_loss(double rec_f, double rec_l, const AlignLoss& align, double beta);
LossBreakdown contrastive_breakdown(double contrastive);

struct ContrastiveBatch {
  MatrixXd z_f;  // N x d, unit rows
  MatrixXd z_l;
  double temperature = 0.1;

  int size() const { return static_cast<int>(z_f.rows()); }
  /// Throws ContractError/ConfigError when the invariants do not hold.
  void validate() const;
};

struct ContrastiveLoss {
  double value = 0.0;
  MatrixXd grad_z_f;
  MatrixXd grad_z_l;
};

/// Cross-view contrastive loss over the batch. For each view v and anchor i,
/// the positive is the other view of study i; the negatives are both views
/// of every other study k != i.
ContrastiveLoss contrastive_loss(const ContrastiveBatch& batch,
                                 ContrastiveDenominator denominator = ContrastiveDenominator::negatives_only);

/// Row-wise l2 normalization. Throws NumericError naming the first zero row.
MatrixXd normalize_embeddings(const MatrixXd& raw);
/// Pulls a gradient w.r.t. normalized rows back to the raw rows.
MatrixXd normalize_backward(const MatrixXd& raw, const MatrixXd& grad_normalized);

/// World size and rank of the calling participant. `peers` holds every
/// rank's local batch in rank order for in-process simulation; it may be
/// empty when world_size == 1.
struct GatherContext {
  int world_size = 1;
  int rank = 0;
  std::span<const ContrastiveBatch> peers;
};

/// Concatenates all ranks' batches in rank order. Single-process: identity.
ContrastiveBatch gather_negatives(const ContrastiveBatch& local, const GatherContext& context);

struct BceLoss {
  double value = 0.0;
  MatrixXd grad_logits;
};

/// Mean per-label binary cross-entropy on logits (numerically stable form).
BceLoss bce_with_logits(const MatrixXd& logits, const MatrixXd& targets);

}  // namespace mvmae
