#pragma once

// Patch tokenization and the random masking operator.

#include "mvmae/image.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>
#include <vector>

namespace mvmae {

struct PatchGrid {
  int image_size = 32;
  int patch_size = 4;
  int channels = 1;

  int tokens_per_side() const { return image_size / patch_size; }
  int num_tokens() const { return tokens_per_side() * tokens_per_side(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  /// Throws ConfigError unless the image divides evenly into patches.
  void validate() const;
};

/// T x patch_dim matrix; patches in row-major grid order, each patch
/// flattened as (row, col, channel).
Eigen::MatrixXd patchify(const ImageTensor& image, const PatchGrid& grid);
ImageTensor unpatchify(const Eigen::MatrixXd& patches, const PatchGrid& grid);

struct MaskPlan {
  double mask_ratio = 0.0;
  int num_tokens = 0;
  std::vector<int> masked;   // sorted ascending
  std::vector<int> visible;  // sorted ascending
  std::string rng_state;     // engine state before sampling

  bool is_masked(int t) const;
};

/// Number of masked tokens for a ratio: round-half-away-from-zero of ratio * T.
int masked_count(int num_tokens, double mask_ratio);

/// Uniform subset of size masked_count(T, ratio) without replacement.
MaskPlan sample_mask(int num_tokens, double mask_ratio, std::mt19937_64& rng);
/// Plan with the given masked positions (used for fixed plans in tests and tooling).
MaskPlan make_mask_plan(int num_tokens, std::vector<int> masked);
/// Nothing masked.
MaskPlan empty_mask(int num_tokens);

struct VisibleTokens {
  Eigen::MatrixXd tokens;
  std::vector<int> positions;
};

VisibleTokens select_visible(const Eigen::MatrixXd& tokens, const MaskPlan& plan);

}  // namespace mvmae
