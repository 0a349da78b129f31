#pragma once

// Transformer encoder f (with a CLS token) and lightweight transformer
// decoder g shared by both pretraining paradigms and the classifiers.

#include "mvmae/autograd.hpp"
#include "mvmae/patch_masking.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mvmae {

struct BackboneConfig {
  std::string preset = "vit-desk";
  PatchGrid grid{32, 4, 1};
  int embed_dim = 32;
  int depth = 2;
  int num_heads = 4;
  double mlp_ratio = 2.0;
  int decoder_dim = 16;
  int decoder_depth = 1;
  int decoder_heads = 2;
  std::uint64_t init_seed = 0;

  /// "vit-b" (224 px, patch 16, 3 channels) or "vit-desk" (32 px, patch 4, 1 channel).
  static BackboneConfig from_preset(const std::string& name);
  void validate() const;
  int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }
  int decoder_mlp_hidden() const { return static_cast<int>(decoder_dim * mlp_ratio); }
};

/// Encoder output for one view: CLS embedding plus one row per visible token.
struct LatentSequence {
  Eigen::VectorXd cls;
  Eigen::MatrixXd tokens;
  std::vector<int> positions;
};

/// Ordered, named parameter arrays. Names are prefixed "encoder." / "decoder."
/// / "head." by owner.
class ParameterStore {
 public:
  ag::Parameter& add(const std::string& name, ag::Matrix init);
  ag::Parameter& at(const std::string& name);
  const ag::Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<std::pair<std::string, ag::Parameter>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, ag::Parameter>>& entries() const { return entries_; }
  /// Parameters whose names start with `prefix` (all when empty).
  std::vector<ag::Parameter*> select(const std::string& prefix = "");
  std::size_t count(const std::string& prefix = "") const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, ag::Parameter>> entries_;
};

/// Stable 64-bit FNV-1a digest over names, shapes and raw bytes of the
/// parameters matching `prefix`.
std::uint64_t parameter_hash(const ParameterStore& params, const std::string& prefix = "");

/// Fixed 2D sine-cosine position table for a side x side grid in row-major
/// order; half the columns encode the grid row, half the column.
Eigen::MatrixXd sinusoidal_positions_2d(int side, int width);

class VisionBackbone {
 public:
  explicit VisionBackbone(BackboneConfig config);

  const BackboneConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// (1 + visible) x d latent rows on the tape; row 0 is CLS.
  ag::Var encode(ag::Tape& tape, const VisibleTokens& visible);
  /// T x patch_dim reconstructions from encoder rows laid out by `plan`.
  ag::Var decode(ag::Tape& tape, ag::Var latents, const MaskPlan& plan);

  LatentSequence encode(const VisibleTokens& visible) const;
  Eigen::MatrixXd decode(const LatentSequence& latents, const MaskPlan& plan) const;
  /// CLS slot of encode() on the full, unmasked token sequence.
  Eigen::VectorXd cls_embedding(const ImageTensor& image) const;

 private:
  ag::Var block(ag::Tape& tape, ag::Var x, const std::string& prefix, int heads);
  void add_block(const std::string& prefix, int width, int hidden, std::mt19937_64& rng);

  BackboneConfig config_;
  ParameterStore params_;
  Eigen::MatrixXd enc_pos_;
  Eigen::MatrixXd dec_pos_;
};

LatentSequence to_latent_sequence(const Eigen::MatrixXd& rows, const std::vector<int>& positions);

/// Glorot/Xavier uniform for a fan_in x fan_out weight.
Eigen::MatrixXd xavier_uniform(int fan_in, int fan_out, std::mt19937_64& rng);
/// Truncated normal (cut at two standard deviations).
Eigen::MatrixXd trunc_normal(int rows, int cols, double std, std::mt19937_64& rng);

}  // namespace mvmae
