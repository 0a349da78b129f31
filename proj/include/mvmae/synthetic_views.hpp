#pragma once

// Paired two-view images that share one latent factor vector, for desk-scale
// runs without credentialed data.
//
// The latent of a pair is a random subset of 2..4 primitive types (out of
// `latent_classes`) plus per-primitive jitter and intensity. Each type has a
// fixed anchor cell and shape. The frontal view renders the primitives in
// place; the lateral view renders them through a fixed horizontal shear.
// Labels are a deterministic function of which types are present.

#include "mvmae/data_pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mvmae {

struct SyntheticSpec {
  int image_size = 32;
  int patch_size = 4;
  int num_pairs = 2000;
  int num_labels = 14;
  int latent_classes = 8;
  int min_primitives = 2;
  int max_primitives = 4;
  double noise_std = 0.3;
  double primitive_scale = 1.8;  // shape size multiplier
  int position_jitter = 3;        // max offset from the anchor, in 32px-grid pixels
  double lateral_shear = 0.25;
  int pairs_per_subject = 2;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;

  void validate() const;
};

struct Primitive {
  int type = 0;
  double dx = 0.0;
  double dy = 0.0;
  double intensity = 1.0;
};

/// Presence vector (one entry per primitive type) -> binary labels. The
/// first min(K, L) labels are presence bits; later labels combine two types,
/// alternating AND (even offsets) and OR (odd offsets).
LabelVector synthetic_label_function(const std::vector<std::uint8_t>& presence, int num_labels);

struct SyntheticDataset {
  PairedDataset dataset;
  std::vector<std::vector<Primitive>> latents;
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Renders one view of a latent; `shear` = 0 gives the frontal rendering.
ImageTensor render_view(const std::vector<Primitive>& latent, const SyntheticSpec& spec, double shear);

/// Writes PNG images plus a manifest (version header, one row per image) so
/// synthetic data can go through the regular ingestion path. Needs 14 labels.
void export_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir);

}  // namespace mvmae
