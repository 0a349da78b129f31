#include "mvmae/patch_masking.hpp"

#include "mvmae/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mvmae {

void PatchGrid::validate() const {
  if (patch_size < 1 || image_size < 1 || channels < 1) throw ConfigError("patch grid sizes must be positive");
  if (image_size % patch_size != 0) {
    throw ConfigError("image size " + std::to_string(image_size) + " not divisible by patch size " +
                      std::to_string(patch_size));
  }
}

Eigen::MatrixXd patchify(const ImageTensor& image, const PatchGrid& grid) {
  grid.validate();
  if (image.height != grid.image_size || image.width != grid.image_size || image.channels != grid.channels) {
    throw ConfigError("image shape does not match the patch grid");
  }
  const int p = grid.patch_size;
  const int side = grid.tokens_per_side();
  Eigen::MatrixXd out(grid.num_tokens(), grid.patch_dim());
  for (int gy = 0; gy < side; ++gy) {
    for (int gx = 0; gx < side; ++gx) {
      const int t = gy * side + gx;
      int k = 0;
      for (int y = 0; y < p; ++y) {
        for (int x = 0; x < p; ++x) {
          for (int c = 0; c < grid.channels; ++c) out(t, k++) = image.at(c, gy * p + y, gx * p + x);
        }
      }
    }
  }
  return out;
}

ImageTensor unpatchify(const Eigen::MatrixXd& patches, const PatchGrid& grid) {
  grid.validate();
  if (patches.rows() != grid.num_tokens() || patches.cols() != grid.patch_dim()) {
    throw ConfigError("patch matrix does not match the patch grid");
  }
  const int p = grid.patch_size;
  const int side = grid.tokens_per_side();
  ImageTensor out(grid.channels, grid.image_size, grid.image_size);
  for (int gy = 0; gy < side; ++gy) {
    for (int gx = 0; gx < side; ++gx) {
      const int t = gy * side + gx;
      int k = 0;
      for (int y = 0; y < p; ++y) {
        for (int x = 0; x < p; ++x) {
          for (int c = 0; c < grid.channels; ++c) out.at(c, gy * p + y, gx * p + x) = patches(t, k++);
        }
      }
    }
  }
  return out;
}

bool MaskPlan::is_masked(int t) const { return std::binary_search(masked.begin(), masked.end(), t); }

int masked_count(int num_tokens, double mask_ratio) {
  return static_cast<int>(std::lround(mask_ratio * num_tokens));
}

MaskPlan sample_mask(int num_tokens, double mask_ratio, std::mt19937_64& rng) {
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw ConfigError("mask_ratio must lie in [0, 1]");
  if (num_tokens < 0) throw ConfigError("token count must be non-negative");
  MaskPlan plan;
  plan.mask_ratio = mask_ratio;
  plan.num_tokens = num_tokens;
  std::ostringstream state;
  state << rng;
  plan.rng_state = state.str();

  const int count = masked_count(num_tokens, mask_ratio);
  std::vector<int> order(static_cast<std::size_t>(num_tokens));
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first `count` slots become the masked set.
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, num_tokens - 1);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
  }
  plan.masked.assign(order.begin(), order.begin() + count);
  plan.visible.assign(order.begin() + count, order.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

MaskPlan make_mask_plan(int num_tokens, std::vector<int> masked) {
  std::sort(masked.begin(), masked.end());
  masked.erase(std::unique(masked.begin(), masked.end()), masked.end());
  MaskPlan plan;
  plan.num_tokens = num_tokens;
  for (int t : masked) {
    if (t < 0 || t >= num_tokens) throw InternalError("masked index out of range");
  }
  for (int t = 0; t < num_tokens; ++t) {
    if (!std::binary_search(masked.begin(), masked.end(), t)) plan.visible.push_back(t);
  }
  plan.masked = std::move(masked);
  plan.mask_ratio = num_tokens > 0 ? static_cast<double>(plan.masked.size()) / num_tokens : 0.0;
  return plan;
}

MaskPlan empty_mask(int num_tokens) { return make_mask_plan(num_tokens, {}); }

VisibleTokens select_visible(const Eigen::MatrixXd& tokens, const MaskPlan& plan) {
  if (tokens.rows() != plan.num_tokens ||
      plan.masked.size() + plan.visible.size() != static_cast<std::size_t>(plan.num_tokens)) {
    throw InternalError("mask plan does not match token count");
  }
  VisibleTokens out;
  out.positions = plan.visible;
  out.tokens.resize(static_cast<Eigen::Index>(plan.visible.size()), tokens.cols());
  for (std::size_t i = 0; i < plan.visible.size(); ++i) {
    out.tokens.row(static_cast<Eigen::Index>(i)) = tokens.row(plan.visible[i]);
  }
  return out;
}

}  // namespace mvmae
