#pragma once

#include "mvmae/autograd.hpp"

#include <cstdint>
#include <vector>

namespace mvmae {

/// Linear warmup to `base_lr`, then cosine decay to `min_lr` at `total_steps`.
struct LrSchedule {
  double base_lr = 1e-3;
  double min_lr = 0.0;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;

  double at(std::int64_t step) const;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Adam with decoupled weight decay. Decay applies only to matrices with more
/// than one row (weights), never to biases, norms or single-row tokens.
class AdamW {
 public:
  AdamW(std::vector<ag::Parameter*> params, AdamWOptions options);

  /// Applies one update with learning rate `lr` from the accumulated grads.
  void step(double lr);
  void zero_grad();
  std::int64_t steps() const { return t_; }

 private:
  std::vector<ag::Parameter*> params_;
  AdamWOptions opt_;
  std::vector<ag::Matrix> m_;
  std::vector<ag::Matrix> v_;
  std::int64_t t_ = 0;
};

}  // namespace mvmae
