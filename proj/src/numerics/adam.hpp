#pragma once

#include <vector>

#include "numerics/tensor.hpp"

namespace numerics {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global-norm clip; <=0 disables clipping
};

/// Adam with bias correction and joint global-norm gradient clipping.
/// Moment state is keyed by position, so the parameter list must keep the
/// same order and shapes across steps.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  /// Applies one update in place. Throws on non-finite gradients.
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace numerics
