#pragma once

#include <cstddef>
#include <vector>

#include "trajdiff/traj_unet.hpp"

namespace trajdiff {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

// Adaptive moment estimation over every tensor of a ParamStore.
class Adam {
 public:
  Adam(ParamStore& params, AdamConfig config);

  // Applies one update from the accumulated gradients. Returns the global
  // gradient norm before clipping.
  double step();

  [[nodiscard]] std::size_t iterations() const { return iterations_; }
  [[nodiscard]] const AdamConfig& config() const { return config_; }

 private:
  ParamStore* params_;
  AdamConfig config_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::size_t iterations_ = 0;
};

}  // namespace trajdiff
