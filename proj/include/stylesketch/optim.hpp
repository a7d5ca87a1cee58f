#pragma once

#include <cstdint>
#include <vector>

#include "stylesketch/tensor.hpp"

namespace stylesketch {

struct AdamOptions {
  float lr = 2e-4f;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Adam with bias correction. Moment buffers live here and persist across
// step() calls; non-trainable parameters are skipped.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);

  void step();
  void zero_grad();
  int64_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions options_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  int64_t t_ = 0;
};

}  // namespace stylesketch
