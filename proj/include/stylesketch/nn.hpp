#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stylesketch/tensor.hpp"

namespace stylesketch {

using Rng = std::mt19937_64;

// Derives an independent stream from (seed, stream) so per-item generators
// do not depend on iteration order.
uint64_t derive_seed(uint64_t seed, uint64_t stream);

Tensor uniform_tensor(const Shape& shape, float lo, float hi, Rng& rng);
Tensor normal_tensor(const Shape& shape, float mean, float stddev, Rng& rng);

// Anything that owns Parameters. Names are stable and used as checkpoint keys.
class Module {
 public:
  virtual ~Module() = default;
  virtual void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) = 0;

  std::vector<NamedParameter> named_parameters();
  std::vector<Parameter*> parameters();
  void zero_grad();
  void set_trainable(bool trainable);
  int64_t parameter_count();
};

class Conv2d : public Module {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng, bool bias = true);

  Tensor forward(const Tensor& x) const;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  Parameter weight;
  Parameter bias;
  int stride = 1;
  int padding = 0;
};

class Linear : public Module {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  Parameter weight;
  Parameter bias;
};

}  // namespace stylesketch
