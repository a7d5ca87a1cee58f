#include "stylesketch/nn.hpp"

#include <cmath>

#include "stylesketch/ops.hpp"

namespace stylesketch {

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 finaliser over the combined key
  uint64_t z = seed * 0x9E3779B97F4A7C15ULL + stream + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Tensor uniform_tensor(const Shape& shape, float lo, float hi, Rng& rng) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> v(static_cast<size_t>(numel_of(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v));
}

Tensor normal_tensor(const Shape& shape, float mean, float stddev, Rng& rng) {
  std::normal_distribution<float> dist(mean, stddev);
  std::vector<float> v(static_cast<size_t>(numel_of(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v));
}

std::vector<NamedParameter> Module::named_parameters() {
  std::vector<NamedParameter> out;
  collect_parameters("", out);
  return out;
}

std::vector<Parameter*> Module::parameters() {
  std::vector<Parameter*> out;
  for (auto& np : named_parameters()) out.push_back(np.param);
  return out;
}

void Module::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

void Module::set_trainable(bool trainable) {
  for (auto* p : parameters()) p->set_trainable(trainable);
}

int64_t Module::parameter_count() {
  int64_t n = 0;
  for (auto* p : parameters()) n += p->numel();
  return n;
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, int padding_, Rng& rng, bool with_bias)
    : stride(stride_), padding(padding_) {
  // Kaiming-uniform for a leaky-ReLU(0.2) successor.
  const float fan_in = static_cast<float>(in_channels * kernel * kernel);
  const float bound = std::sqrt(6.0f / ((1.0f + 0.04f) * fan_in));
  weight = Parameter(uniform_tensor({out_channels, in_channels, kernel, kernel}, -bound, bound, rng));
  if (with_bias) bias = Parameter(Tensor::zeros({out_channels}));
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight.value(), bias.value().defined() ? bias.value() : Tensor(), stride, padding);
}

void Conv2d::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight});
  if (bias.value().defined()) out.push_back({prefix + "bias", &bias});
}

Linear::Linear(int in_features, int out_features, Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in_features));
  weight = Parameter(uniform_tensor({out_features, in_features}, -bound, bound, rng));
  bias = Parameter(Tensor::zeros({out_features}));
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight.value(), bias.value()); }

void Linear::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight});
  out.push_back({prefix + "bias", &bias});
}

}  // namespace stylesketch
