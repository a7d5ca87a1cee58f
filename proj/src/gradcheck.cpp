#include "stylesketch/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "stylesketch/error.hpp"
#include "stylesketch/ops.hpp"

namespace stylesketch {

namespace {

double weighted_sum(const Tensor& out, const std::vector<float>& w) {
  double acc = 0.0;
  const auto v = out.data();
  for (size_t i = 0; i < v.size(); ++i) acc += static_cast<double>(v[i]) * w[i];
  return acc;
}

}  // namespace

GradcheckResult gradcheck(const TensorFn& fn, const std::vector<Tensor>& inputs, Rng& rng,
                          const GradcheckOptions& options) {
  for (const Tensor& t : inputs) {
    if (!t.requires_grad() || !t.node()->is_leaf()) throw ContractError("gradcheck inputs must be grad-requiring leaves");
  }
  for (Tensor t : inputs) t.zero_grad();
  Tensor out = fn(inputs);
  Tensor w = uniform_tensor(out.shape(), 0.5f, 1.5f, rng);
  const std::vector<float> wv(w.data().begin(), w.data().end());
  sum(mul(out, w)).backward();

  GradcheckResult result;
  for (Tensor t : inputs) {
    const std::vector<float> analytic = t.grad().empty() ? std::vector<float>(t.numel(), 0.0f)
                                                         : std::vector<float>(t.grad().begin(), t.grad().end());
    std::span<float> x = t.mutable_data();
    double diff2 = 0.0;
    double a2 = 0.0;
    double n2 = 0.0;
    for (size_t j = 0; j < x.size(); ++j) {
      const float saved = x[j];
      // Divide by the realized float32 step, not 2h.
      const float up = static_cast<float>(saved + options.h);
      const float down = static_cast<float>(saved - options.h);
      double plus;
      double minus;
      {
        NoGradGuard no_grad;
        x[j] = up;
        plus = weighted_sum(fn(inputs), wv);
        x[j] = down;
        minus = weighted_sum(fn(inputs), wv);
      }
      x[j] = saved;
      const double numeric = (plus - minus) / (static_cast<double>(up) - down);
      diff2 += (numeric - analytic[j]) * (numeric - analytic[j]);
      a2 += static_cast<double>(analytic[j]) * analytic[j];
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), options.norm_floor});
    result.rel_errors.push_back(std::sqrt(diff2) / denom);
    result.max_rel_error = std::max(result.max_rel_error, result.rel_errors.back());
  }
  for (Tensor t : inputs) t.zero_grad();
  return result;
}

GradcheckSummary run_gradcheck_case(const GradcheckCase& c, int seeds, uint64_t base_seed, double tolerance) {
  GradcheckSummary s{c.name, seeds, 0.0, true};
  for (int i = 0; i < seeds; ++i) {
    Rng rng(derive_seed(base_seed, static_cast<uint64_t>(i)));
    auto [fn, inputs] = c.build(rng);
    const GradcheckResult r = gradcheck(fn, inputs, rng, c.options);
    s.max_rel_error = std::max(s.max_rel_error, r.max_rel_error);
  }
  s.passed = s.max_rel_error < tolerance;
  return s;
}

}  // namespace stylesketch
