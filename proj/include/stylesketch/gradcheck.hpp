#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stylesketch/nn.hpp"
#include "stylesketch/tensor.hpp"

namespace stylesketch {

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradcheckResult {
  // Per input: ||analytic - numeric|| / max(||analytic||, ||numeric||, norm_floor).
  std::vector<double> rel_errors;
  double max_rel_error = 0.0;
};

struct GradcheckOptions {
  double h = 1e-3;
  double norm_floor = 1e-4;
};

// Compares reverse-mode gradients of L = sum(w * fn(inputs)) against central
// differences, with w drawn uniformly from [0.5, 1.5] once per call (one-signed
// so reductions over broadcast axes do not cancel). Every input
// must be a leaf that requires grad; its values are restored afterwards.
GradcheckResult gradcheck(const TensorFn& fn, const std::vector<Tensor>& inputs, Rng& rng,
                          const GradcheckOptions& options = {});

// A named differentiable construction. `build` draws fresh inputs (and any
// owned parameters) from the generator and returns the closure under test.
struct GradcheckCase {
  std::string name;
  std::function<std::pair<TensorFn, std::vector<Tensor>>(Rng&)> build;
  GradcheckOptions options = {};
};

// Every differentiable op and layer in the library.
const std::vector<GradcheckCase>& gradcheck_cases();

struct GradcheckSummary {
  std::string name;
  int seeds = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

GradcheckSummary run_gradcheck_case(const GradcheckCase& c, int seeds, uint64_t base_seed, double tolerance);

}  // namespace stylesketch
