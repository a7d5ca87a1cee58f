#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace stylesketch {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One recorded operation. The graph of Nodes reachable from a loss is the tape:
// `seq` is a global creation counter, so every node is strictly newer than all
// of its parents and descending-seq order is a valid reverse topological order.
struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<float>& grad_buffer();
};

}  // namespace detail

// Dense row-major float32 array plus its autodiff record. Copies share the
// underlying node; values are never mutated after creation except for leaf
// parameters updated by an optimizer.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, float value);
  static Tensor scalar(float value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t dim() const { return static_cast<int64_t>(shape().size()); }
  int64_t size(int64_t axis) const;
  int64_t numel() const;

  std::span<const float> data() const;
  float item() const;
  float at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  // Gradient accumulated by backward(); empty span if none was ever produced.
  std::span<const float> grad() const;

  // Seeds d(self)/d(self) = 1 and propagates to every reachable node.
  void backward() const;

  // Same values, no history.
  Tensor detach() const;

  // For leaves only (parameter initialisation and optimizer updates).
  std::span<float> mutable_data();
  void zero_grad();

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables recording while alive. Ops executed under the guard produce
// history-free tensors.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds an op result. `fn` is attached only when recording is on and at least
// one input requires grad; it receives the output node (whose grad is filled).
Tensor make_result(Shape shape, std::vector<float> value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> fn);

// Adds `g` into the gradient of `t` if it participates in autodiff.
void accumulate_grad(const std::shared_ptr<detail::Node>& node, std::span<const float> g);

class Parameter {
 public:
  Parameter() = default;
  Parameter(Tensor value, bool trainable = true);

  const Tensor& value() const { return value_; }
  std::span<float> mutable_value() { return value_.mutable_data(); }
  // Gradient of the last backward passes; all zeros if none reached this parameter.
  std::vector<float> gradient() const;
  void zero_grad() { value_.zero_grad(); }

  bool trainable() const { return trainable_; }
  void set_trainable(bool trainable);
  const Shape& shape() const { return value_.shape(); }
  int64_t numel() const { return value_.numel(); }

 private:
  Tensor value_;
  bool trainable_ = true;
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

}  // namespace stylesketch
