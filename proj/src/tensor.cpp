#include "stylesketch/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "stylesketch/error.hpp"

namespace stylesketch {

namespace {

std::atomic<uint64_t> g_seq{1};
thread_local bool g_grad_enabled = true;

}  // namespace

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<float>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0f);
  return grad;
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) {
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (numel_of(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
  node_->seq = g_seq.fetch_add(1);
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0f); }
Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0f); }
Tensor Tensor::full(const Shape& shape, float value) {
  return Tensor(shape, std::vector<float>(static_cast<size_t>(numel_of(shape)), value));
}
Tensor Tensor::scalar(float value) { return Tensor({1}, {value}); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

int64_t Tensor::size(int64_t axis) const {
  const auto& s = shape();
  if (axis < 0) axis += static_cast<int64_t>(s.size());
  if (axis < 0 || axis >= static_cast<int64_t>(s.size())) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const { return numel_of(shape()); }

std::span<const float> Tensor::data() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->value;
}

float Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

float Tensor::at(std::initializer_list<int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
  int64_t offset = 0;
  size_t axis = 0;
  for (int64_t i : index) {
    if (i < 0 || i >= s[axis]) throw ShapeError("index out of range for " + shape_str(s));
    offset = offset * s[axis] + i;
    ++axis;
  }
  return node_->value[static_cast<size_t>(offset)];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const float> Tensor::grad() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->grad;
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

std::span<float> Tensor::mutable_data() {
  if (!node_) throw ContractError("use of undefined tensor");
  if (!node_->is_leaf()) throw ContractError("mutable_data() on a non-leaf tensor");
  return node_->value;
}

void Tensor::zero_grad() {
  if (!node_) return;
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

void Tensor::backward() const {
  if (!node_) throw ContractError("backward() on undefined tensor");
  if (numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Collect every node reachable through requires_grad edges.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  // Intermediate gradients are per-pass; leaf gradients accumulate across passes.
  for (detail::Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0f);
  }
  node_->grad_buffer()[0] += 1.0f;
  for (detail::Node* n : order) {
    if (!n->is_leaf()) n->backward_fn(*n);
  }
  for (detail::Node* n : order) {
    if (!n->is_leaf()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<float> value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> fn) {
  Tensor out(std::move(shape), std::move(value));
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents.reserve(inputs.size());
  for (auto& t : inputs) {
    if (t.defined()) node.parents.push_back(t.node());
  }
  node.backward_fn = std::move(fn);
  return out;
}

void accumulate_grad(const std::shared_ptr<detail::Node>& node, std::span<const float> g) {
  if (!node || !node->requires_grad) return;
  auto& buf = node->grad_buffer();
  for (size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

Parameter::Parameter(Tensor value, bool trainable) : trainable_(trainable) {
  value_ = Tensor(value.shape(), std::vector<float>(value.data().begin(), value.data().end()),
                  trainable);
}

std::vector<float> Parameter::gradient() const {
  auto g = value_.grad();
  if (g.empty()) return std::vector<float>(static_cast<size_t>(value_.numel()), 0.0f);
  return {g.begin(), g.end()};
}

void Parameter::set_trainable(bool trainable) {
  trainable_ = trainable;
  value_.node()->requires_grad = trainable;
}

}  // namespace stylesketch
