#include "psal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "psal/error.hpp"

namespace psal {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor() : Tensor(Shape{1}, 0.0) {}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, Buffer values) : node_(std::make_shared<detail::Node>()) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not hold " + std::to_string(values.size()) +
                         " values");
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor::Tensor(Shape shape, const std::vector<double>& values)
    : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  const auto& s = node_->shape;
  return node_->value[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const auto& s = node_->shape;
  return node_->value[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

std::span<double> Tensor::grad() { return detail::grad_of(*node_); }

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value); }

Tensor Tensor::clone() const {
  Tensor t(node_->shape, node_->value);
  t.node_->requires_grad = node_->requires_grad;
  t.node_->grad = node_->grad;
  return t;
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw DimensionError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  auto out = detail::make_result(std::move(shape), node_->value, {*this});
  if (out.requires_grad()) {
    auto* self = out.node_.get();
    auto* in = node_.get();
    self->backward = [self, in] {
      auto& g = detail::grad_of(*in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self->grad[i];
    };
  }
  return out;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, Buffer value, const std::vector<Tensor>& inputs) {
  Tensor out(std::move(shape), std::move(value));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto node = out.node();
  node->requires_grad = true;
  for (const auto& t : inputs) node->inputs.push_back(t.node());
  return out;
}

Buffer& grad_of(Node& node) {
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

}  // namespace detail

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  auto root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order)
    if (node->backward) node->grad.assign(node->value.size(), 0.0);
  detail::grad_of(*root)[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (!node->backward) continue;
    node->backward();
    // Intermediate gradients are not needed after propagation.
    Buffer().swap(node->grad);
  }
}

}  // namespace psal
