#ifndef PSAL_TENSOR_HPP
#define PSAL_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace psal {

using Shape = std::vector<std::size_t>;

/// Allocator with a fixed 64-byte alignment. Vectorized reductions pick their
/// split points from the buffer address, so a fixed alignment keeps results
/// bitwise reproducible from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <class U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void()> backward;
};

}  // namespace detail

/// Dense row-major fp64 array with an optional gradient record.
///
/// A Tensor is a handle: copies share storage and graph position, the way a
/// framework tensor does. Use clone() for an independent deep copy and
/// detach() to cut the graph while keeping the values.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Buffer values);
  Tensor(Shape shape, const std::vector<double>& values);
  Tensor(Shape shape, std::initializer_list<double> values) : Tensor(std::move(shape), Buffer(values)) {}

  static Tensor scalar(double value) { return Tensor(Shape{1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  const Buffer& values() const { return node_->value; }
  double item() const;

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer; allocated (zeroed) on first access.
  std::span<double> grad();
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  Tensor detach() const;
  Tensor clone() const;
  Tensor reshape(Shape shape) const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// Builds an op result; wires it into the graph when any input records gradients.
Tensor make_result(Shape shape, Buffer value, const std::vector<Tensor>& inputs);

/// Gradient buffer of an input node, allocated on demand.
Buffer& grad_of(Node& node);

}  // namespace detail

}  // namespace psal

#endif  // PSAL_TENSOR_HPP
