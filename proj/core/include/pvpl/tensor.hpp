#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pvpl/errors.hpp"

namespace pvpl {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One recorded value in the define-by-run graph. Ops own their inputs through
// `parents`; `backward` reads this node's grad and accumulates into parents.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// A tensor is a shared handle: copies alias the same storage. Op results are
/// fresh nodes that remember their inputs, so calling `backward` on a scalar
/// result walks the graph built since the leaves were created. Leaves marked
/// `requires_grad` accumulate gradients until `zero_grad` is called.
template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using Node = detail::Node<T>;

  BasicTensor() : BasicTensor(Shape{}, std::vector<T>{T(0)}) {}
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor scalar(T v, bool requires_grad = false);
  static BasicTensor from_rows(std::initializer_list<std::initializer_list<T>> rows,
                               bool requires_grad = false);
  static BasicTensor vector(std::initializer_list<T> v, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t rows() const;  // first dim of a rank-2 tensor
  std::size_t cols() const;  // last dim

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }

  T item() const;
  T operator()(std::size_t i) const { return node_->value[i]; }
  T operator()(std::size_t r, std::size_t c) const;

  void zero_grad() { node_->grad.clear(); }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  /// Copy of the values with no graph history.
  BasicTensor detach() const;

  /// Same values cast to another scalar type, as a graph-free leaf.
  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = static_cast<U>(node_->value[i]);
    return BasicTensor<U>(shape(), std::move(out));
  }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit BasicTensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = BasicTensor<float>;

/// Build an op result node. `backward` is only retained if any parent needs
/// gradients; parents that do not are never given a grad buffer.
template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> value,
                           std::vector<BasicTensor<T>> parents,
                           std::function<void(detail::Node<T>&)> backward);

/// Reverse-mode sweep from a scalar. Nodes are visited in exact reverse
/// topological order of the recorded graph.
template <class T>
void backward(const BasicTensor<T>& loss);

namespace detail {
// Multiplier applied to the seed gradient. Stays at 1 outside fault-injection
// scopes (see gradcheck.hpp).
double& backward_seed_scale();
}  // namespace detail

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace pvpl
