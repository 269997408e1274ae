#include "pvpl/tensor.hpp"

#include <numeric>
#include <sstream>
#include <unordered_set>

namespace pvpl {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (shape_size(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::scalar(T v, bool requires_grad) {
  return BasicTensor(Shape{}, std::vector<T>{v}, requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::from_rows(std::initializer_list<std::initializer_list<T>> rows,
                                         bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in tensor literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return BasicTensor(Shape{r, c}, std::move(data), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::vector(std::initializer_list<T> v, bool requires_grad) {
  return BasicTensor(Shape{v.size()}, std::vector<T>(v), requires_grad);
}

template <class T>
std::size_t BasicTensor<T>::dim(std::size_t i) const {
  if (i >= rank()) throw DimensionError("dim index out of range for " + shape_string(shape()));
  return node_->shape[i];
}

template <class T>
std::size_t BasicTensor<T>::rows() const {
  if (rank() != 2) throw DimensionError("expected rank-2 tensor, got " + shape_string(shape()));
  return node_->shape[0];
}

template <class T>
std::size_t BasicTensor<T>::cols() const {
  if (rank() == 0) return 1;
  return node_->shape.back();
}

template <class T>
T BasicTensor<T>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <class T>
T BasicTensor<T>::operator()(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(shape(), node_->value);
}

template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> value,
                           std::vector<BasicTensor<T>> parents,
                           std::function<void(detail::Node<T>&)> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  for (const auto& p : parents) {
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return BasicTensor<T>(std::move(node));
}

namespace detail {
double& backward_seed_scale() {
  thread_local double scale = 1.0;
  return scale;
}
}  // namespace detail

template <class T>
void backward(const BasicTensor<T>& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward() needs a scalar, got " + shape_string(loss.shape()));
  }
  using NodeT = detail::Node<T>;
  NodeT* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grads are rebuilt on every sweep; leaf grads accumulate.
  for (NodeT* n : order) {
    if (n->backward) n->grad.clear();
  }
  root->ensure_grad();
  root->grad[0] += static_cast<T>(detail::backward_seed_scale());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (!n->backward) continue;
    n->ensure_grad();
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward(*n);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;

template BasicTensor<float> make_result(Shape, std::vector<float>, std::vector<BasicTensor<float>>,
                                        std::function<void(detail::Node<float>&)>);
template BasicTensor<double> make_result(Shape, std::vector<double>,
                                         std::vector<BasicTensor<double>>,
                                         std::function<void(detail::Node<double>&)>);
template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);

}  // namespace pvpl
