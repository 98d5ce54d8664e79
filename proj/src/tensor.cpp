#include "cgl/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace cgl {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Real>
void check_finite(std::span<const Real> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << "non-finite value " << values[i] << " at index " << i << " in " << what;
      throw NonFiniteError(os.str());
    }
  }
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value, bool requires_grad) {
  auto node = std::make_shared<Node<Real>>();
  node->data.assign(numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  check_finite<Real>(node->data, "Tensor::full");
  return Tensor(std::move(node));
}

template <typename Real>
Tensor<Real> Tensor<Real>::from_data(Shape shape, std::vector<Real> data, bool requires_grad) {
  if (numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  }
  check_finite<Real>(data, "Tensor::from_data");
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value, bool requires_grad) {
  return full({}, value, requires_grad);
}

template <typename Real>
std::span<Real> Tensor<Real>::mutable_data() {
  if (!node().is_leaf()) throw std::logic_error("data of an op result is immutable");
  return node().data;
}

template <typename Real>
void Tensor<Real>::set_requires_grad(bool value) {
  if (!node().is_leaf()) throw std::logic_error("requires_grad can only be set on leaves");
  node().requires_grad = value;
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), Real(0));
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node().data[0];
}

template <typename Real>
void backward(const Tensor<Real>& root) {
  if (root.size() != 1) {
    throw ShapeError("backward() needs a scalar root, got shape " + to_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  using NodePtr = std::shared_ptr<Node<Real>>;
  std::vector<Node<Real>*> order;
  std::unordered_set<Node<Real>*> visited;
  std::vector<std::pair<Node<Real>*, std::size_t>> stack;
  stack.emplace_back(root.impl().get(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const NodePtr& parent = node->parents[next++];
      if (parent->requires_grad && visited.insert(parent.get()).second) {
        stack.emplace_back(parent.get(), 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Intermediate grads are per-pass scratch; leaf grads accumulate.
  for (auto* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), Real(0));
  }
  root.impl()->ensure_grad()[0] += Real(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Real>* node = *it;
    if (!node->is_leaf() && node->backward) node->backward(*node);
  }
  for (auto* node : order) {
    if (!node->is_leaf()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

template <typename Real>
Tensor<Real> make_result(const char* op, Shape shape, std::vector<Real> data,
                         std::vector<Tensor<Real>> parents,
                         std::function<void(Node<Real>&)> backward_fn) {
  if (numel(shape) != data.size()) {
    throw ShapeError(std::string(op) + ": result length does not match shape " + to_string(shape));
  }
  check_finite<Real>(data, op);
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.impl());
    node->backward = std::move(backward_fn);
  }
  return Tensor<Real>(std::move(node));
}

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);
template Tensor<float> make_result(const char*, Shape, std::vector<float>,
                                   std::vector<Tensor<float>>, std::function<void(Node<float>&)>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>,
                                    std::vector<Tensor<double>>,
                                    std::function<void(Node<double>&)>);
template void check_finite(std::span<const float>, const char*);
template void check_finite(std::span<const double>, const char*);

}  // namespace cgl
