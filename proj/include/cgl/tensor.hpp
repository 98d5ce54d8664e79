#pragma once

// Minimal reverse-mode tensor engine.
//
// A Tensor is a shared handle to a graph node holding a shape, row-major data,
// and an optional gradient buffer. Ops (see ops.hpp) build new nodes that keep
// their parents alive and know how to push their gradient back to them.
// Data of non-leaf tensors is never modified after construction.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgl {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised whenever an op produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  bool is_leaf() const { return parents.empty(); }
  std::vector<Real>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), Real(0));
    return grad;
  }
};

template <typename Real>
class Tensor {
 public:
  using value_type = Real;
  using NodePtr = std::shared_ptr<Node<Real>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Real> data, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const { return node().data.size(); }

  std::span<const Real> data() const { return node().data; }
  /// Only leaves may be written (parameters, optimizer updates).
  std::span<Real> mutable_data();

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool value);

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const Real> grad() const { return node().grad; }
  std::span<Real> mutable_grad() { return node().ensure_grad(); }
  void zero_grad();

  /// Value of a one-element tensor.
  Real item() const;

  const NodePtr& impl() const { return node_; }

 private:
  Node<Real>& node() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return *node_;
  }
  NodePtr node_;
};

/// Fills grad of every requires_grad leaf reachable from `root` with
/// d(root)/d(leaf), accumulating onto whatever the leaf already holds.
/// Throws ShapeError unless root has exactly one element.
template <typename Real>
void backward(const Tensor<Real>& root);

/// Builds an op result. `data` is checked for NaN/Inf (NonFiniteError naming
/// `op`). The result requires grad iff any parent does; `backward_fn` is kept
/// only in that case.
template <typename Real>
Tensor<Real> make_result(const char* op, Shape shape, std::vector<Real> data,
                         std::vector<Tensor<Real>> parents,
                         std::function<void(Node<Real>&)> backward_fn);

/// Throws NonFiniteError if any value is NaN or Inf.
template <typename Real>
void check_finite(std::span<const Real> values, const char* what);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cgl
