#pragma once

// Differentiable ops over Tensor.
//
// Image-like tensors are C x H x W, optionally with a leading batch axis
// (N x C x H x W). Ops that act per channel treat both layouts the same way;
// their result keeps the input's rank.

#include <cstdint>
#include <vector>

#include "cgl/tensor.hpp"

namespace cgl {

/// Cross-correlation (no kernel flip). `kernel` is C_out x C_in x k_h x k_w.
template <typename Real>
struct ConvSpec {
  Tensor<Real> kernel;
  std::size_t stride = 1;
  std::size_t padding = 0;
  // When set, (H + 2*padding - k_h) must be divisible by stride; otherwise the
  // trailing rows/columns that do not fill a whole stride are skipped.
  bool exact_extent = false;

  /// "same" padding, (k - 1) / 2; requires odd kernel extents.
  static ConvSpec same(Tensor<Real> kernel, std::size_t stride = 1);
};

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const ConvSpec<Real>& spec);

/// Adds bias[c] to every element of channel c.
template <typename Real>
Tensor<Real> bias_add(const Tensor<Real>& input, const Tensor<Real>& bias);

enum class Activation { relu, sigmoid };

template <typename Real>
Tensor<Real> pointwise(const Tensor<Real>& input, Activation fn);

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& input) {
  return pointwise(input, Activation::relu);
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& input) {
  return pointwise(input, Activation::sigmoid);
}

template <typename Real>
struct BatchNormState {
  Tensor<Real> scale;  // learnable, init 1
  Tensor<Real> shift;  // learnable, init 0
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real momentum = Real(0.1);
  Real epsilon = Real(1e-5);

  explicit BatchNormState(std::size_t channels = 0);
  std::size_t channels() const { return running_mean.size(); }
};

/// Training mode normalises with the statistics of this input (over batch and
/// spatial positions, population variance) and, if `update_running_stats`,
/// blends them into the running statistics. Eval mode uses running stats.
template <typename Real>
Tensor<Real> batch_norm(const Tensor<Real>& input, BatchNormState<Real>& state, bool training,
                        bool update_running_stats = true);

/// Per-pixel softmax over the class axis (third from last).
template <typename Real>
Tensor<Real> softmax_classes(const Tensor<Real>& logits);

/// Element-wise product. `b` may also have a single channel, which is then
/// broadcast over the channels of `a`.
template <typename Real>
Tensor<Real> hadamard(const Tensor<Real>& a, const Tensor<Real>& b);

/// Counter-clockwise quarter turn of every H x W plane:
/// out[..., W-1-x, y] = in[..., y, x].
template <typename Real>
Tensor<Real> rotate90(const Tensor<Real>& input);

/// Population variance over the last two axes. Result shape is the leading
/// shape (a scalar for a plain H x W map).
template <typename Real>
Tensor<Real> spatial_variance(const Tensor<Real>& input);

/// Channel `c` of a [N x] C x H x W tensor, keeping a unit channel axis.
template <typename Real>
Tensor<Real> slice_channel(const Tensor<Real>& input, std::size_t channel);

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& input, Real factor);
template <typename Real>
Tensor<Real> square(const Tensor<Real>& input);
template <typename Real>
Tensor<Real> sum(const Tensor<Real>& input);
template <typename Real>
Tensor<Real> mean(const Tensor<Real>& input);

/// Same values, cut from the graph.
template <typename Real>
Tensor<Real> detach(const Tensor<Real>& input);

/// Stacks equally shaped tensors along a new leading axis (no gradient).
template <typename Real>
Tensor<Real> stack(const std::vector<Tensor<Real>>& items);

/// Momentum SGD over a fixed parameter list:
///   v <- momentum * v + grad;  p <- p - lr * v;  grad <- 0.
class SgdError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Real>
class Sgd {
 public:
  Sgd(std::vector<Tensor<Real>> params, Real lr, Real momentum);

  /// Throws SgdError if any parameter has no gradient.
  void step();
  void zero_grad();

  Real learning_rate() const { return lr_; }
  Real momentum() const { return momentum_; }
  const std::vector<Tensor<Real>>& params() const { return params_; }
  std::vector<std::vector<Real>>& velocities() { return velocity_; }
  const std::vector<std::vector<Real>>& velocities() const { return velocity_; }

 private:
  std::vector<Tensor<Real>> params_;
  std::vector<std::vector<Real>> velocity_;
  Real lr_;
  Real momentum_;
};

}  // namespace cgl
