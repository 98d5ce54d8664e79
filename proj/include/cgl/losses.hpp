#pragma once

// Training objectives: cross-entropy for both decoders, the rotation
// equivariance loss on encoder features (GTE), intraclass variance
// reduction (IVR), and their weighted total.

#include <span>

#include "cgl/imaging.hpp"
#include "cgl/model.hpp"
#include "cgl/ops.hpp"

namespace cgl {

struct LossWeights {
  double alpha = 1.0;  // CGLSB cross-entropy
  double beta = 1.0;   // DFLB cross-entropy against the pseudo labels
  double gamma = 0.1;  // GTE
  double delta = 0.1;  // IVR

  /// Throws std::invalid_argument on a negative or non-finite weight, or alpha == 0.
  void validate() const;
};

struct LossReport {
  double l_cgl = 0, l_dflb = 0, l_gte = 0, l_ivr = 0, total = 0;
};

/// Mean over pixels (and batch items) of -log softmax(logits)[target].
/// `logits` is [N x] 2 x h x w with one target mask per batch item.
template <typename Real>
Tensor<Real> cross_entropy_loss(const Tensor<Real>& logits, std::span<const LabelMask> targets);

enum class RotationDirection { counter_clockwise, clockwise };

/// Rotates every plane by a quarter turn in the given direction.
template <typename Real>
Tensor<Real> rotate_quarter(const Tensor<Real>& input, RotationDirection dir);

/// Mean squared difference of two equally shaped tensors.
template <typename Real>
Tensor<Real> mse(const Tensor<Real>& a, const Tensor<Real>& b);

/// MSE(encode(rot(image)), rot(encode(image))). If `encoded` is given it is
/// used as encode(image) so the training step does not run the encoder twice
/// on the unrotated batch.
template <typename Real>
Tensor<Real> gte_loss(Encoder<Real>& encoder, const Tensor<Real>& image, NormMode mode,
                      RotationDirection dir = RotationDirection::counter_clockwise,
                      const Tensor<Real>* encoded = nullptr);

enum class IvrNormalization {
  per_channel,  // 1/d: mean over feature channels
  none          // plain sum over channels
};

struct IvrOptions {
  IvrNormalization normalization = IvrNormalization::per_channel;
  bool detach_probabilities = false;  // treat softmax(logits) as constants
};

/// sum_i norm * sum_j var(p[i] o F_e[j]), p = softmax over the class axis,
/// var over the spatial plane. Batched inputs are averaged over the batch.
template <typename Real>
Tensor<Real> ivr_loss(const Tensor<Real>& cgl_logits, const Tensor<Real>& encoded,
                      const IvrOptions& options = {});

/// Weighted sum of already evaluated components.
LossReport total_loss(double l_cgl, double l_dflb, double l_gte, double l_ivr,
                      const LossWeights& w);

/// Differentiable weighted sum; undefined terms (skipped losses) count as zero.
template <typename Real>
Tensor<Real> weighted_total(const Tensor<Real>& l_cgl, const Tensor<Real>& l_dflb,
                            const Tensor<Real>& l_gte, const Tensor<Real>& l_ivr,
                            const LossWeights& w);

}  // namespace cgl
