#include "cgl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cgl {

void LossWeights::validate() const {
  for (double v : {alpha, beta, gamma, delta}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument("loss weights must be finite and non-negative");
    }
  }
  if (alpha <= 0.0) throw std::invalid_argument("alpha must be positive");
}

template <typename Real>
Tensor<Real> cross_entropy_loss(const Tensor<Real>& logits, std::span<const LabelMask> targets) {
  const auto& s = logits.shape();
  if ((s.size() != 3 && s.size() != 4) || s[s.size() - 3] != 2) {
    throw ShapeError("cross_entropy_loss expects [N x] 2 x h x w logits, got " + to_string(s));
  }
  const std::size_t n = s.size() == 4 ? s[0] : 1;
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1], hw = h * w;
  if (targets.size() != n) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(n) + " logit maps but " +
                     std::to_string(targets.size()) + " targets");
  }
  for (const auto& t : targets) {
    if (t.height != h || t.width != w) {
      throw ShapeError("cross_entropy_loss: target " + std::to_string(t.height) + "x" +
                       std::to_string(t.width) + " does not match logits " + to_string(s));
    }
    for (auto v : t.values) {
      if (v > 1) throw std::invalid_argument("cross_entropy_loss: target is not binary");
    }
  }

  // Per pixel: loss = logsumexp(z) - z[t]; d/dz_k = softmax_k - [k == t].
  const auto z = logits.data();
  std::vector<Real> prob1(n * hw);
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const Real* z0 = z.data() + b * 2 * hw;
    const Real* z1 = z0 + hw;
    const auto& t = targets[b].values;
    for (std::size_t i = 0; i < hw; ++i) {
      const Real m = std::max(z0[i], z1[i]);
      const Real e0 = std::exp(z0[i] - m), e1 = std::exp(z1[i] - m);
      const Real lse = m + std::log(e0 + e1);
      total += static_cast<double>(lse - (t[i] ? z1[i] : z0[i]));
      prob1[b * hw + i] = e1 / (e0 + e1);
    }
  }
  const double count = static_cast<double>(n * hw);
  std::vector<LabelMask> held(targets.begin(), targets.end());
  return make_result<Real>(
      "cross_entropy", {}, {static_cast<Real>(total / count)}, {logits},
      [parent = logits.impl(), prob1 = std::move(prob1), held = std::move(held), n, hw,
       count](Node<Real>& self) {
        if (!parent->requires_grad) return;
        const Real g = self.grad[0] / static_cast<Real>(count);
        auto& pg = parent->ensure_grad();
        for (std::size_t b = 0; b < n; ++b) {
          Real* g0 = pg.data() + b * 2 * hw;
          Real* g1 = g0 + hw;
          const auto& t = held[b].values;
          for (std::size_t i = 0; i < hw; ++i) {
            const Real p1 = prob1[b * hw + i];
            const Real y1 = t[i] ? Real(1) : Real(0);
            g1[i] += g * (p1 - y1);
            g0[i] += g * ((Real(1) - p1) - (Real(1) - y1));
          }
        }
      });
}

template <typename Real>
Tensor<Real> rotate_quarter(const Tensor<Real>& input, RotationDirection dir) {
  if (dir == RotationDirection::counter_clockwise) return rotate90(input);
  return rotate90(rotate90(rotate90(input)));
}

template <typename Real>
Tensor<Real> mse(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " differ");
  }
  return mean(square(sub(a, b)));
}

template <typename Real>
Tensor<Real> gte_loss(Encoder<Real>& encoder, const Tensor<Real>& image, NormMode mode,
                      RotationDirection dir, const Tensor<Real>* encoded) {
  const Tensor<Real> fe = encoded ? *encoded : encoder.forward(image, mode);
  const Tensor<Real> fe_t = encoder.forward(rotate_quarter(image, dir), mode);
  return mse(fe_t, rotate_quarter(fe, dir));
}

template <typename Real>
Tensor<Real> ivr_loss(const Tensor<Real>& cgl_logits, const Tensor<Real>& encoded,
                      const IvrOptions& options) {
  const auto& ls = cgl_logits.shape();
  const auto& fs = encoded.shape();
  if (ls.size() != fs.size() || (ls.size() != 3 && ls.size() != 4) ||
      ls[ls.size() - 3] != 2 || ls[ls.size() - 2] != fs[fs.size() - 2] ||
      ls[ls.size() - 1] != fs[fs.size() - 1] || (ls.size() == 4 && ls[0] != fs[0])) {
    throw ShapeError("ivr_loss: logits " + to_string(ls) + " incompatible with features " +
                     to_string(fs));
  }
  const std::size_t n = ls.size() == 4 ? ls[0] : 1;
  const std::size_t d = fs[fs.size() - 3];
  Tensor<Real> p = softmax_classes(cgl_logits);
  if (options.detach_probabilities) p = detach(p);

  Real factor = Real(1) / static_cast<Real>(n);
  if (options.normalization == IvrNormalization::per_channel) factor /= static_cast<Real>(d);

  Tensor<Real> total;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto term = sum(spatial_variance(hadamard(encoded, slice_channel(p, i))));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, factor);
}

LossReport total_loss(double l_cgl, double l_dflb, double l_gte, double l_ivr,
                      const LossWeights& w) {
  w.validate();
  LossReport r{l_cgl, l_dflb, l_gte, l_ivr, 0.0};
  r.total = w.alpha * l_cgl + w.beta * l_dflb + w.gamma * l_gte + w.delta * l_ivr;
  return r;
}

template <typename Real>
Tensor<Real> weighted_total(const Tensor<Real>& l_cgl, const Tensor<Real>& l_dflb,
                            const Tensor<Real>& l_gte, const Tensor<Real>& l_ivr,
                            const LossWeights& w) {
  w.validate();
  Tensor<Real> total = scale(l_cgl, static_cast<Real>(w.alpha));
  const std::pair<const Tensor<Real>*, double> rest[] = {
      {&l_dflb, w.beta}, {&l_gte, w.gamma}, {&l_ivr, w.delta}};
  for (const auto& [t, weight] : rest) {
    if (t->defined()) total = add(total, scale(*t, static_cast<Real>(weight)));
  }
  return total;
}

#define CGL_INSTANTIATE(R)                                                                    \
  template Tensor<R> cross_entropy_loss<R>(const Tensor<R>&, std::span<const LabelMask>);     \
  template Tensor<R> rotate_quarter<R>(const Tensor<R>&, RotationDirection);                  \
  template Tensor<R> mse<R>(const Tensor<R>&, const Tensor<R>&);                              \
  template Tensor<R> gte_loss<R>(Encoder<R>&, const Tensor<R>&, NormMode, RotationDirection, \
                                 const Tensor<R>*);                                           \
  template Tensor<R> ivr_loss<R>(const Tensor<R>&, const Tensor<R>&, const IvrOptions&);      \
  template Tensor<R> weighted_total<R>(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&,  \
                                       const Tensor<R>&, const LossWeights&);

CGL_INSTANTIATE(float)
CGL_INSTANTIATE(double)

#undef CGL_INSTANTIATE

}  // namespace cgl
