#include "cgl/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cgl/kernels.hpp"

namespace cgl {
namespace {

// [N x] C x H x W viewed as N x C x H x W.
struct Layout {
  std::size_t n, c, h, w;
  std::size_t plane() const { return h * w; }
};

Layout image_layout(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  throw ShapeError(std::string(op) + ": expected [N x] C x H x W, got " + to_string(s));
}

Shape with_chw(const Shape& like, std::size_t c, std::size_t h, std::size_t w) {
  if (like.size() == 4) return {like[0], c, h, w};
  return {c, h, w};
}

template <typename Real>
bool grad_wanted(const Node<Real>& self, std::size_t parent) {
  return self.parents.size() > parent && self.parents[parent]->requires_grad;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename Real>
ConvSpec<Real> ConvSpec<Real>::same(Tensor<Real> kernel, std::size_t stride) {
  const auto& ks = kernel.shape();
  if (ks.size() != 4) throw ShapeError("conv kernel must be C_out x C_in x k_h x k_w");
  if (ks[2] % 2 == 0 || ks[3] % 2 == 0 || ks[2] != ks[3]) {
    throw ShapeError("same padding needs square odd kernels, got " + to_string(ks));
  }
  return ConvSpec{std::move(kernel), stride, (ks[2] - 1) / 2, false};
}

namespace {

std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                        bool exact, const char* axis) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t padded = in + 2 * pad;
  if (padded < k) {
    throw ShapeError(std::string("conv2d: kernel larger than padded input along ") + axis);
  }
  if (exact && (padded - k) % stride != 0) {
    throw ShapeError(std::string("conv2d: non-integral output extent along ") + axis);
  }
  return (padded - k) / stride + 1;
}

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, kh, kw, stride, pad, ho, wo;
  std::size_t cols_rows() const { return c_in * kh * kw; }
  std::size_t cols_cols() const { return ho * wo; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename Real>
void im2col(const Real* x, const ConvGeometry& g, Real* cols) {
  const std::size_t p_count = g.cols_cols();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        Real* row = cols + ((c * g.kh + i) * g.kw + j) * p_count;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = y >= 0 && xx >= 0 && y < static_cast<std::ptrdiff_t>(g.h) &&
                                xx < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] = inside ? x[(c * g.h + y) * g.w + xx] : Real(0);
          }
        }
      }
    }
  }
}

template <typename Real>
void col2im_add(const Real* cols, const ConvGeometry& g, Real* dx) {
  const std::size_t p_count = g.cols_cols();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const Real* row = cols + ((c * g.kh + i) * g.kw + j) * p_count;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                   static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(c * g.h + y) * g.w + xx] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

template <typename Real>
std::vector<Real> transpose(const Real* src, std::size_t rows, std::size_t cols) {
  std::vector<Real> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

}  // namespace

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const ConvSpec<Real>& spec) {
  const Layout in = image_layout(input.shape(), "conv2d");
  const auto& ks = spec.kernel.shape();
  if (ks.size() != 4) throw ShapeError("conv2d: kernel must be C_out x C_in x k_h x k_w");
  if (ks[1] != in.c) {
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels, kernel expects " +
                     std::to_string(ks[1]));
  }
  ConvGeometry g{in.c, in.h, in.w, ks[0], ks[2], ks[3], spec.stride, spec.padding, 0, 0};
  g.ho = conv_extent(in.h, g.kh, g.stride, g.pad, spec.exact_extent, "height");
  g.wo = conv_extent(in.w, g.kw, g.stride, g.pad, spec.exact_extent, "width");

  const std::size_t kc = g.cols_rows();
  const std::size_t pc = g.cols_cols();
  const Real* x = input.data().data();
  const Real* k = spec.kernel.data().data();

  std::vector<Real> out(in.n * g.c_out * pc, Real(0));
  // Unfolded inputs are kept for the kernel gradient.
  auto cols = std::make_shared<std::vector<Real>>();
  if (!g.is_pointwise()) cols->resize(in.n * kc * pc);
  for (std::size_t n = 0; n < in.n; ++n) {
    const Real* xn = x + n * in.c * in.h * in.w;
    const Real* b = xn;
    if (!g.is_pointwise()) {
      im2col(xn, g, cols->data() + n * kc * pc);
      b = cols->data() + n * kc * pc;
    }
    kernels::gemm(g.c_out, pc, kc, k, kc, b, pc, out.data() + n * g.c_out * pc, pc);
  }

  return make_result<Real>(
      "conv2d", with_chw(input.shape(), g.c_out, g.ho, g.wo), std::move(out),
      {input, spec.kernel}, [g, n_batch = in.n, cols](Node<Real>& self) {
        const std::size_t kc = g.cols_rows();
        const std::size_t pc = g.cols_cols();
        const Real* dy = self.grad.data();
        auto& xin = *self.parents[0];
        auto& kern = *self.parents[1];
        if (kern.requires_grad) {
          auto& dk = kern.ensure_grad();
          for (std::size_t n = 0; n < n_batch; ++n) {
            const Real* b = g.is_pointwise() ? xin.data.data() + n * kc * pc
                                             : cols->data() + n * kc * pc;
            const auto bt = transpose(b, kc, pc);
            kernels::gemm(g.c_out, kc, pc, dy + n * g.c_out * pc, pc, bt.data(), kc, dk.data(),
                          kc);
          }
        }
        if (xin.requires_grad) {
          auto& dx = xin.ensure_grad();
          const auto kt = transpose(kern.data.data(), g.c_out, kc);
          std::vector<Real> dcols(kc * pc);
          for (std::size_t n = 0; n < n_batch; ++n) {
            Real* dxn = dx.data() + n * g.c_in * g.h * g.w;
            if (g.is_pointwise()) {
              kernels::gemm(kc, pc, g.c_out, kt.data(), g.c_out, dy + n * g.c_out * pc, pc, dxn,
                            pc);
            } else {
              std::fill(dcols.begin(), dcols.end(), Real(0));
              kernels::gemm(kc, pc, g.c_out, kt.data(), g.c_out, dy + n * g.c_out * pc, pc,
                            dcols.data(), pc);
              col2im_add(dcols.data(), g, dxn);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// element-wise family

template <typename Real>
Tensor<Real> bias_add(const Tensor<Real>& input, const Tensor<Real>& bias) {
  const Layout l = image_layout(input.shape(), "bias_add");
  if (bias.size() != l.c) throw ShapeError("bias_add: bias length must equal channel count");
  std::vector<Real> out(input.data().begin(), input.data().end());
  const Real* b = bias.data().data();
  for (std::size_t n = 0; n < l.n; ++n)
    for (std::size_t c = 0; c < l.c; ++c) {
      Real* p = out.data() + (n * l.c + c) * l.plane();
      for (std::size_t i = 0; i < l.plane(); ++i) p[i] += b[c];
    }
  return make_result<Real>("bias_add", input.shape(), std::move(out), {input, bias},
                           [l](Node<Real>& self) {
                             const Real* dy = self.grad.data();
                             if (grad_wanted(self, 0)) {
                               kernels::axpy(self.grad.size(), Real(1), dy,
                                             self.parents[0]->ensure_grad().data());
                             }
                             if (grad_wanted(self, 1)) {
                               auto& db = self.parents[1]->ensure_grad();
                               for (std::size_t n = 0; n < l.n; ++n)
                                 for (std::size_t c = 0; c < l.c; ++c) {
                                   const Real* p = dy + (n * l.c + c) * l.plane();
                                   Real s = 0;
                                   for (std::size_t i = 0; i < l.plane(); ++i) s += p[i];
                                   db[c] += s;
                                 }
                             }
                           });
}

template <typename Real>
Tensor<Real> pointwise(const Tensor<Real>& input, Activation fn) {
  const auto x = input.data();
  std::vector<Real> out(x.size());
  if (fn == Activation::relu) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > Real(0) ? x[i] : Real(0);
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = Real(1) / (Real(1) + std::exp(-x[i]));
  }
  const char* name = fn == Activation::relu ? "relu" : "sigmoid";
  return make_result<Real>(name, input.shape(), std::move(out), {input}, [fn](Node<Real>& self) {
    auto& parent = *self.parents[0];
    auto& dx = parent.ensure_grad();
    const Real* dy = self.grad.data();
    if (fn == Activation::relu) {
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (parent.data[i] > Real(0)) dx[i] += dy[i];
    } else {
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const Real s = self.data[i];
        dx[i] += dy[i] * s * (Real(1) - s);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// batch norm

template <typename Real>
BatchNormState<Real>::BatchNormState(std::size_t channels)
    : scale(Tensor<Real>::full({channels}, Real(1), true)),
      shift(Tensor<Real>::zeros({channels}, true)),
      running_mean(channels, Real(0)),
      running_var(channels, Real(1)) {}

template <typename Real>
Tensor<Real> batch_norm(const Tensor<Real>& input, BatchNormState<Real>& state, bool training,
                        bool update_running_stats) {
  const Layout l = image_layout(input.shape(), "batch_norm");
  if (l.c != state.channels()) {
    throw ShapeError("batch_norm: input has " + std::to_string(l.c) + " channels, state has " +
                     std::to_string(state.channels()));
  }
  const std::size_t m = l.n * l.plane();
  const Real* x = input.data().data();
  const Real* gamma = state.scale.data().data();
  const Real* beta = state.shift.data().data();

  std::vector<Real> xhat(input.size());
  std::vector<Real> inv_std(l.c);
  std::vector<Real> out(input.size());
  for (std::size_t c = 0; c < l.c; ++c) {
    Real mu, var;
    if (training) {
      double s = 0;
      for (std::size_t n = 0; n < l.n; ++n) {
        const Real* p = x + (n * l.c + c) * l.plane();
        for (std::size_t i = 0; i < l.plane(); ++i) s += p[i];
      }
      const double mean_d = s / static_cast<double>(m);
      double ss = 0;
      for (std::size_t n = 0; n < l.n; ++n) {
        const Real* p = x + (n * l.c + c) * l.plane();
        for (std::size_t i = 0; i < l.plane(); ++i) {
          const double d = p[i] - mean_d;
          ss += d * d;
        }
      }
      mu = static_cast<Real>(mean_d);
      var = static_cast<Real>(ss / static_cast<double>(m));
      if (update_running_stats) {
        state.running_mean[c] = (Real(1) - state.momentum) * state.running_mean[c] +
                                state.momentum * mu;
        state.running_var[c] = (Real(1) - state.momentum) * state.running_var[c] +
                               state.momentum * var;
      }
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    inv_std[c] = Real(1) / std::sqrt(var + state.epsilon);
    for (std::size_t n = 0; n < l.n; ++n) {
      const std::size_t off = (n * l.c + c) * l.plane();
      for (std::size_t i = 0; i < l.plane(); ++i) {
        xhat[off + i] = (x[off + i] - mu) * inv_std[c];
        out[off + i] = gamma[c] * xhat[off + i] + beta[c];
      }
    }
  }

  return make_result<Real>(
      "batch_norm", input.shape(), std::move(out), {input, state.scale, state.shift},
      [l, training, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<Real>& self) {
        const Real* dy = self.grad.data();
        const Real* gamma = self.parents[1]->data.data();
        for (std::size_t c = 0; c < l.c; ++c) {
          Real sum_dy = 0, sum_dy_xhat = 0;
          for (std::size_t n = 0; n < l.n; ++n) {
            const std::size_t off = (n * l.c + c) * l.plane();
            for (std::size_t i = 0; i < l.plane(); ++i) {
              sum_dy += dy[off + i];
              sum_dy_xhat += dy[off + i] * xhat[off + i];
            }
          }
          if (grad_wanted(self, 1)) self.parents[1]->ensure_grad()[c] += sum_dy_xhat;
          if (grad_wanted(self, 2)) self.parents[2]->ensure_grad()[c] += sum_dy;
          if (!grad_wanted(self, 0)) continue;
          auto& dx = self.parents[0]->ensure_grad();
          const Real g = gamma[c];
          if (training) {
            const Real k = g * inv_std[c] / static_cast<Real>(m);
            const Real mm = static_cast<Real>(m);
            for (std::size_t n = 0; n < l.n; ++n) {
              const std::size_t off = (n * l.c + c) * l.plane();
              for (std::size_t i = 0; i < l.plane(); ++i) {
                dx[off + i] += k * (mm * dy[off + i] - sum_dy - xhat[off + i] * sum_dy_xhat);
              }
            }
          } else {
            const Real k = g * inv_std[c];
            for (std::size_t n = 0; n < l.n; ++n) {
              const std::size_t off = (n * l.c + c) * l.plane();
              for (std::size_t i = 0; i < l.plane(); ++i) dx[off + i] += k * dy[off + i];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// softmax over classes

template <typename Real>
Tensor<Real> softmax_classes(const Tensor<Real>& logits) {
  const Layout l = image_layout(logits.shape(), "softmax_classes");
  if (l.c < 2) throw ShapeError("softmax_classes: need at least two classes");
  const Real* x = logits.data().data();
  std::vector<Real> out(logits.size());
  const std::size_t pl = l.plane();
  for (std::size_t n = 0; n < l.n; ++n) {
    const std::size_t base = n * l.c * pl;
    for (std::size_t i = 0; i < pl; ++i) {
      Real mx = x[base + i];
      for (std::size_t k = 1; k < l.c; ++k) mx = std::max(mx, x[base + k * pl + i]);
      Real z = 0;
      for (std::size_t k = 0; k < l.c; ++k) {
        const Real e = std::exp(x[base + k * pl + i] - mx);
        out[base + k * pl + i] = e;
        z += e;
      }
      for (std::size_t k = 0; k < l.c; ++k) out[base + k * pl + i] /= z;
    }
  }
  return make_result<Real>("softmax_classes", logits.shape(), std::move(out), {logits},
                           [l](Node<Real>& self) {
                             auto& dx = self.parents[0]->ensure_grad();
                             const Real* p = self.data.data();
                             const Real* dy = self.grad.data();
                             const std::size_t pl = l.plane();
                             for (std::size_t n = 0; n < l.n; ++n) {
                               const std::size_t base = n * l.c * pl;
                               for (std::size_t i = 0; i < pl; ++i) {
                                 Real dot = 0;
                                 for (std::size_t k = 0; k < l.c; ++k)
                                   dot += dy[base + k * pl + i] * p[base + k * pl + i];
                                 for (std::size_t k = 0; k < l.c; ++k) {
                                   const std::size_t j = base + k * pl + i;
                                   dx[j] += p[j] * (dy[j] - dot);
                                 }
                               }
                             }
                           });
}

// ---------------------------------------------------------------------------
// hadamard

template <typename Real>
Tensor<Real> hadamard(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() == b.shape()) {
    std::vector<Real> out(a.size());
    const auto x = a.data();
    const auto y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return make_result<Real>("hadamard", a.shape(), std::move(out), {a, b},
                             [](Node<Real>& self) {
                               const Real* dy = self.grad.data();
                               auto& pa = *self.parents[0];
                               auto& pb = *self.parents[1];
                               if (pa.requires_grad) {
                                 auto& da = pa.ensure_grad();
                                 for (std::size_t i = 0; i < da.size(); ++i)
                                   da[i] += dy[i] * pb.data[i];
                               }
                               if (pb.requires_grad) {
                                 auto& db = pb.ensure_grad();
                                 for (std::size_t i = 0; i < db.size(); ++i)
                                   db[i] += dy[i] * pa.data[i];
                               }
                             });
  }
  const Layout la = image_layout(a.shape(), "hadamard");
  const Layout lb = image_layout(b.shape(), "hadamard");
  if (a.rank() != b.rank() || lb.c != 1 || la.n != lb.n || la.h != lb.h || la.w != lb.w) {
    throw ShapeError("hadamard: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::size_t pl = la.plane();
  std::vector<Real> out(a.size());
  const Real* x = a.data().data();
  const Real* y = b.data().data();
  for (std::size_t n = 0; n < la.n; ++n)
    for (std::size_t c = 0; c < la.c; ++c) {
      const std::size_t off = (n * la.c + c) * pl;
      for (std::size_t i = 0; i < pl; ++i) out[off + i] = x[off + i] * y[n * pl + i];
    }
  return make_result<Real>("hadamard", a.shape(), std::move(out), {a, b},
                           [la](Node<Real>& self) {
                             const std::size_t pl = la.plane();
                             const Real* dy = self.grad.data();
                             auto& pa = *self.parents[0];
                             auto& pb = *self.parents[1];
                             for (std::size_t n = 0; n < la.n; ++n)
                               for (std::size_t c = 0; c < la.c; ++c) {
                                 const std::size_t off = (n * la.c + c) * pl;
                                 if (pa.requires_grad) {
                                   auto& da = pa.ensure_grad();
                                   for (std::size_t i = 0; i < pl; ++i)
                                     da[off + i] += dy[off + i] * pb.data[n * pl + i];
                                 }
                                 if (pb.requires_grad) {
                                   auto& db = pb.ensure_grad();
                                   for (std::size_t i = 0; i < pl; ++i)
                                     db[n * pl + i] += dy[off + i] * pa.data[off + i];
                                 }
                               }
                           });
}

// ---------------------------------------------------------------------------
// rotate90

template <typename Real>
Tensor<Real> rotate90(const Tensor<Real>& input) {
  const auto& s = input.shape();
  if (s.size() < 2) throw ShapeError("rotate90: need at least two axes");
  const std::size_t h = s[s.size() - 2];
  const std::size_t w = s[s.size() - 1];
  const std::size_t planes = input.size() / (h * w);
  Shape out_shape = s;
  out_shape[s.size() - 2] = w;
  out_shape[s.size() - 1] = h;
  std::vector<Real> out(input.size());
  const Real* x = input.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* src = x + p * h * w;
    Real* dst = out.data() + p * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) dst[(w - 1 - xx) * h + y] = src[y * w + xx];
  }
  return make_result<Real>("rotate90", std::move(out_shape), std::move(out), {input},
                           [h, w, planes](Node<Real>& self) {
                             auto& dx = self.parents[0]->ensure_grad();
                             const Real* dy = self.grad.data();
                             for (std::size_t p = 0; p < planes; ++p)
                               for (std::size_t y = 0; y < h; ++y)
                                 for (std::size_t xx = 0; xx < w; ++xx)
                                   dx[p * h * w + y * w + xx] +=
                                       dy[p * h * w + (w - 1 - xx) * h + y];
                           });
}

// ---------------------------------------------------------------------------
// spatial variance

template <typename Real>
Tensor<Real> spatial_variance(const Tensor<Real>& input) {
  const auto& s = input.shape();
  if (s.size() < 2) throw ShapeError("spatial_variance: need at least two axes");
  const std::size_t m = s[s.size() - 2] * s[s.size() - 1];
  if (m == 0) throw ShapeError("spatial_variance: empty plane");
  const std::size_t planes = input.size() / m;
  Shape out_shape(s.begin(), s.end() - 2);
  const Real* x = input.data().data();
  std::vector<Real> out(planes);
  auto means = std::make_shared<std::vector<Real>>(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* v = x + p * m;
    Real acc = 0;
    for (std::size_t i = 0; i < m; ++i) acc += v[i];
    const Real mu = acc / static_cast<Real>(m);
    Real sq = 0;
    for (std::size_t i = 0; i < m; ++i) sq += (v[i] - mu) * (v[i] - mu);
    (*means)[p] = mu;
    out[p] = sq / static_cast<Real>(m);
  }
  return make_result<Real>("spatial_variance", std::move(out_shape), std::move(out), {input},
                           [m, planes, means](Node<Real>& self) {
                             auto& parent = *self.parents[0];
                             auto& dx = parent.ensure_grad();
                             const Real k = Real(2) / static_cast<Real>(m);
                             for (std::size_t p = 0; p < planes; ++p) {
                               const Real g = self.grad[p] * k;
                               const Real mu = (*means)[p];
                               for (std::size_t i = 0; i < m; ++i)
                                 dx[p * m + i] += g * (parent.data[p * m + i] - mu);
                             }
                           });
}

template <typename Real>
Tensor<Real> slice_channel(const Tensor<Real>& input, std::size_t channel) {
  const Layout l = image_layout(input.shape(), "slice_channel");
  if (channel >= l.c) throw ShapeError("slice_channel: channel out of range");
  const std::size_t pl = l.plane();
  std::vector<Real> out(l.n * pl);
  const Real* x = input.data().data();
  for (std::size_t n = 0; n < l.n; ++n)
    std::copy_n(x + (n * l.c + channel) * pl, pl, out.data() + n * pl);
  return make_result<Real>("slice_channel", with_chw(input.shape(), 1, l.h, l.w), std::move(out),
                           {input}, [l, channel](Node<Real>& self) {
                             auto& dx = self.parents[0]->ensure_grad();
                             const std::size_t pl = l.plane();
                             for (std::size_t n = 0; n < l.n; ++n)
                               for (std::size_t i = 0; i < pl; ++i)
                                 dx[(n * l.c + channel) * pl + i] += self.grad[n * pl + i];
                           });
}

// ---------------------------------------------------------------------------
// arithmetic and reductions

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<Real>("add", a.shape(), std::move(out), {a, b}, [](Node<Real>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!grad_wanted(self, k)) continue;
      kernels::axpy(self.grad.size(), Real(1), self.grad.data(),
                    self.parents[k]->ensure_grad().data());
    }
  });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("sub: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  std::vector<Real> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result<Real>("sub", a.shape(), std::move(out), {a, b}, [](Node<Real>& self) {
    if (grad_wanted(self, 0))
      kernels::axpy(self.grad.size(), Real(1), self.grad.data(),
                    self.parents[0]->ensure_grad().data());
    if (grad_wanted(self, 1))
      kernels::axpy(self.grad.size(), Real(-1), self.grad.data(),
                    self.parents[1]->ensure_grad().data());
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& input, Real factor) {
  std::vector<Real> out(input.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.data()[i] * factor;
  return make_result<Real>("scale", input.shape(), std::move(out), {input},
                           [factor](Node<Real>& self) {
                             auto& dx = self.parents[0]->ensure_grad();
                             for (std::size_t i = 0; i < dx.size(); ++i)
                               dx[i] += self.grad[i] * factor;
                           });
}

template <typename Real>
Tensor<Real> square(const Tensor<Real>& input) {
  std::vector<Real> out(input.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.data()[i] * input.data()[i];
  return make_result<Real>("square", input.shape(), std::move(out), {input},
                           [](Node<Real>& self) {
                             auto& parent = *self.parents[0];
                             auto& dx = parent.ensure_grad();
                             for (std::size_t i = 0; i < dx.size(); ++i)
                               dx[i] += Real(2) * parent.data[i] * self.grad[i];
                           });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& input) {
  Real acc = 0;
  for (Real v : input.data()) acc += v;
  return make_result<Real>("sum", {}, {acc}, {input}, [](Node<Real>& self) {
    auto& dx = self.parents[0]->ensure_grad();
    for (auto& v : dx) v += self.grad[0];
  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& input) {
  if (input.size() == 0) throw ShapeError("mean of empty tensor");
  const Real n = static_cast<Real>(input.size());
  Real acc = 0;
  for (Real v : input.data()) acc += v;
  return make_result<Real>("mean", {}, {acc / n}, {input}, [n](Node<Real>& self) {
    auto& dx = self.parents[0]->ensure_grad();
    const Real g = self.grad[0] / n;
    for (auto& v : dx) v += g;
  });
}

template <typename Real>
Tensor<Real> detach(const Tensor<Real>& input) {
  return Tensor<Real>::from_data(input.shape(), {input.data().begin(), input.data().end()});
}

template <typename Real>
Tensor<Real> stack(const std::vector<Tensor<Real>>& items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  const Shape& s = items.front().shape();
  Shape out_shape{items.size()};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  std::vector<Real> out;
  out.reserve(numel(out_shape));
  for (const auto& t : items) {
    if (t.shape() != s) throw ShapeError("stack: shapes differ");
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return Tensor<Real>::from_data(std::move(out_shape), std::move(out));
}

// ---------------------------------------------------------------------------
// SGD

template <typename Real>
Sgd<Real>::Sgd(std::vector<Tensor<Real>> params, Real lr, Real momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  if (!(lr >= Real(0))) throw std::invalid_argument("learning rate must be non-negative");
  if (!(momentum >= Real(0) && momentum < Real(1))) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.emplace_back(p.size(), Real(0));
}

template <typename Real>
void Sgd<Real>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw SgdError("parameter " + std::to_string(i) + " " + to_string(params_[i].shape()) +
                     " has no gradient");
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].mutable_data();
    kernels::momentum_update(p.size(), lr_, momentum_, p.data(), velocity_[i].data(),
                             params_[i].grad().data());
    check_finite<Real>(p, "sgd step");
  }
  zero_grad();
}

template <typename Real>
void Sgd<Real>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------

#define CGL_INSTANTIATE(R)                                                           \
  template struct ConvSpec<R>;                                                       \
  template struct BatchNormState<R>;                                                 \
  template class Sgd<R>;                                                             \
  template Tensor<R> conv2d(const Tensor<R>&, const ConvSpec<R>&);                   \
  template Tensor<R> bias_add(const Tensor<R>&, const Tensor<R>&);                   \
  template Tensor<R> pointwise(const Tensor<R>&, Activation);                        \
  template Tensor<R> batch_norm(const Tensor<R>&, BatchNormState<R>&, bool, bool);   \
  template Tensor<R> softmax_classes(const Tensor<R>&);                              \
  template Tensor<R> hadamard(const Tensor<R>&, const Tensor<R>&);                   \
  template Tensor<R> rotate90(const Tensor<R>&);                                     \
  template Tensor<R> spatial_variance(const Tensor<R>&);                             \
  template Tensor<R> slice_channel(const Tensor<R>&, std::size_t);                   \
  template Tensor<R> add(const Tensor<R>&, const Tensor<R>&);                        \
  template Tensor<R> sub(const Tensor<R>&, const Tensor<R>&);                        \
  template Tensor<R> scale(const Tensor<R>&, R);                                     \
  template Tensor<R> square(const Tensor<R>&);                                       \
  template Tensor<R> sum(const Tensor<R>&);                                          \
  template Tensor<R> mean(const Tensor<R>&);                                         \
  template Tensor<R> detach(const Tensor<R>&);                                       \
  template Tensor<R> stack(const std::vector<Tensor<R>>&);

CGL_INSTANTIATE(float)
CGL_INSTANTIATE(double)

#undef CGL_INSTANTIATE

}  // namespace cgl
