#include "cgl/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "cgl/random.hpp"

namespace cgl {

void EncoderConfig::validate() const {
  if (d < 4 || d % 4 != 0) {
    throw std::invalid_argument("encoder width d must be a positive multiple of 4, got " +
                                std::to_string(d));
  }
}

namespace {

// Uniform in [-b, b] with b = sqrt(6 / fan_in).
template <typename Real>
Tensor<Real> kaiming_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Real> data(numel(shape));
  for (auto& v : data) v = static_cast<Real>(dist(rng));
  return Tensor<Real>::from_data(std::move(shape), std::move(data), true);
}

template <typename Real>
void assign(Tensor<Real>& t, std::span<const Real> values, const std::string& name) {
  if (values.size() != t.size()) {
    throw std::invalid_argument("tensor '" + name + "' expects " + std::to_string(t.size()) +
                                " values, got " + std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), t.mutable_data().begin());
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvBlock

template <typename Real>
ConvBlock<Real>::ConvBlock(const ConvLayerSpec& spec, std::uint64_t seed)
    : spec_(spec), norm_(spec.batch_norm ? spec.out_channels : 0) {
  if (spec.in_channels == 0 || spec.out_channels == 0 || spec.kernel % 2 == 0 || spec.stride == 0) {
    throw std::invalid_argument("invalid conv layer spec");
  }
  kernel_ = kaiming_uniform<Real>({spec.out_channels, spec.in_channels, spec.kernel, spec.kernel},
                                  spec.in_channels * spec.kernel * spec.kernel, seed);
}

template <typename Real>
Tensor<Real> ConvBlock<Real>::forward(const Tensor<Real>& x, NormMode mode) {
  Tensor<Real> y = conv2d(x, ConvSpec<Real>::same(kernel_, spec_.stride));
  if (spec_.batch_norm) {
    switch (mode) {
      case NormMode::batch_statistics: y = batch_norm(y, norm_, true, true); break;
      case NormMode::batch_frozen: y = batch_norm(y, norm_, true, false); break;
      case NormMode::running_statistics: y = batch_norm(y, norm_, false); break;
    }
  }
  if (spec_.relu) y = relu(y);
  return y;
}

template <typename Real>
void ConvBlock<Real>::collect_parameters(const std::string& prefix,
                                         std::vector<NamedTensor<Real>>& out) {
  out.push_back({prefix + ".kernel", kernel_});
  if (spec_.batch_norm) {
    out.push_back({prefix + ".bn.scale", norm_.scale});
    out.push_back({prefix + ".bn.shift", norm_.shift});
  }
}

template <typename Real>
void ConvBlock<Real>::collect_buffers(const std::string& prefix,
                                      std::vector<NamedTensor<Real>>& out) const {
  if (!spec_.batch_norm) return;
  const std::size_t c = norm_.channels();
  out.push_back({prefix + ".bn.running_mean", Tensor<Real>::from_data({c}, norm_.running_mean)});
  out.push_back({prefix + ".bn.running_var", Tensor<Real>::from_data({c}, norm_.running_var)});
}

template <typename Real>
void ConvBlock<Real>::load_buffer(const std::string& which, std::span<const Real> values) {
  auto& target = which == "running_mean" ? norm_.running_mean : norm_.running_var;
  if (!spec_.batch_norm || values.size() != target.size()) {
    throw std::invalid_argument("batch-norm buffer '" + which + "' size mismatch");
  }
  target.assign(values.begin(), values.end());
}

// ---------------------------------------------------------------------------
// Encoder

template <typename Real>
Encoder<Real>::Encoder(std::vector<ConvLayerSpec> layers, std::uint64_t seed) {
  if (layers.empty()) throw std::invalid_argument("encoder needs at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i > 0 && layers[i].in_channels != layers[i - 1].out_channels) {
      throw std::invalid_argument("encoder layer " + std::to_string(i) +
                                  " input channels do not match the previous layer");
    }
    layers_.emplace_back(layers[i], mix_seed(seed, i));
  }
}

template <typename Real>
Encoder<Real> Encoder<Real>::tiny_stride4(const EncoderConfig& cfg) {
  cfg.validate();
  std::vector<ConvLayerSpec> specs;
  specs.push_back({3, cfg.d / 2, 3, 2, true, true});
  specs.push_back({cfg.d / 2, cfg.d, 3, 2, true, true});
  for (std::size_t i = 0; i < cfg.depth_of_stack; ++i) specs.push_back({cfg.d, cfg.d, 3, 1, true, true});
  return Encoder(std::move(specs), mix_seed(cfg.seed, 1000));
}

template <typename Real>
Tensor<Real> Encoder<Real>::forward(const Tensor<Real>& image, NormMode mode) {
  const auto& s = image.shape();
  if (s.size() < 3 || s.size() > 4 || s[s.size() - 3] != layers_.front().spec().in_channels) {
    throw ShapeError("encoder expects [N x] " + std::to_string(layers_.front().spec().in_channels) +
                     " x H x W, got " + to_string(s));
  }
  const std::size_t stride = output_stride();
  if (s[s.size() - 2] % stride != 0 || s[s.size() - 1] % stride != 0) {
    throw ShapeError("image extents " + to_string(s) + " not divisible by " +
                     std::to_string(stride));
  }
  Tensor<Real> x = image;
  for (auto& layer : layers_) x = layer.forward(x, mode);
  return x;
}

template <typename Real>
std::size_t Encoder<Real>::output_stride() const {
  std::size_t s = 1;
  for (const auto& l : layers_) s *= l.spec().stride;
  return s;
}

template <typename Real>
std::size_t Encoder<Real>::out_channels() const {
  return layers_.back().spec().out_channels;
}

template <typename Real>
void Encoder<Real>::collect_parameters(const std::string& prefix,
                                       std::vector<NamedTensor<Real>>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect_parameters(prefix + "." + std::to_string(i), out);
  }
}

template <typename Real>
void Encoder<Real>::collect_buffers(const std::string& prefix,
                                    std::vector<NamedTensor<Real>>& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect_buffers(prefix + "." + std::to_string(i), out);
  }
}

// ---------------------------------------------------------------------------
// DecoderBlock

template <typename Real>
DecoderBlock<Real>::DecoderBlock(std::size_t d, std::uint64_t seed)
    : layer1_(ConvLayerSpec{d, d / 4, 3, 1, true, true}, mix_seed(seed, 0)) {
  head_kernel_ = kaiming_uniform<Real>({2, d / 4, 1, 1}, d / 4, mix_seed(seed, 1));
  head_bias_ = Tensor<Real>::zeros({2}, true);
}

template <typename Real>
Tensor<Real> DecoderBlock<Real>::features(const Tensor<Real>& encoded, NormMode mode) {
  return layer1_.forward(encoded, mode);
}

template <typename Real>
Tensor<Real> DecoderBlock<Real>::classify(const Tensor<Real>& features) const {
  return bias_add(conv2d(features, ConvSpec<Real>{head_kernel_, 1, 0, false}), head_bias_);
}

template <typename Real>
void DecoderBlock<Real>::collect_parameters(const std::string& prefix,
                                            std::vector<NamedTensor<Real>>& out) {
  layer1_.collect_parameters(prefix + ".layer1", out);
  out.push_back({prefix + ".head.kernel", head_kernel_});
  out.push_back({prefix + ".head.bias", head_bias_});
}

template <typename Real>
void DecoderBlock<Real>::collect_buffers(const std::string& prefix,
                                         std::vector<NamedTensor<Real>>& out) const {
  layer1_.collect_buffers(prefix + ".layer1", out);
}

// ---------------------------------------------------------------------------
// CglModel

template <typename Real>
CglModel<Real>::CglModel(const EncoderConfig& cfg)
    : config_(cfg),
      encoder_(Encoder<Real>::tiny_stride4(cfg)),
      dflb_(cfg.d, mix_seed(cfg.seed, 2000)),
      cglsb_(cfg.d, mix_seed(cfg.seed, 3000)) {}

template <typename Real>
Tensor<Real> CglModel<Real>::encode(const Tensor<Real>& image) {
  return encoder_.forward(image, norm_mode());
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> CglModel<Real>::dflb_forward(const Tensor<Real>& encoded) {
  auto f1 = dflb_.features(encoded, norm_mode());
  auto logits = dflb_.classify(f1);
  return {std::move(f1), std::move(logits)};
}

template <typename Real>
Tensor<Real> CglModel<Real>::cglsb_forward(const Tensor<Real>& encoded,
                                           const Tensor<Real>& dflb_features) {
  const auto f1_cgl = cglsb_.features(encoded, norm_mode());
  if (dflb_features.shape() != f1_cgl.shape()) {
    throw ShapeError("fusion needs F1_DFLB of shape " + to_string(f1_cgl.shape()) + ", got " +
                     to_string(dflb_features.shape()));
  }
  return cglsb_.classify(hadamard(dflb_features, f1_cgl));
}

template <typename Real>
TrainOutputs<Real> CglModel<Real>::forward_train(const Tensor<Real>& image) {
  TrainOutputs<Real> out;
  out.encoded = encode(image);
  std::tie(out.dflb_features, out.dflb_logits) = dflb_forward(out.encoded);
  out.cgl_logits = cglsb_forward(out.encoded, out.dflb_features);
  return out;
}

template <typename Real>
Tensor<Real> CglModel<Real>::infer(const Tensor<Real>& image) {
  const NormMode mode = NormMode::running_statistics;
  const auto encoded = encoder_.forward(image, mode);
  const auto f1_dflb = dflb_.features(encoded, mode);
  const auto f1_cgl = cglsb_.features(encoded, mode);
  return cglsb_.classify(hadamard(f1_dflb, f1_cgl));
}

template <typename Real>
std::vector<NamedTensor<Real>> CglModel<Real>::named_parameters() {
  std::vector<NamedTensor<Real>> out;
  encoder_.collect_parameters("encoder", out);
  dflb_.collect_parameters("dflb", out);
  cglsb_.collect_parameters("cglsb", out);
  return out;
}

template <typename Real>
std::vector<Tensor<Real>> CglModel<Real>::parameters() {
  std::vector<Tensor<Real>> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

template <typename Real>
std::vector<NamedTensor<Real>> CglModel<Real>::named_buffers() const {
  std::vector<NamedTensor<Real>> out;
  encoder_.collect_buffers("encoder", out);
  dflb_.collect_buffers("dflb", out);
  cglsb_.collect_buffers("cglsb", out);
  return out;
}

template <typename Real>
void CglModel<Real>::load_tensor(const std::string& name, std::span<const Real> values) {
  for (auto& p : named_parameters()) {
    if (p.name == name) {
      assign(p.tensor, values, name);
      return;
    }
  }
  const auto dot = name.rfind(".bn.running_");
  if (dot != std::string::npos) {
    const std::string owner = name.substr(0, dot);
    const std::string which = name.substr(dot + 4);
    ConvBlock<Real>* block = nullptr;
    if (owner == "dflb.layer1") block = &dflb_.layer1();
    else if (owner == "cglsb.layer1") block = &cglsb_.layer1();
    else if (owner.rfind("encoder.", 0) == 0) {
      const std::size_t idx = std::stoul(owner.substr(8));
      if (idx < encoder_.layers().size()) block = &encoder_.layers()[idx];
    }
    if (block && (which == "running_mean" || which == "running_var")) {
      block->load_buffer(which, values);
      return;
    }
  }
  throw std::invalid_argument("unknown tensor name '" + name + "'");
}

template <typename Real>
std::size_t CglModel<Real>::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.size();
  return n;
}

// ---------------------------------------------------------------------------

template <typename Real>
std::vector<LabelMask> argmax_masks(const Tensor<Real>& logits) {
  const auto& s = logits.shape();
  if ((s.size() != 3 && s.size() != 4) || s[s.size() - 3] != 2) {
    throw ShapeError("argmax_masks expects [N x] 2 x h x w logits, got " + to_string(s));
  }
  const std::size_t n = s.size() == 4 ? s[0] : 1;
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const auto data = logits.data();
  std::vector<LabelMask> out;
  for (std::size_t b = 0; b < n; ++b) {
    LabelMask m(h, w);
    const Real* bg = data.data() + b * 2 * h * w;
    const Real* fg = bg + h * w;
    for (std::size_t i = 0; i < h * w; ++i) m.values[i] = fg[i] > bg[i] ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

template <typename Real>
Tensor<Real> image_to_tensor(const RgbImage& image) {
  const std::size_t hw = image.height * image.width;
  std::vector<Real> data(3 * hw);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      data[c * hw + i] = static_cast<Real>(image.pixels[i * 3 + c]) / Real(255);
    }
  return Tensor<Real>::from_data({3, image.height, image.width}, std::move(data));
}

#define CGL_INSTANTIATE(R)                                               \
  template class ConvBlock<R>;                                           \
  template class Encoder<R>;                                             \
  template class DecoderBlock<R>;                                        \
  template class CglModel<R>;                                            \
  template std::vector<LabelMask> argmax_masks<R>(const Tensor<R>&);     \
  template Tensor<R> image_to_tensor<R>(const RgbImage&);

CGL_INSTANTIATE(float)
CGL_INSTANTIATE(double)

#undef CGL_INSTANTIATE

}  // namespace cgl
