#pragma once

// Shared encoder with two decoders:
//   DFLB  - auxiliary decoder supervised by depth-derived pseudo labels;
//   CGLSB - main decoder, whose class head sees DFLB's first-layer features
//           multiplied element-wise with its own.
// At inference only the DFLB classifier head is skipped; its first layer stays
// on the path because the fusion needs it.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cgl/image_io.hpp"
#include "cgl/imaging.hpp"
#include "cgl/ops.hpp"

namespace cgl {

struct EncoderConfig {
  std::size_t d = 32;               // encoder channels; decoders use d / 4
  std::size_t depth_of_stack = 2;   // stride-1 blocks after the stride-2 stem
  std::uint64_t seed = 0;

  void validate() const;
};

/// One conv (+ optional batch norm) (+ optional ReLU) layer of an encoder.
struct ConvLayerSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool batch_norm = true;
  bool relu = true;
};

/// How batch norm behaves during a forward pass.
enum class NormMode {
  batch_statistics,   // normalise with batch stats and update running stats
  batch_frozen,       // normalise with batch stats, leave running stats alone
  running_statistics  // eval: use running stats
};

template <typename Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> tensor;
};

template <typename Real>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const ConvLayerSpec& spec, std::uint64_t seed);

  Tensor<Real> forward(const Tensor<Real>& x, NormMode mode);

  const ConvLayerSpec& spec() const { return spec_; }
  Tensor<Real>& kernel() { return kernel_; }
  BatchNormState<Real>& norm() { return norm_; }

  void collect_parameters(const std::string& prefix, std::vector<NamedTensor<Real>>& out);
  /// Running mean/var exposed as tensors sharing nothing with the state.
  void collect_buffers(const std::string& prefix, std::vector<NamedTensor<Real>>& out) const;
  void load_buffer(const std::string& which, std::span<const Real> values);

 private:
  ConvLayerSpec spec_;
  Tensor<Real> kernel_;
  BatchNormState<Real> norm_;
};

template <typename Real>
class Encoder {
 public:
  Encoder() = default;
  Encoder(std::vector<ConvLayerSpec> layers, std::uint64_t seed);

  /// conv3x3/2 (3 -> d/2), conv3x3/2 (d/2 -> d), then depth_of_stack
  /// conv3x3/1 (d -> d); every conv followed by batch norm and ReLU.
  static Encoder tiny_stride4(const EncoderConfig& cfg);

  /// [N x] 3 x H x W -> [N x] d x H/s x W/s, s = output_stride().
  Tensor<Real> forward(const Tensor<Real>& image, NormMode mode);

  std::size_t output_stride() const;
  std::size_t out_channels() const;
  std::vector<ConvBlock<Real>>& layers() { return layers_; }

  void collect_parameters(const std::string& prefix, std::vector<NamedTensor<Real>>& out);
  void collect_buffers(const std::string& prefix, std::vector<NamedTensor<Real>>& out) const;

 private:
  std::vector<ConvBlock<Real>> layers_;
};

/// layer1: conv3x3 (d -> d/4) + BN + ReLU; head: conv1x1 (d/4 -> 2) + bias.
template <typename Real>
class DecoderBlock {
 public:
  DecoderBlock() = default;
  DecoderBlock(std::size_t d, std::uint64_t seed);

  Tensor<Real> features(const Tensor<Real>& encoded, NormMode mode);
  Tensor<Real> classify(const Tensor<Real>& features) const;

  ConvBlock<Real>& layer1() { return layer1_; }
  Tensor<Real>& head_kernel() { return head_kernel_; }
  Tensor<Real>& head_bias() { return head_bias_; }

  void collect_parameters(const std::string& prefix, std::vector<NamedTensor<Real>>& out);
  void collect_buffers(const std::string& prefix, std::vector<NamedTensor<Real>>& out) const;

 private:
  ConvBlock<Real> layer1_;
  Tensor<Real> head_kernel_;
  Tensor<Real> head_bias_;
};

template <typename Real>
struct TrainOutputs {
  Tensor<Real> encoded;        // F_e
  Tensor<Real> dflb_features;  // F1_DFLB
  Tensor<Real> dflb_logits;    // y_hat_DFLB
  Tensor<Real> cgl_logits;     // y_hat_CGL
};

template <typename Real>
class CglModel {
 public:
  explicit CglModel(const EncoderConfig& cfg = {});
  // Copies would share parameter storage.
  CglModel(const CglModel&) = delete;
  CglModel& operator=(const CglModel&) = delete;
  CglModel(CglModel&&) = default;
  CglModel& operator=(CglModel&&) = default;

  const EncoderConfig& config() const { return config_; }

  /// Selects batch statistics (true) or running statistics (false) for BN.
  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  /// In training mode, whether batch norm folds batch statistics into its
  /// running statistics (default true).
  void set_update_running_stats(bool update) { update_running_stats_ = update; }

  Tensor<Real> encode(const Tensor<Real>& image);
  /// Returns (F1_DFLB, y_hat_DFLB).
  std::pair<Tensor<Real>, Tensor<Real>> dflb_forward(const Tensor<Real>& encoded);
  /// y_hat_CGL = cglsb.head(F1_DFLB o F1_CGL).
  Tensor<Real> cglsb_forward(const Tensor<Real>& encoded, const Tensor<Real>& dflb_features);

  /// Both decoders, all intermediates.
  TrainOutputs<Real> forward_train(const Tensor<Real>& image);
  /// CGL logits only; takes an image and nothing else.
  Tensor<Real> infer(const Tensor<Real>& image);

  Encoder<Real>& encoder() { return encoder_; }
  DecoderBlock<Real>& dflb() { return dflb_; }
  DecoderBlock<Real>& cglsb() { return cglsb_; }

  /// Trainable tensors with stable dotted names, in a fixed order.
  std::vector<NamedTensor<Real>> named_parameters();
  std::vector<Tensor<Real>> parameters();
  /// Batch-norm running statistics (copies).
  std::vector<NamedTensor<Real>> named_buffers() const;
  /// Sets a parameter or buffer by name; throws std::invalid_argument if the
  /// name is unknown or the size differs.
  void load_tensor(const std::string& name, std::span<const Real> values);

  std::size_t parameter_count();

 private:
  NormMode norm_mode() const {
    if (!training_) return NormMode::running_statistics;
    return update_running_stats_ ? NormMode::batch_statistics : NormMode::batch_frozen;
  }

  EncoderConfig config_;
  Encoder<Real> encoder_;
  DecoderBlock<Real> dflb_;
  DecoderBlock<Real> cglsb_;
  bool training_ = true;
  bool update_running_stats_ = true;
};

/// Per-pixel argmax over the class axis of [N x] 2 x h x w logits; class 1
/// wins only if strictly larger. One mask per batch item.
template <typename Real>
std::vector<LabelMask> argmax_masks(const Tensor<Real>& logits);

/// Converts an RGB image to a 3 x H x W tensor scaled to [0, 1].
template <typename Real>
Tensor<Real> image_to_tensor(const RgbImage& image);

}  // namespace cgl
