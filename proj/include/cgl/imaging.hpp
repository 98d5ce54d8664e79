#pragma once

// Pseudo ground truth (PGT) from depth: smooth, Sobel, squash, threshold,
// reduce to quarter resolution, OR with the annotated mask.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace cgl {

/// Binary H x W map, values 0 or 1, row-major.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), values(h * w, fill) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  std::size_t count_ones() const;
  bool operator==(const BinaryMask&) const = default;
};

/// Quarter-resolution training target (y_CGL, y_DFLB).
using LabelMask = BinaryMask;

/// Real-valued H x W map, row-major.
struct RealMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  RealMap() = default;
  RealMap(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), values(h * w, fill) {}
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
};

/// Scene distance per pixel: finite, non-negative, arbitrary units.
struct DepthMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  DepthMap() = default;
  DepthMap(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), values(h * w, fill) {}
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }

  /// Throws std::invalid_argument on NaN/Inf/negative values or bad size.
  void validate() const;
};

enum class ResponseMode {
  magnitude_both_axes,    // sqrt((G*s)^2 + (G^T*s)^2)
  signed_horizontal_only  // G*s
};

struct PgtConfig {
  int smoothing_kernel_size = 11;
  double threshold = 0.55;
  ResponseMode response_mode = ResponseMode::magnitude_both_axes;

  void validate() const;
  /// Stable textual form, used as part of cache keys.
  std::string key() const;
};

std::string to_string(ResponseMode mode);
ResponseMode parse_response_mode(const std::string& text);

/// Horizontal Sobel kernel G (row-major 3x3).
inline constexpr double kSobel[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};

/// Per-image min-max normalisation to [0, 1]; a constant map becomes all 0.
DepthMap normalize_depth(const DepthMap& depth);

/// 2-D cross-correlation with replicate borders ("same" output size).
/// `kernel` is k_h x k_w row-major with odd extents.
RealMap filter_replicate(const RealMap& input, const std::vector<double>& kernel, std::size_t kh,
                         std::size_t kw);

/// g in (0, 1): sigmoid of the Sobel response of the smoothed, normalised depth.
RealMap cgl_pattern_response(const DepthMap& depth, const PgtConfig& cfg);

/// 1 where g >= threshold. Threshold must lie strictly inside (0, 1).
BinaryMask binarize(const RealMap& g, double threshold);

/// A cell of the reduced mask is 1 if any pixel of its factor x factor block is 1.
/// Dimensions must be divisible by `factor`.
BinaryMask downsample_any(const BinaryMask& full, std::size_t factor = 4);

/// Element-wise OR; dimensions must match.
LabelMask fuse_with_gt(const BinaryMask& pattern, const LabelMask& y_cgl);

/// Full pipeline: response -> binarize (full resolution) -> 4x4 any-reduce ->
/// OR with y_cgl. `depth` is H x W, `y_cgl` H/4 x W/4.
LabelMask generate_pgt(const DepthMap& depth, const LabelMask& y_cgl, const PgtConfig& cfg);

// Depth raster I/O. Canonical format: "CGLD", u32 LE height, u32 LE width,
// then height*width f32 LE values, row-major.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_depth_raster(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth_raster(const std::filesystem::path& path);
/// 16-bit grayscale PNG, min-max normalised to [0, 1] on load.
DepthMap read_depth_png16(const std::filesystem::path& path);
/// Dispatches on extension: ".png" -> 16-bit PNG, anything else -> CGLD raster.
DepthMap read_depth(const std::filesystem::path& path);

}  // namespace cgl
