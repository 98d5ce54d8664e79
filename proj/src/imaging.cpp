#include "cgl/imaging.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "cgl/image_io.hpp"

namespace cgl {

std::size_t BinaryMask::count_ones() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

void DepthMap::validate() const {
  if (values.size() != height * width) throw std::invalid_argument("depth map size mismatch");
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("depth map contains a non-finite value");
    if (v < 0.0) throw std::invalid_argument("depth map contains a negative value");
  }
}

void PgtConfig::validate() const {
  if (smoothing_kernel_size < 1 || smoothing_kernel_size % 2 == 0) {
    throw std::invalid_argument("smoothing kernel size must be a positive odd integer, got " +
                                std::to_string(smoothing_kernel_size));
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("PGT threshold must lie strictly between 0 and 1");
  }
}

std::string PgtConfig::key() const {
  std::ostringstream os;
  os.precision(17);
  os << "k=" << smoothing_kernel_size << ";th=" << threshold << ";mode=" << to_string(response_mode);
  return os.str();
}

std::string to_string(ResponseMode mode) {
  return mode == ResponseMode::magnitude_both_axes ? "magnitude" : "signed_horizontal";
}

ResponseMode parse_response_mode(const std::string& text) {
  if (text == "magnitude" || text == "magnitude_both_axes") return ResponseMode::magnitude_both_axes;
  if (text == "signed_horizontal" || text == "signed_horizontal_only") {
    return ResponseMode::signed_horizontal_only;
  }
  throw std::invalid_argument("unknown response mode '" + text + "'");
}

DepthMap normalize_depth(const DepthMap& depth) {
  DepthMap out(depth.height, depth.width, 0.0);
  if (depth.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(depth.values.begin(), depth.values.end());
  const double range = *hi - *lo;
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = (depth.values[i] - *lo) / range;
  }
  return out;
}

RealMap filter_replicate(const RealMap& input, const std::vector<double>& kernel, std::size_t kh,
                         std::size_t kw) {
  if (kh % 2 == 0 || kw % 2 == 0 || kernel.size() != kh * kw) {
    throw std::invalid_argument("filter kernel must have odd extents matching its size");
  }
  const auto h = static_cast<std::ptrdiff_t>(input.height);
  const auto w = static_cast<std::ptrdiff_t>(input.width);
  const auto rh = static_cast<std::ptrdiff_t>(kh / 2);
  const auto rw = static_cast<std::ptrdiff_t>(kw / 2);
  RealMap out(input.height, input.width);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(kh); ++i) {
        const std::ptrdiff_t yy = std::clamp<std::ptrdiff_t>(y + i - rh, 0, h - 1);
        for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(kw); ++j) {
          const std::ptrdiff_t xx = std::clamp<std::ptrdiff_t>(x + j - rw, 0, w - 1);
          acc += kernel[i * kw + j] * input.values[yy * w + xx];
        }
      }
      out.values[y * w + x] = acc;
    }
  }
  return out;
}

RealMap cgl_pattern_response(const DepthMap& depth, const PgtConfig& cfg) {
  cfg.validate();
  depth.validate();
  const DepthMap normalized = normalize_depth(depth);
  RealMap base(depth.height, depth.width);
  base.values = normalized.values;

  const auto k = static_cast<std::size_t>(cfg.smoothing_kernel_size);
  const std::vector<double> box(k * k, 1.0 / static_cast<double>(k * k));
  const RealMap smoothed = filter_replicate(base, box, k, k);

  std::vector<double> gx_kernel(9), gy_kernel(9);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      gx_kernel[i * 3 + j] = kSobel[i][j];
      gy_kernel[i * 3 + j] = kSobel[j][i];
    }
  const RealMap gx = filter_replicate(smoothed, gx_kernel, 3, 3);

  RealMap g(depth.height, depth.width);
  if (cfg.response_mode == ResponseMode::magnitude_both_axes) {
    const RealMap gy = filter_replicate(smoothed, gy_kernel, 3, 3);
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      const double r = std::sqrt(gx.values[i] * gx.values[i] + gy.values[i] * gy.values[i]);
      g.values[i] = 1.0 / (1.0 + std::exp(-r));
    }
  } else {
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      g.values[i] = 1.0 / (1.0 + std::exp(-gx.values[i]));
    }
  }
  return g;
}

BinaryMask binarize(const RealMap& g, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("threshold must lie strictly between 0 and 1");
  }
  BinaryMask b(g.height, g.width);
  for (std::size_t i = 0; i < b.values.size(); ++i) b.values[i] = g.values[i] >= threshold ? 1 : 0;
  return b;
}

BinaryMask downsample_any(const BinaryMask& full, std::size_t factor) {
  if (factor == 0 || full.height % factor != 0 || full.width % factor != 0) {
    throw std::invalid_argument("mask dimensions " + std::to_string(full.height) + "x" +
                                std::to_string(full.width) + " not divisible by " +
                                std::to_string(factor));
  }
  BinaryMask out(full.height / factor, full.width / factor);
  for (std::size_t y = 0; y < full.height; ++y)
    for (std::size_t x = 0; x < full.width; ++x)
      if (full.at(y, x)) out.at(y / factor, x / factor) = 1;
  return out;
}

LabelMask fuse_with_gt(const BinaryMask& pattern, const LabelMask& y_cgl) {
  if (pattern.height != y_cgl.height || pattern.width != y_cgl.width) {
    throw std::invalid_argument("PGT pattern and annotation masks differ in size");
  }
  LabelMask out(pattern.height, pattern.width);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = (pattern.values[i] | y_cgl.values[i]) ? 1 : 0;
  }
  return out;
}

LabelMask generate_pgt(const DepthMap& depth, const LabelMask& y_cgl, const PgtConfig& cfg) {
  if (depth.height % 4 != 0 || depth.width % 4 != 0 || y_cgl.height * 4 != depth.height ||
      y_cgl.width * 4 != depth.width) {
    throw std::invalid_argument("generate_pgt: annotation mask must be a quarter of the depth map");
  }
  const RealMap g = cgl_pattern_response(depth, cfg);
  return fuse_with_gt(downsample_any(binarize(g, cfg.threshold), 4), y_cgl);
}

// ---------------------------------------------------------------------------
// depth raster I/O

namespace {

constexpr char kDepthMagic[4] = {'C', 'G', 'L', 'D'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& buf, std::size_t off) {
  return static_cast<std::uint32_t>(buf[off]) | (static_cast<std::uint32_t>(buf[off + 1]) << 8) |
         (static_cast<std::uint32_t>(buf[off + 2]) << 16) |
         (static_cast<std::uint32_t>(buf[off + 3]) << 24);
}

}  // namespace

void write_depth_raster(const std::filesystem::path& path, const DepthMap& depth) {
  depth.validate();
  auto out = io::open_for_write(path);
  out.write(kDepthMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(depth.height));
  put_u32(out, static_cast<std::uint32_t>(depth.width));
  for (double v : depth.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw IoError("failed writing " + path.string());
}

DepthMap read_depth_raster(const std::filesystem::path& path) {
  const auto buf = io::read_file(path);
  if (buf.size() < 12 || std::memcmp(buf.data(), kDepthMagic, 4) != 0) {
    throw FormatError(path.string() + ": missing CGLD header");
  }
  const std::size_t h = get_u32(buf, 4);
  const std::size_t w = get_u32(buf, 8);
  if (buf.size() != 12 + 4 * h * w) {
    throw FormatError(path.string() + ": expected " + std::to_string(12 + 4 * h * w) +
                      " bytes, found " + std::to_string(buf.size()));
  }
  DepthMap depth(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    depth.values[i] = std::bit_cast<float>(get_u32(buf, 12 + 4 * i));
  }
  try {
    depth.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return depth;
}

DepthMap read_depth_png16(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto raw = read_png_gray16(path, h, w);
  DepthMap depth(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i) depth.values[i] = raw[i];
  return normalize_depth(depth);
}

DepthMap read_depth(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" ? read_depth_png16(path) : read_depth_raster(path);
}

}  // namespace cgl
