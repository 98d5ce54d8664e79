#include "cgl/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstdlib>
#include <memory>
#include <mutex>

namespace cgl {
namespace io {
namespace {

void audit(const std::filesystem::path& path) {
  static std::mutex mu;
  const char* log = std::getenv("CGL_IO_AUDIT");
  if (!log || !*log) return;
  std::lock_guard<std::mutex> lock(mu);
  std::ofstream out(log, std::ios::app);
  out << std::filesystem::absolute(path).lexically_normal().string() << '\n';
}

}  // namespace

std::ifstream open_for_read(const std::filesystem::path& path) {
  audit(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  auto in = open_for_read(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace io

namespace {

// libpng reports errors through longjmp; route them into exceptions by
// decoding from memory inside a single setjmp frame.
struct PngReadResult {
  std::size_t height = 0, width = 0;
  int bit_depth = 0, channels = 0;
  std::vector<std::uint8_t> rows;  // packed rows, rowbytes each
  std::size_t rowbytes = 0;
};

struct MemorySource {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t offset;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t count) {
  auto* src = static_cast<MemorySource*>(png_get_io_ptr(png));
  if (src->offset + count > src->size) png_error(png, "truncated PNG data");
  std::copy_n(src->data + src->offset, count, out);
  src->offset += count;
}

// Decodes to 8-bit RGB or 16-bit gray depending on `want_gray16`.
PngReadResult decode_png(const std::filesystem::path& path, bool want_gray16) {
  const auto bytes = io::read_file(path);
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw IoError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  PngReadResult result;
  std::vector<png_bytep> row_ptrs;
  MemorySource src{bytes.data(), bytes.size(), 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG " + path.string());
  }
  png_set_read_fn(png, &src, read_from_memory);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (want_gray16) {
    if (color != PNG_COLOR_TYPE_GRAY || depth != 16) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw IoError(path.string() + " is not a 16-bit grayscale PNG");
    }
    png_set_swap(png);  // host little-endian samples
  } else {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (depth == 16) png_set_strip_16(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_gray_to_rgb(png);
    }
  }
  png_read_update_info(png, info);
  result.height = png_get_image_height(png, info);
  result.width = png_get_image_width(png, info);
  result.rowbytes = png_get_rowbytes(png, info);
  result.channels = png_get_channels(png, info);
  result.bit_depth = png_get_bit_depth(png, info);
  result.rows.resize(result.rowbytes * result.height);
  row_ptrs.resize(result.height);
  for (std::size_t y = 0; y < result.height; ++y) row_ptrs[y] = &result.rows[y * result.rowbytes];
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return result;
}

void encode_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
                int bit_depth, int color_type, const std::vector<std::vector<std::uint8_t>>& rows,
                bool swap16) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    std::fclose(fp);
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("failed to encode PNG " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (swap16) png_set_swap(png);
  for (const auto& row : rows) png_write_row(png, const_cast<png_bytep>(row.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace

RgbImage read_png_rgb(const std::filesystem::path& path) {
  const auto raw = decode_png(path, false);
  if (raw.channels != 3 || raw.bit_depth != 8) {
    throw IoError("unexpected PNG layout after conversion in " + path.string());
  }
  RgbImage img(raw.height, raw.width);
  for (std::size_t y = 0; y < raw.height; ++y) {
    std::copy_n(&raw.rows[y * raw.rowbytes], raw.width * 3, img.pixels.data() + y * raw.width * 3);
  }
  return img;
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
  std::vector<std::vector<std::uint8_t>> rows(image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    rows[y].assign(image.pixels.begin() + y * image.width * 3,
                   image.pixels.begin() + (y + 1) * image.width * 3);
  }
  encode_png(path, image.height, image.width, 8, PNG_COLOR_TYPE_RGB, rows, false);
}

void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::vector<std::uint8_t>> rows(mask.height);
  for (std::size_t y = 0; y < mask.height; ++y) {
    rows[y].assign((mask.width + 7) / 8, 0);
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (mask.at(y, x)) rows[y][x / 8] |= static_cast<std::uint8_t>(0x80u >> (x % 8));
    }
  }
  encode_png(path, mask.height, mask.width, 1, PNG_COLOR_TYPE_GRAY, rows, false);
}

BinaryMask read_png_mask(const std::filesystem::path& path) {
  const auto img = read_png_rgb(path);
  BinaryMask mask(img.height, img.width);
  for (std::size_t i = 0; i < mask.values.size(); ++i) mask.values[i] = img.pixels[i * 3] >= 128;
  return mask;
}

std::vector<std::uint16_t> read_png_gray16(const std::filesystem::path& path, std::size_t& height,
                                           std::size_t& width) {
  const auto raw = decode_png(path, true);
  height = raw.height;
  width = raw.width;
  std::vector<std::uint16_t> out(height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::uint8_t* p = &raw.rows[y * raw.rowbytes + 2 * x];
      out[y * width + x] = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
  return out;
}

void write_png_gray16(const std::filesystem::path& path, const std::vector<std::uint16_t>& values,
                      std::size_t height, std::size_t width) {
  if (values.size() != height * width) throw IoError("gray16 buffer size mismatch");
  std::vector<std::vector<std::uint8_t>> rows(height);
  for (std::size_t y = 0; y < height; ++y) {
    rows[y].resize(width * 2);
    for (std::size_t x = 0; x < width; ++x) {
      const std::uint16_t v = values[y * width + x];
      rows[y][2 * x] = static_cast<std::uint8_t>(v & 0xff);
      rows[y][2 * x + 1] = static_cast<std::uint8_t>(v >> 8);
    }
  }
  encode_png(path, height, width, 16, PNG_COLOR_TYPE_GRAY, rows, true);
}

}  // namespace cgl
