#pragma once

// PNG and raw-file access. Every file this library reads goes through
// `io::open_for_read`, which also appends the path to the audit log named by
// the CGL_IO_AUDIT environment variable (if set).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "cgl/imaging.hpp"

namespace cgl {

/// 8-bit RGB, interleaved, row-major.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0) {}
  std::uint8_t* at(std::size_t y, std::size_t x) { return &pixels[(y * width + x) * 3]; }
  const std::uint8_t* at(std::size_t y, std::size_t x) const {
    return &pixels[(y * width + x) * 3];
  }
  bool operator==(const RgbImage&) const = default;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

/// Opens a binary input stream or throws IoError naming the path.
std::ifstream open_for_read(const std::filesystem::path& path);
std::ofstream open_for_write(const std::filesystem::path& path);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace io

/// Any 8/16-bit gray, gray+alpha, RGB, RGBA or palette PNG, converted to RGB8.
RgbImage read_png_rgb(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

/// 1-bit grayscale PNG (0 -> black, 1 -> white).
void write_png_mask(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_png_mask(const std::filesystem::path& path);

/// 16-bit grayscale, raw sample values.
std::vector<std::uint16_t> read_png_gray16(const std::filesystem::path& path, std::size_t& height,
                                           std::size_t& width);
void write_png_gray16(const std::filesystem::path& path, const std::vector<std::uint16_t>& values,
                      std::size_t height, std::size_t width);

}  // namespace cgl
