#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bicap/core/binary_io.hpp"
#include "bicap/core/error.hpp"

namespace bicap {

/// Channel-major pixel grid with values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width), data_(channels * height * width, fill) {
    if (channels == 0 || height == 0 || width == 0) throw ContractViolation("image dimensions must be >= 1");
  }

  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t plane_size() const noexcept { return height_ * width_; }

  double& at(std::size_t c, std::size_t r, std::size_t col) { return data_[(c * height_ + r) * width_ + col]; }
  double at(std::size_t c, std::size_t r, std::size_t col) const { return data_[(c * height_ + r) * width_ + col]; }

  std::span<double> plane(std::size_t c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(std::size_t c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  bool same_shape(const Image& o) const noexcept {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

  void clamp() {
    for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline std::size_t ppm_token(io::Reader& in, std::string& scratch) {
  scratch.clear();
  for (;;) {
    char ch = in.take(1, "pixmap header")[0];
    if (ch == '#') {
      while (in.take(1, "pixmap comment")[0] != '\n') {
      }
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!scratch.empty()) break;
      continue;
    }
    if (!std::isdigit(static_cast<unsigned char>(ch))) throw FormatError("non-numeric pixmap header field");
    scratch.push_back(ch);
    if (scratch.size() > 9) throw FormatError("pixmap header field too long");
  }
  return std::stoul(scratch);
}

}  // namespace detail

/// Decodes a binary P6 pixmap with maxval 255 into a 3-channel image.
inline Image decode_ppm(std::string_view bytes) {
  io::Reader in(bytes);
  if (in.take(2, "pixmap magic") != "P6") throw FormatError("not a binary P6 pixmap");
  std::string scratch;
  const std::size_t width = detail::ppm_token(in, scratch);
  const std::size_t height = detail::ppm_token(in, scratch);
  const std::size_t maxval = detail::ppm_token(in, scratch);
  if (width == 0 || height == 0) throw FormatError("pixmap has zero extent");
  if (maxval != 255) throw FormatError("only 8-bit pixmaps (maxval 255) are supported");
  auto pixels = in.take(width * height * 3, "pixmap raster");
  Image img(3, height, width);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t col = 0; col < width; ++col)
      for (std::size_t c = 0; c < 3; ++c)
        img.at(c, r, col) = static_cast<unsigned char>(pixels[(r * width + col) * 3 + c]) / 255.0;
  return img;
}

/// Encodes to P6. Single-channel images are replicated to gray RGB.
inline std::string encode_ppm(const Image& img) {
  if (img.channels() != 1 && img.channels() != 3)
    throw ContractViolation("pixmap output needs 1 or 3 channels");
  std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + img.plane_size() * 3);
  for (std::size_t r = 0; r < img.height(); ++r)
    for (std::size_t col = 0; col < img.width(); ++col)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = img.at(img.channels() == 1 ? 0 : c, r, col);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
      }
  return out;
}

inline Image read_ppm(const std::string& path) { return decode_ppm(io::read_file(path)); }
inline void write_ppm(const std::string& path, const Image& img) { io::write_file(path, encode_ppm(img)); }

}  // namespace bicap
