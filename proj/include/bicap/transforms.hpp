#pragma once

// Neuromimetic image views: foveated blur, additive sensor noise,
// low-resolution (bilinear) and mosaic (nearest) resampling.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "bicap/core/error.hpp"
#include "bicap/core/random.hpp"
#include "bicap/image.hpp"

namespace bicap {

struct PixelCoord {
  double row = 0.0;
  double col = 0.0;
};

/// Geometric center of an H x W grid in pixel-index coordinates.
inline PixelCoord image_center(std::size_t height, std::size_t width) {
  return {(static_cast<double>(height) - 1.0) / 2.0, (static_cast<double>(width) - 1.0) / 2.0};
}

struct FoveationParams {
  std::optional<PixelCoord> center;  // defaults to the geometric image center
  double gamma = 1.0;
  int kernel_size = 75;
  int perturbation = 6;

  PixelCoord resolve_center(std::size_t height, std::size_t width) const {
    return center.value_or(image_center(height, width));
  }

  void validate(std::size_t height, std::size_t width) const {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("foveation gamma must be > 0");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel size must be odd and >= 1");
    if (perturbation < 2 || perturbation % 2 != 0) throw ConfigError("perturbation must be even and >= 2");
    const auto c = resolve_center(height, width);
    if (c.row < 0.0 || c.col < 0.0 || c.row > static_cast<double>(height) - 1.0 ||
        c.col > static_cast<double>(width) - 1.0)
      throw ConfigError("foveation center lies outside the image");
  }
};

/// Exact rational scale factor; target extent is floor(n * num / den).
struct Scale {
  int num = 1;
  int den = 1;

  std::size_t apply(std::size_t extent) const {
    return extent * static_cast<std::size_t>(num) / static_cast<std::size_t>(den);
  }
  double value() const { return static_cast<double>(num) / den; }
  friend bool operator==(const Scale&, const Scale&) = default;
};

struct ViewParams {
  double noise_sigma = 10.0;  // on the 0-255 scale
  Scale scale_low{1, 2};
  Scale scale_mosaic{1, 16};
  std::uint64_t noise_seed = 0;

  void validate(std::size_t height, std::size_t width) const {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise sigma must be >= 0");
    for (const Scale& s : {scale_low, scale_mosaic}) {
      if (s.num < 1 || s.den < 1 || s.num > s.den) throw ConfigError("scales must lie in (0, 1]");
      if (s.apply(height) < 1 || s.apply(width) < 1)
        throw ConfigError("scale produces an image smaller than one pixel");
    }
  }
};

struct FoveationMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
};

/// M(i,j) = exp(-gamma * d(i,j) / D), D the largest center-to-pixel distance.
/// A 1x1 grid (D = 0) yields the all-ones mask.
inline FoveationMask foveation_mask(std::size_t height, std::size_t width, PixelCoord center, double gamma) {
  expects(height >= 1 && width >= 1, "mask needs a non-empty grid");
  expects(gamma > 0.0, "gamma must be positive");
  FoveationMask mask{height, width, std::vector<double>(height * width, 1.0)};
  double max_dist = 0.0;
  for (double r : {0.0, static_cast<double>(height) - 1.0})
    for (double c : {0.0, static_cast<double>(width) - 1.0})
      max_dist = std::max(max_dist, std::hypot(r - center.row, c - center.col));
  if (max_dist == 0.0) return mask;
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const double d = std::hypot(static_cast<double>(r) - center.row, static_cast<double>(c) - center.col);
      mask.values[r * width + c] = std::exp(-gamma * d / max_dist);
    }
  return mask;
}

/// Gaussian width used for a kernel of size k: 0.3 * ((k - 1) / 2 - 1) + 0.8.
inline double blur_sigma(int kernel_size) { return 0.3 * ((kernel_size - 1) * 0.5 - 1.0) + 0.8; }

/// Normalized 1-D Gaussian taps, length kernel_size.
inline std::vector<double> gaussian_kernel(int kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ContractViolation("kernel size must be odd and >= 1");
  std::vector<double> taps(static_cast<std::size_t>(kernel_size));
  if (kernel_size == 1) {
    taps[0] = 1.0;
    return taps;
  }
  const int radius = kernel_size / 2;
  const double sigma = blur_sigma(kernel_size);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-(i * i) / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& w : taps) w /= sum;
  return taps;
}

/// Half-sample symmetric reflection (... c b a | a b c ... c | c b a ...),
/// periodic with period 2n so any offset is valid.
inline std::size_t reflect_index(long i, std::size_t n) {
  const long period = 2 * static_cast<long>(n);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - 1 - m);
}

/// Separable Gaussian blur with reflect padding.
inline Image gaussian_blur(const Image& image, int kernel_size) {
  const auto taps = gaussian_kernel(kernel_size);
  if (kernel_size == 1) return image;
  const long radius = kernel_size / 2;
  const std::size_t h = image.height(), w = image.width();
  Image out(image.channels(), h, w);
  std::vector<double> tmp(h * w);
  for (std::size_t c = 0; c < image.channels(); ++c) {
    auto src = image.plane(c);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long t = -radius; t <= radius; ++t)
          acc += taps[static_cast<std::size_t>(t + radius)] * src[r * w + reflect_index(static_cast<long>(x) + t, w)];
        tmp[r * w + x] = acc;
      }
    auto dst = out.plane(c);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long t = -radius; t <= radius; ++t)
          acc += taps[static_cast<std::size_t>(t + radius)] * tmp[reflect_index(static_cast<long>(r) + t, h) * w + x];
        dst[r * w + x] = acc;
      }
  }
  return out;
}

/// I_fov = M * I + (1 - M) * blur_k(I), mask broadcast over channels.
inline Image foveate(const Image& image, const FoveationParams& params) {
  params.validate(image.height(), image.width());
  const auto mask = foveation_mask(image.height(), image.width(),
                                   params.resolve_center(image.height(), image.width()), params.gamma);
  const Image blurred = gaussian_blur(image, params.kernel_size);
  Image out(image.channels(), image.height(), image.width());
  for (std::size_t c = 0; c < image.channels(); ++c) {
    auto src = image.plane(c);
    auto blr = blurred.plane(c);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const double m = mask.values[i];
      // Where blurring changed nothing the blend is the identity; keep it exact.
      dst[i] = blr[i] == src[i] ? src[i] : m * src[i] + (1.0 - m) * blr[i];
    }
  }
  out.clamp();
  return out;
}

/// Adds N(0, sigma^2) on the 0-255 scale, drawn from Rng(seed), then clamps.
inline Image add_noise(const Image& image, double sigma, std::uint64_t seed) {
  expects(sigma >= 0.0, "noise sigma must be non-negative");
  if (sigma == 0.0) return image;
  Image out = image;
  Rng rng(seed);
  const double scale = sigma / 255.0;
  for (double& v : out.flat()) v += scale * rng.normal();
  out.clamp();
  return out;
}

enum class Interpolation { bilinear, nearest };

/// Resize with half-pixel centers: output pixel i samples source coordinate
/// (i + 0.5) * in / out - 0.5. Nearest takes floor((2i + 1) * in / (2 out)).
inline Image resize(const Image& image, std::size_t out_h, std::size_t out_w, Interpolation mode) {
  expects(out_h >= 1 && out_w >= 1, "resize target must be at least 1x1");
  const std::size_t in_h = image.height(), in_w = image.width();
  if (out_h == in_h && out_w == in_w) return image;
  Image out(image.channels(), out_h, out_w);

  if (mode == Interpolation::nearest) {
    auto pick = [](std::size_t i, std::size_t in, std::size_t out_n) {
      return std::min(in - 1, (2 * i + 1) * in / (2 * out_n));
    };
    for (std::size_t c = 0; c < image.channels(); ++c)
      for (std::size_t r = 0; r < out_h; ++r)
        for (std::size_t x = 0; x < out_w; ++x) out.at(c, r, x) = image.at(c, pick(r, in_h, out_h), pick(x, in_w, out_w));
    return out;
  }

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t out_n, std::size_t in) {
    std::vector<Tap> t(out_n);
    const double ratio = static_cast<double>(in) / static_cast<double>(out_n);
    for (std::size_t i = 0; i < out_n; ++i) {
      double s = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(s));
      t[i] = {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(out_h, in_h);
  const auto tx = taps(out_w, in_w);
  for (std::size_t c = 0; c < image.channels(); ++c)
    for (std::size_t r = 0; r < out_h; ++r)
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& [y0, y1, fy] = ty[r];
        const auto& [x0, x1, fx] = tx[x];
        const double top = (1.0 - fx) * image.at(c, y0, x0) + fx * image.at(c, y0, x1);
        const double bottom = (1.0 - fx) * image.at(c, y1, x0) + fx * image.at(c, y1, x1);
        out.at(c, r, x) = (1.0 - fy) * top + fy * bottom;
      }
  return out;
}

/// Downsamples by `scale`; with `restore` the result is resized back to the
/// original extent using the same interpolation.
inline Image resample(const Image& image, Scale scale, Interpolation mode, bool restore) {
  const std::size_t h = scale.apply(image.height()), w = scale.apply(image.width());
  if (h < 1 || w < 1) throw ContractViolation("resample scale produces an empty image");
  Image small = resize(image, h, w, mode);
  if (!restore) return small;
  return resize(small, image.height(), image.width(), mode);
}

enum class ViewKind : int { foveated = 0, noisy = 1, low_resolution = 2, mosaic = 3 };

inline constexpr std::array<ViewKind, 4> kAllViews{ViewKind::foveated, ViewKind::noisy, ViewKind::low_resolution,
                                                   ViewKind::mosaic};

inline constexpr std::string_view view_name(ViewKind kind) {
  switch (kind) {
    case ViewKind::foveated: return "foveation";
    case ViewKind::noisy: return "noise";
    case ViewKind::low_resolution: return "low_res";
    case ViewKind::mosaic: return "mosaic";
  }
  return "?";
}

/// Builds a single view. Only the foveated view depends on the kernel size and
/// only the noisy view on the seed.
inline Image build_view(const Image& image, ViewKind kind, const FoveationParams& fov, const ViewParams& vp) {
  switch (kind) {
    case ViewKind::foveated: return foveate(image, fov);
    case ViewKind::noisy: return add_noise(image, vp.noise_sigma, vp.noise_seed);
    case ViewKind::low_resolution: return resample(image, vp.scale_low, Interpolation::bilinear, true);
    case ViewKind::mosaic: return resample(image, vp.scale_mosaic, Interpolation::nearest, true);
  }
  throw ContractViolation("unknown view kind");
}

/// The four views in fixed order (foveated, noisy, low-resolution, mosaic), all H x W.
inline std::array<Image, 4> build_view_stack(const Image& image, const FoveationParams& fov, const ViewParams& vp) {
  fov.validate(image.height(), image.width());
  vp.validate(image.height(), image.width());
  return {build_view(image, ViewKind::foveated, fov, vp), build_view(image, ViewKind::noisy, fov, vp),
          build_view(image, ViewKind::low_resolution, fov, vp), build_view(image, ViewKind::mosaic, fov, vp)};
}

}  // namespace bicap
