#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "bicap/core/error.hpp"
#include "bicap/core/matrix.hpp"
#include "bicap/core/random.hpp"
#include "bicap/image.hpp"

namespace bicap {

/// V x d_v matrix, one row of visual features per view.
using ViewFeatureSet = Matrix<double>;

/// Desk-scale stand-in for a pretrained image encoder: adaptive average
/// pooling to a grid x grid x C patch vector, a fixed Gaussian random
/// projection to `dim`, then L2 normalization.
class SyntheticEncoder {
 public:
  SyntheticEncoder(std::size_t channels, std::size_t dim, std::uint64_t seed, std::size_t grid = 16)
      : channels_(channels), grid_(grid), projection_(dim, channels * grid * grid) {
    if (dim < 2) throw ConfigError("encoder dim must be >= 2");
    if (channels < 1 || grid < 1) throw ConfigError("encoder needs channels >= 1 and grid >= 1");
    Rng rng(derive_seed({seed, 0x656e636fULL}));
    const double scale = 1.0 / std::sqrt(static_cast<double>(projection_.cols()));
    for (double& w : projection_.flat()) w = scale * rng.normal();
  }

  std::size_t dim() const noexcept { return projection_.rows(); }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t grid() const noexcept { return grid_; }
  const Matrix<double>& projection() const noexcept { return projection_; }

  /// Adaptive average pooling; cell i spans [floor(i n / g), ceil((i + 1) n / g)).
  std::vector<double> pool(const Image& image) const {
    if (image.channels() != channels_) throw ContractViolation("encoder channel count mismatch");
    const std::size_t h = image.height(), w = image.width();
    std::vector<double> out(projection_.cols());
    std::size_t k = 0;
    for (std::size_t c = 0; c < channels_; ++c)
      for (std::size_t gy = 0; gy < grid_; ++gy) {
        const std::size_t y0 = gy * h / grid_, y1 = ((gy + 1) * h + grid_ - 1) / grid_;
        for (std::size_t gx = 0; gx < grid_; ++gx, ++k) {
          const std::size_t x0 = gx * w / grid_, x1 = ((gx + 1) * w + grid_ - 1) / grid_;
          double acc = 0.0;
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) acc += image.at(c, y, x);
          out[k] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
        }
      }
    return out;
  }

  std::vector<double> encode(const Image& image) const {
    const auto pooled = pool(image);
    std::vector<double> feat(dim());
    for (std::size_t r = 0; r < dim(); ++r) feat[r] = dot<double>(projection_.row(r), pooled);
    double norm = 0.0;
    for (double v : feat) norm += v * v;
    norm = std::max(std::sqrt(norm), 1e-12);
    for (double& v : feat) v /= norm;
    return feat;
  }

  ViewFeatureSet encode(std::span<const Image> views) const {
    ViewFeatureSet out(views.size(), dim());
    for (std::size_t v = 0; v < views.size(); ++v) {
      const auto f = encode(views[v]);
      std::copy(f.begin(), f.end(), out.row(v).begin());
    }
    return out;
  }

 private:
  std::size_t channels_;
  std::size_t grid_;
  Matrix<double> projection_;
};

/// synthetic_encode(views, dim, seed) as a free function.
inline ViewFeatureSet synthetic_encode(std::span<const Image> views, std::size_t dim, std::uint64_t seed) {
  expects(!views.empty(), "need at least one view");
  return SyntheticEncoder(views.front().channels(), dim, seed).encode(views);
}

}  // namespace bicap
