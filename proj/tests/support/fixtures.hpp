#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <vector>

#include "bicap/alignment.hpp"
#include "bicap/config.hpp"
#include "bicap/dataset.hpp"
#include "bicap/core/random.hpp"
#include "bicap/image.hpp"

namespace bicap::testing {

inline Image random_image(std::size_t channels, std::size_t h, std::size_t w, Rng& rng) {
  Image img(channels, h, w);
  for (double& v : img.flat()) v = rng.uniform01();
  return img;
}

inline Matrix<double> random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix<double> m(rows, cols);
  for (double& v : m.flat()) v = scale * rng.normal();
  return m;
}

/// Dense 2-D convolution with an explicit outer-product kernel and the same
/// half-sample reflection, written without any separable shortcut.
inline Image dense_blur_oracle(const Image& img, const std::vector<double>& k1d) {
  const long r = static_cast<long>(k1d.size() / 2);
  const long h = static_cast<long>(img.height()), w = static_cast<long>(img.width());
  auto reflect = [](long i, long n) {
    const long period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
  };
  Image out(img.channels(), img.height(), img.width());
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx)
            acc += k1d[dy + r] * k1d[dx + r] *
                   img.at(c, static_cast<std::size_t>(reflect(y + dy, h)), static_cast<std::size_t>(reflect(x + dx, w)));
        out.at(c, y, x) = acc;
      }
  return out;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

/// Central differences of the full fusion + contrastive loss against the
/// analytic gradient, over every trainable entry. The relative error uses
/// max(|analytic|, |numeric|, floor) as denominator.
inline GradCheckResult gradient_check(std::uint64_t seed, bool evidence = true, bool softplus_only = false,
                                      std::size_t latent = 8, double step = 1e-5, double floor = 1e-6) {
  constexpr std::size_t B = 4, V = 4, D = 8, N = 8;
  FusionConfig fc;
  fc.views = V;
  fc.feature_dim = D;
  fc.latent_dim = latent;
  fc.bottleneck_dim = std::max<std::size_t>(1, latent / 2);
  fc.evidence_hidden = D / 2;
  fc.evidence = evidence;
  fc.softplus_only = softplus_only;
  fc.dropout = 0.1;
  AlignmentConfig ac{N, 0.5, 1e-3, 1.0};
  auto model = AlignmentModel<double>::initialized(fc, ac, seed);
  Rng rng(derive_seed({seed, 0x67726164ULL}));
  // Non-trivial biases and gains so every path carries gradient.
  model.visit([&](std::string_view, Matrix<double>& m, bool decay) {
    if (!decay && m.size() > 1) for (double& v : m.flat()) v += 0.1 * rng.normal();
  });
  std::vector<Matrix<double>> features;
  for (std::size_t i = 0; i < B; ++i) features.push_back(random_matrix(V, D, rng));
  const auto neural = random_matrix(B, N, rng);
  std::vector<std::vector<double>> masks;
  for (std::size_t i = 0; i < B; ++i) masks.push_back(dropout_mask<double>(latent, fc.dropout, rng));

  auto grad = AlignmentModel<double>::zeros(fc, ac);
  batch_loss_and_grad<double>(model, fc, features, neural, masks, &grad);
  std::vector<const Matrix<double>*> analytic;
  grad.visit([&](std::string_view, const Matrix<double>& g, bool) { analytic.push_back(&g); });

  GradCheckResult out;
  std::size_t idx = 0;
  model.visit([&](std::string_view name, Matrix<double>& param, bool) {
    auto p = param.flat();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + step;
      const double up = batch_loss_and_grad<double>(model, fc, features, neural, masks, nullptr).loss;
      p[i] = saved - step;
      const double down = batch_loss_and_grad<double>(model, fc, features, neural, masks, nullptr).loss;
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[idx]->flat()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = std::string(name) + "[" + std::to_string(i) + "]";
      }
    }
    ++idx;
  });
  return out;
}

/// Small run config over an in-memory dataset: 16x16 images, d = 16.
inline RunConfig tiny_config() {
  RunConfig cfg;
  cfg.data.classes = 14;
  cfg.data.test_classes = 6;
  cfg.data.train_per_class = 4;
  cfg.data.image_size = 16;
  cfg.data.neural_dim = 16;
  cfg.data.bank_levels = {1, 27, 51, 75, 99, 123, 149};
  cfg.encoder.dim = 16;
  cfg.encoder.grid = 8;
  cfg.train.batch_size = 8;
  cfg.train.learning_rate = 1e-3;
  cfg.eval.gallery_sizes = {6};
  cfg.resolve();
  return cfg;
}

inline PairedDataset tiny_dataset(const RunConfig& cfg) {
  const SyntheticEncoder enc(3, cfg.encoder.dim, cfg.encoder.seed, cfg.encoder.grid);
  auto gen = generate_synthetic_dataset(cfg.data, enc, cfg.foveation_params(), cfg.view_params(), cfg.seed);
  return PairedDataset::from_bank(std::make_shared<const EmbeddingBank>(std::move(gen.bank)),
                                  std::make_shared<const std::vector<Image>>(std::move(gen.images)));
}

}  // namespace bicap::testing
