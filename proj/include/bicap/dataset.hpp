#pragma once

// Synthetic paired dataset: class-conditioned images of colored blobs and
// neural stand-in vectors that are a fixed linear map of each clean image's
// embedding plus Gaussian noise. Train and test classes are disjoint.
//
// On disk a dataset directory holds bank.bicp (features at the configured
// kernel levels, neural vectors, labels, splits) and images/NNNNNN.ppm.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "bicap/core/error.hpp"
#include "bicap/core/random.hpp"
#include "bicap/embedding_bank.hpp"
#include "bicap/features.hpp"
#include "bicap/image.hpp"
#include "bicap/provider.hpp"
#include "bicap/transforms.hpp"

namespace bicap {

struct SyntheticDataConfig {
  std::size_t classes = 260;
  std::size_t test_classes = 200;
  std::size_t train_per_class = 10;
  std::size_t test_per_class = 1;
  std::size_t image_size = 32;
  std::size_t neural_dim = 64;
  double neural_noise = 0.05;
  std::vector<int> bank_levels{1, 27, 51, 75, 99, 123, 149};

  void validate() const {
    if (classes < 2) throw ConfigError("need at least two classes");
    if (test_classes < 1 || test_classes >= classes)
      throw ConfigError("test classes must leave at least one training class");
    if (train_per_class < 1 || test_per_class < 1) throw ConfigError("need at least one sample per class");
    if (image_size < 1) throw ConfigError("image size must be >= 1");
    if (neural_dim < 1) throw ConfigError("neural dim must be >= 1");
    if (!(neural_noise >= 0.0)) throw ConfigError("neural noise must be >= 0");
  }
};

namespace detail {

enum class BlobShape { disk, square, ring, cross };

struct Blob {
  BlobShape shape;
  double cy, cx, radius;
  double color[3];
};

struct ClassPrototype {
  double background[3];
  std::vector<Blob> blobs;
};

inline ClassPrototype make_prototype(Rng& rng) {
  ClassPrototype p;
  for (double& c : p.background) c = rng.uniform(0.05, 0.5);
  const std::size_t count = 1 + rng.uniform_index(3);
  for (std::size_t i = 0; i < count; ++i) {
    Blob b{};
    b.shape = static_cast<BlobShape>(rng.uniform_index(4));
    b.cy = rng.uniform(0.2, 0.8);
    b.cx = rng.uniform(0.2, 0.8);
    b.radius = rng.uniform(0.1, 0.3);
    for (double& c : b.color) c = rng.uniform(0.2, 1.0);
    p.blobs.push_back(b);
  }
  return p;
}

inline bool inside(const Blob& b, double y, double x) {
  const double dy = y - b.cy, dx = x - b.cx;
  switch (b.shape) {
    case BlobShape::disk: return dy * dy + dx * dx <= b.radius * b.radius;
    case BlobShape::square: return std::abs(dy) <= b.radius && std::abs(dx) <= b.radius;
    case BlobShape::ring: {
      const double r = std::sqrt(dy * dy + dx * dx);
      return r <= b.radius && r >= 0.55 * b.radius;
    }
    case BlobShape::cross:
      return (std::abs(dy) <= 0.3 * b.radius && std::abs(dx) <= b.radius) ||
             (std::abs(dx) <= 0.3 * b.radius && std::abs(dy) <= b.radius);
  }
  return false;
}

/// One instance: the prototype with jittered geometry and colors, quantized to 8 bits.
inline Image render_instance(const ClassPrototype& proto, std::size_t size, Rng& rng) {
  ClassPrototype inst = proto;
  for (double& c : inst.background) c = std::clamp(c + rng.normal(0.0, 0.04), 0.0, 1.0);
  for (Blob& b : inst.blobs) {
    b.cy += rng.uniform(-0.08, 0.08);
    b.cx += rng.uniform(-0.08, 0.08);
    b.radius *= rng.uniform(0.85, 1.15);
    for (double& c : b.color) c = std::clamp(c + rng.normal(0.0, 0.06), 0.0, 1.0);
  }
  Image img(3, size, size);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t col = 0; col < size; ++col) {
      const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(size);
      const double x = (static_cast<double>(col) + 0.5) / static_cast<double>(size);
      const double* color = inst.background;
      for (const Blob& b : inst.blobs)
        if (inside(b, y, x)) color = b.color;
      for (std::size_t c = 0; c < 3; ++c) img.at(c, r, col) = std::round(color[c] * 255.0) / 255.0;
    }
  return img;
}

}  // namespace detail

struct GeneratedDataset {
  std::vector<Image> images;
  EmbeddingBank bank;
};

/// Renders the dataset and precomputes bank features at every configured level.
inline GeneratedDataset generate_synthetic_dataset(const SyntheticDataConfig& cfg, const SyntheticEncoder& encoder,
                                                   const FoveationParams& fov, const ViewParams& views,
                                                   std::uint64_t seed) {
  cfg.validate();
  std::vector<std::size_t> order(cfg.classes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed({seed, 0x73706c74ULL}));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.uniform_index(i)]);
  std::vector<bool> is_test(cfg.classes, false);
  for (std::size_t i = 0; i < cfg.test_classes; ++i) is_test[order[i]] = true;

  Matrix<double> neural_map(cfg.neural_dim, encoder.dim());
  {
    Rng rng(derive_seed({seed, 0x6e6d6170ULL}));
    const double scale = 1.0 / std::sqrt(static_cast<double>(encoder.dim()));
    for (double& v : neural_map.flat()) v = scale * rng.normal();
  }

  GeneratedDataset out{{}, EmbeddingBank(kAllViews.size(), encoder.dim(), cfg.bank_levels, cfg.neural_dim)};
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    Rng proto_rng(derive_seed({seed, 0x636c6173ULL, c}));
    const auto proto = detail::make_prototype(proto_rng);
    const std::size_t count = is_test[c] ? cfg.test_per_class : cfg.train_per_class;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t index = out.images.size();
      Rng inst_rng(derive_seed({seed, 0x696e7374ULL, index}));
      Image img = detail::render_instance(proto, cfg.image_size, inst_rng);

      const auto clean = encoder.encode(img);
      std::vector<double> neural(cfg.neural_dim);
      affine<double>(neural_map, std::vector<double>(cfg.neural_dim, 0.0), clean, neural);
      for (double& v : neural) v += cfg.neural_noise * inst_rng.normal();

      std::vector<ViewFeatureSet> per_level;
      ViewParams vp = views;
      vp.noise_seed = derive_seed({seed, index, kEvalEpoch});
      for (int level : cfg.bank_levels) {
        FoveationParams f = fov;
        f.kernel_size = level;
        const auto stack = build_view_stack(img, f, vp);
        per_level.push_back(encoder.encode(std::span<const Image>(stack)));
      }
      out.bank.add_sample(per_level, neural, static_cast<int>(c), is_test[c] ? Split::test : Split::train);
      out.images.push_back(std::move(img));
    }
  }
  out.bank.check_zero_shot();
  return out;
}

inline std::string image_path(const std::filesystem::path& dir, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "%06zu.ppm", index);
  return (dir / "images" / name).string();
}

inline void save_dataset(const std::filesystem::path& dir, const GeneratedDataset& data) {
  std::filesystem::create_directories(dir / "images");
  data.bank.save((dir / "bank.bicp").string());
  for (std::size_t i = 0; i < data.images.size(); ++i) write_ppm(image_path(dir, i), data.images[i]);
}

struct PairedDataset {
  std::shared_ptr<const EmbeddingBank> bank;
  std::shared_ptr<const std::vector<Image>> images;  // null when not loaded
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;

  static PairedDataset from_bank(std::shared_ptr<const EmbeddingBank> bank,
                                 std::shared_ptr<const std::vector<Image>> images = nullptr) {
    PairedDataset d{std::move(bank), std::move(images), {}, {}};
    for (std::size_t i = 0; i < d.bank->sample_count(); ++i)
      (d.bank->splits()[i] == Split::train ? d.train_ids : d.test_ids).push_back(i);
    if (d.images && d.images->size() != d.bank->sample_count())
      throw FormatError("image count does not match bank sample count");
    return d;
  }
};

inline PairedDataset load_dataset(const std::filesystem::path& dir, bool with_images) {
  const auto bank_path = dir / "bank.bicp";
  if (!std::filesystem::exists(bank_path)) throw ConfigError("no dataset at " + dir.string() + " (missing bank.bicp)");
  auto bank = std::make_shared<const EmbeddingBank>(load_embedding_bank(bank_path.string()));
  std::shared_ptr<const std::vector<Image>> images;
  if (with_images) {
    auto imgs = std::make_shared<std::vector<Image>>();
    for (std::size_t i = 0; i < bank->sample_count(); ++i) {
      const auto path = image_path(dir, i);
      if (!std::filesystem::exists(path)) throw ConfigError("dataset image missing: " + path);
      imgs->push_back(read_ppm(path));
    }
    images = std::move(imgs);
  }
  return PairedDataset::from_bank(std::move(bank), std::move(images));
}

}  // namespace bicap
