#include <cmath>
#include <cstring>
#include <limits>

#include <gtest/gtest.h>

#include "bicap/dataset.hpp"
#include "bicap/provider.hpp"
#include "support/fixtures.hpp"

using namespace bicap;
using bicap::testing::random_image;

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double spectral_norm(const Matrix<double>& p) {
  std::vector<double> x(p.cols(), 1.0), y(p.rows());
  double sigma = 0.0;
  for (int it = 0; it < 200; ++it) {
    for (std::size_t r = 0; r < p.rows(); ++r) y[r] = dot<double>(p.row(r), x);
    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t r = 0; r < p.rows(); ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) x[c] += p(r, c) * y[r];
    double n = 0.0;
    for (double v : x) n += v * v;
    n = std::sqrt(n);
    sigma = std::sqrt(n);
    for (double& v : x) v /= n;
  }
  return sigma;
}

EmbeddingBank small_bank(std::vector<int> levels = {51, 75}) {
  EmbeddingBank bank(4, 3, levels, 2);
  Rng rng(1);
  for (int s = 0; s < 3; ++s) {
    std::vector<ViewFeatureSet> per_level;
    for (std::size_t l = 0; l < levels.size(); ++l) per_level.push_back(bicap::testing::random_matrix(4, 3, rng));
    const std::vector<double> neural{rng.normal(), rng.normal()};
    bank.add_sample(per_level, neural, s, s == 2 ? Split::test : Split::train);
  }
  return bank;
}

// Rebuilds a bank file around an edited header.
std::string with_header(const std::string& bytes, const std::function<void(nlohmann::json&)>& edit) {
  io::Reader in(bytes);
  in.take(8, "prefix");
  const auto len = in.u32("len");
  auto header = nlohmann::json::parse(in.take(len, "header"));
  const std::string payload(bytes.substr(12 + len));
  edit(header);
  const auto text = header.dump();
  std::string out = "BICP";
  io::put_u32(out, 1);
  io::put_u32(out, static_cast<std::uint32_t>(text.size()));
  return out + text + payload;
}

}  // namespace

TEST(SyntheticEncoder, RowsAreUnitNormAndDeterministic) {
  Rng rng(2);
  const auto img = random_image(3, 32, 32, rng);
  const std::array<Image, 3> views{img, img, random_image(3, 32, 32, rng)};
  const auto f = synthetic_encode(views, 64, 7);
  EXPECT_EQ(f.rows(), 3u);
  for (std::size_t v = 0; v < 3; ++v) EXPECT_NEAR(std::sqrt(dot<double>(f.row(v), f.row(v))), 1.0, 1e-6);
  for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(f(0, j), f(1, j));
  EXPECT_EQ(f, synthetic_encode(views, 64, 7));
  EXPECT_NE(f, synthetic_encode(views, 64, 8));
}

TEST(SyntheticEncoder, AdaptivePoolingCoversOddSizes) {
  const SyntheticEncoder enc(1, 4, 0, 4);
  Image img(1, 6, 6, 0.0);
  img.at(0, 5, 5) = 1.0;
  const auto pooled = enc.pool(img);
  // Last cell spans rows/cols [4, 6): one hot pixel in a 2x2 cell.
  EXPECT_DOUBLE_EQ(pooled.back(), 0.25);
  EXPECT_THROW(SyntheticEncoder(3, 1, 0), ConfigError);
}

TEST(SyntheticEncoder, PeripheryChangeIsDampedByFoveation) {
  Rng rng(3);
  Image a(3, 32, 32, 0.5);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 12; r < 20; ++r)
      for (std::size_t x = 12; x < 20; ++x) a.at(c, r, x) = 0.9;
  Image b = a;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t x = 0; x < 32; ++x)
        if (r < 6 || r >= 26 || x < 6 || x >= 26) b.at(c, r, x) = ((r / 4 + x / 4) % 2) ? 0.85 : 0.15;

  const SyntheticEncoder enc(3, 64, 7);
  FoveationParams fov;
  fov.kernel_size = 75;
  ViewParams vp;
  vp.noise_seed = 11;
  const double fov_gap = distance(enc.encode(build_view(a, ViewKind::foveated, fov, vp)),
                                  enc.encode(build_view(b, ViewKind::foveated, fov, vp)));
  const double noise_gap = distance(enc.encode(build_view(a, ViewKind::noisy, fov, vp)),
                                    enc.encode(build_view(b, ViewKind::noisy, fov, vp)));
  EXPECT_LT(fov_gap, noise_gap);
}

TEST(SyntheticEncoder, LipschitzInPixelSpace) {
  // |df| <= 2 |P| |d pool| / |P pool| for the normalized projection; a single
  // pixel moved by eps changes its pool cell by at most eps / cell_area.
  const SyntheticEncoder enc(3, 32, 5);
  const double op_norm = spectral_norm(enc.projection());
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto img = random_image(3, 32, 32, rng);
    Image moved = img;
    const double eps = 0.05;
    const auto c = rng.uniform_index(3), r = rng.uniform_index(32), x = rng.uniform_index(32);
    moved.at(c, r, x) += eps;
    const auto pooled = enc.pool(img);
    std::vector<double> y(enc.dim());
    for (std::size_t i = 0; i < enc.dim(); ++i) y[i] = dot<double>(enc.projection().row(i), pooled);
    const double lipschitz = 2.0 * op_norm / (4.0 * std::sqrt(dot<double>(y, y)));
    const auto fa = enc.encode(img), fb = enc.encode(moved);
    for (std::size_t i = 0; i < fa.size(); ++i) ASSERT_LE(std::abs(fa[i] - fb[i]), lipschitz * eps * (1 + 1e-12));
  }
}

TEST(EmbeddingBank, RoundTripIsBitIdentical) {
  const auto bank = small_bank();
  const auto bytes = bank.serialize();
  const auto back = EmbeddingBank::deserialize(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.features(1, 1), bank.features(1, 1));
  EXPECT_EQ(back.neural(2), bank.neural(2));
  EXPECT_EQ(back.labels(), bank.labels());
  EXPECT_EQ(back.splits(), bank.splits());
}

TEST(EmbeddingBank, RejectsMalformedFiles) {
  const auto bytes = small_bank().serialize();
  EXPECT_THROW(EmbeddingBank::deserialize(""), FormatError);
  EXPECT_THROW(EmbeddingBank::deserialize("BICX" + bytes.substr(4)), FormatError);
  EXPECT_THROW(EmbeddingBank::deserialize(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(EmbeddingBank::deserialize(bytes.substr(0, 20)), FormatError);

  std::string nan = bytes;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + nan.size() - 4, &q, 4);
  EXPECT_THROW(EmbeddingBank::deserialize(nan), FormatError);
  std::string inf = bytes;
  const float i = std::numeric_limits<float>::infinity();
  std::memcpy(inf.data() + inf.size() - 4, &i, 4);
  EXPECT_THROW(EmbeddingBank::deserialize(inf), FormatError);

  // Header declares a level the payload does not carry.
  EXPECT_THROW(EmbeddingBank::deserialize(with_header(bytes, [](auto& h) { h["kernel_levels"] = {27, 51, 75}; })),
               FormatError);
  EXPECT_THROW(EmbeddingBank::deserialize(with_header(bytes, [](auto& h) { h.erase("dim"); })), FormatError);
  EXPECT_THROW(EmbeddingBank::deserialize(with_header(bytes, [](auto& h) { h["kernel_levels"] = {75, 51}; })),
               FormatError);
}

TEST(EmbeddingBank, SplitOverlapIsAProtocolError) {
  EmbeddingBank bank(1, 2, {75}, 1);
  const std::vector<double> n{0.0};
  bank.add_sample({ViewFeatureSet(1, 2, 0.5)}, n, 1, Split::train);
  bank.add_sample({ViewFeatureSet(1, 2, 0.5)}, n, 2, Split::train);
  bank.add_sample({ViewFeatureSet(1, 2, 0.5)}, n, 2, Split::test);
  EXPECT_THROW(bank.check_zero_shot(), ProtocolError);
  EXPECT_THROW(EmbeddingBank::deserialize(bank.serialize()), ProtocolError);
}

TEST(EmbeddingBank, NearestLevelWithUpwardTies) {
  const auto bank = small_bank({51, 75});
  EXPECT_EQ(bank.kernel_levels()[bank.select_level(69).index], 75);
  EXPECT_EQ(bank.kernel_levels()[bank.select_level(63).index], 75);  // tie 12 vs 12
  EXPECT_EQ(bank.kernel_levels()[bank.select_level(61).index], 51);
  EXPECT_FALSE(bank.select_level(75).out_of_range);
  EXPECT_TRUE(bank.select_level(149).out_of_range);
  EXPECT_TRUE(bank.select_level(1).out_of_range);
}

TEST(EmbeddingBank, LevelSelectionIsMonotone) {
  EmbeddingBank bank(1, 1, {1, 27, 51, 75, 99, 123, 149}, 1);
  int previous = 0;
  for (int k = 1; k <= 149; k += 2) {
    const int level = bank.kernel_levels()[bank.select_level(k).index];
    EXPECT_GE(level, previous);
    previous = level;
  }
}

TEST(BankProvider, ReadsLevelsAndCountsOutOfRange) {
  auto bank = std::make_shared<const EmbeddingBank>(small_bank());
  FeatureProvider provider = BankProvider(bank, ViewSelection::all());
  EXPECT_EQ(encode_views(provider, {1, 69, 0}), bank->features(1, 1));
  EXPECT_EQ(encode_views(provider, {1, 53, 0}), bank->features(1, 0));
  encode_views(provider, {0, 149, 0});
  EXPECT_EQ(std::get<BankProvider>(provider).out_of_range_requests(), 1u);
  EXPECT_EQ(provider_view_count(provider), 4u);
  EXPECT_EQ(provider_feature_dim(provider), 3u);
}

TEST(BankProvider, ViewSelectionPicksRows) {
  auto bank = std::make_shared<const EmbeddingBank>(small_bank());
  FeatureProvider provider = BankProvider(bank, ViewSelection::from_flags(true, false, true, false));
  const auto f = encode_views(provider, {0, 75, 3});
  const auto all = bank->features(0, 1);
  ASSERT_EQ(f.rows(), 2u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(f(0, j), all(0, j));
    EXPECT_EQ(f(1, j), all(2, j));
  }
  EXPECT_THROW(ViewSelection::from_flags(false, false, false, false), ConfigError);
}

TEST(SyntheticProvider, NoiseFollowsEpochOnly) {
  Rng rng(5);
  auto images = std::make_shared<const std::vector<Image>>(std::vector<Image>{random_image(3, 32, 32, rng)});
  FeatureProvider provider =
      SyntheticProvider(images, SyntheticEncoder(3, 16, 7), FoveationParams{}, ViewParams{}, ViewSelection::all(), 42);
  const auto e0 = encode_views(provider, {0, 75, 0});
  const auto e0b = encode_views(provider, {0, 75, 0});
  const auto e1 = encode_views(provider, {0, 75, 1});
  const auto k9 = encode_views(provider, {0, 9, 0});
  EXPECT_EQ(e0, e0b);
  for (std::size_t j = 0; j < 16; ++j) {
    EXPECT_EQ(e0(0, j), e1(0, j));
    EXPECT_EQ(e0(2, j), e1(2, j));
    EXPECT_EQ(e0(1, j), k9(1, j));
  }
  EXPECT_NE(std::vector<double>(e0.row(1).begin(), e0.row(1).end()),
            std::vector<double>(e1.row(1).begin(), e1.row(1).end()));
  EXPECT_NE(std::vector<double>(e0.row(0).begin(), e0.row(0).end()),
            std::vector<double>(k9.row(0).begin(), k9.row(0).end()));
}

TEST(SyntheticDataset, DisjointSplitsAndDeterministic) {
  SyntheticDataConfig cfg;
  cfg.classes = 12;
  cfg.test_classes = 10;
  cfg.train_per_class = 2;
  cfg.image_size = 16;
  cfg.neural_dim = 8;
  cfg.bank_levels = {1, 75};
  const SyntheticEncoder enc(3, 8, 7, 8);
  const auto a = generate_synthetic_dataset(cfg, enc, FoveationParams{}, ViewParams{}, 42);
  const auto b = generate_synthetic_dataset(cfg, enc, FoveationParams{}, ViewParams{}, 42);
  EXPECT_EQ(a.bank.serialize(), b.bank.serialize());
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.bank.sample_count(), 2u * 2 + 10);
  std::set<int> train, test;
  for (std::size_t i = 0; i < a.bank.sample_count(); ++i)
    (a.bank.splits()[i] == Split::train ? train : test).insert(a.bank.labels()[i]);
  EXPECT_EQ(test.size(), 10u);
  EXPECT_EQ(train.size(), 2u);
  for (int c : test) EXPECT_EQ(train.count(c), 0u);
  EXPECT_EQ(EmbeddingBank::deserialize(a.bank.serialize()).serialize(), a.bank.serialize());
  const auto c = generate_synthetic_dataset(cfg, enc, FoveationParams{}, ViewParams{}, 43);
  EXPECT_NE(a.bank.serialize(), c.bank.serialize());
}
