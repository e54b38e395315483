#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "bicap/training.hpp"
#include "support/fixtures.hpp"

using namespace bicap;
using bicap::testing::random_matrix;

namespace {

Matrix<double> orthonormal_rows(std::size_t b, std::size_t d) {
  Matrix<double> m(b, d);
  for (std::size_t i = 0; i < b; ++i) m(i, i) = 1.0;
  return m;
}

}  // namespace

TEST(CosineSimilarity, OrthonormalRowsGiveIdentity) {
  const auto m = orthonormal_rows(3, 5);
  const auto sim = cosine_similarity_matrix(m, m);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(sim(i, j), i == j ? 1.0 : 0.0);
}

TEST(CosineSimilarity, MatchesBruteForceAndIgnoresRowScale) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_matrix(4, 8, rng), c = random_matrix(4, 8, rng);
    const auto sim = cosine_similarity_matrix(a, c);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t k = 0; k < 8; ++k) {
          ab += a(i, k) * c(j, k);
          aa += a(i, k) * a(i, k);
          bb += c(j, k) * c(j, k);
        }
        EXPECT_NEAR(sim(i, j), ab / std::sqrt(aa * bb), 1e-6);
      }
    auto scaled = a;
    for (double& v : scaled.row(2)) v *= 3.0;
    const auto again = cosine_similarity_matrix(scaled, c);
    for (std::size_t i = 0; i < sim.size(); ++i) EXPECT_NEAR(again.flat()[i], sim.flat()[i], 1e-15);
  }
}

TEST(ContrastiveLoss, OrthonormalPairClosedForm) {
  const auto m = orthonormal_rows(2, 4);
  EXPECT_NEAR(symmetric_contrastive_loss(m, m, 1.0).loss, 0.31326168751822286, 1e-6);
}

TEST(ContrastiveLoss, ModalitySwapIsBitIdentical) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_matrix(6, 8, rng), c = random_matrix(6, 8, rng);
    const double tau = rng.uniform(0.01, 1.0);
    const double ab = symmetric_contrastive_loss(a, c, tau).loss;
    EXPECT_EQ(ab, symmetric_contrastive_loss(c, a, tau).loss);
    EXPECT_GE(ab, 0.0);
  }
}

TEST(ContrastiveLoss, JointPermutationAndRowRescaleInvariance) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 5;
    const auto a = random_matrix(b, 8, rng), c = random_matrix(b, 8, rng);
    const double base = symmetric_contrastive_loss(a, c, 0.07).loss;
    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = b; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    Matrix<double> pa(b, 8), pc(b, 8);
    for (std::size_t i = 0; i < b; ++i) {
      std::copy(a.row(perm[i]).begin(), a.row(perm[i]).end(), pa.row(i).begin());
      std::copy(c.row(perm[i]).begin(), c.row(perm[i]).end(), pc.row(i).begin());
    }
    EXPECT_NEAR(symmetric_contrastive_loss(pa, pc, 0.07).loss, base, 1e-9);
    auto scaled = c;
    for (std::size_t i = 0; i < b; ++i) {
      const double factor = rng.uniform(0.1, 10.0);
      for (double& v : scaled.row(i)) v *= factor;
    }
    EXPECT_NEAR(symmetric_contrastive_loss(a, scaled, 0.07).loss, base, 1e-6);
  }
}

TEST(ContrastiveLoss, NearOptimumApproachesZeroAndNeedsNegatives) {
  const auto m = orthonormal_rows(4, 4);
  EXPECT_LT(symmetric_contrastive_loss(m, m, 0.05).loss, 0.01);
  const auto one = orthonormal_rows(1, 4);
  EXPECT_THROW(symmetric_contrastive_loss(one, one, 0.07), ContractViolation);
}

TEST(ContrastiveLoss, TemperatureGradientMatchesFiniteDifference) {
  Rng rng(4);
  const auto a = random_matrix(4, 8, rng), c = random_matrix(4, 8, rng);
  const double log_tau = std::log(0.3), h = 1e-5;
  const auto fwd = symmetric_contrastive_loss(a, c, std::exp(log_tau));
  const auto g = contrastive_loss_backward(a, c, std::exp(log_tau), fwd.logits);
  const double numeric = (symmetric_contrastive_loss(a, c, std::exp(log_tau + h)).loss -
                          symmetric_contrastive_loss(a, c, std::exp(log_tau - h)).loss) /
                         (2 * h);
  EXPECT_NEAR(g.d_log_tau, numeric, 1e-8);
}

TEST(AlignmentModel, FullGraphGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 10; seed < 13; ++seed) {
    const auto r = bicap::testing::gradient_check(seed);
    EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
    EXPECT_EQ(r.checked, 287u);  // every trainable entry, log(tau) included
  }
}

TEST(AdamW, ZeroStepLeavesParametersAndDecayHitsWeightsOnly) {
  FusionConfig fc;
  fc.feature_dim = fc.latent_dim = 8;
  fc.bottleneck_dim = fc.evidence_hidden = 4;
  const AlignmentConfig ac{8, 0.07, 1e-3, 1.0};
  auto model = AlignmentModel<double>::initialized(fc, ac, 1);
  model.visit([](std::string_view, Matrix<double>& m, bool) { m.fill(0.5); });
  const auto zero_grad = AlignmentModel<double>::zeros(fc, ac);

  auto frozen = model;
  AdamW<double> still(frozen, {0.0, 0.01, 0.9, 0.999, 1e-8});
  still.step(frozen, zero_grad);
  EXPECT_EQ(frozen.neural_w, model.neural_w);
  EXPECT_EQ(frozen.fusion.purifier_w1, model.fusion.purifier_w1);

  AdamW<double> decaying(model, {0.1, 0.01, 0.9, 0.999, 1e-8});
  decaying.step(model, zero_grad);
  model.visit([](std::string_view name, const Matrix<double>& m, bool decay) {
    for (double v : m.flat()) EXPECT_DOUBLE_EQ(v, decay ? 0.5 - 0.1 * 0.01 * 0.5 : 0.5) << name;
  });
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  FusionConfig fc;
  fc.feature_dim = fc.latent_dim = 4;
  fc.bottleneck_dim = fc.evidence_hidden = 2;
  const AlignmentConfig ac{4, 0.07, 1e-3, 1.0};
  auto model = AlignmentModel<double>::zeros(fc, ac);
  auto grad = AlignmentModel<double>::zeros(fc, ac);
  grad.neural_b(0, 0) = 3.0;
  grad.neural_b(1, 0) = -0.2;
  AdamW<double> opt(model, {0.01, 0.0, 0.9, 0.999, 1e-12});
  opt.step(model, grad);
  EXPECT_NEAR(model.neural_b(0, 0), -0.01, 1e-12);
  EXPECT_NEAR(model.neural_b(1, 0), 0.01, 1e-12);
  EXPECT_EQ(model.neural_b(2, 0), 0.0);
}

class TrainerTest : public ::testing::Test {
 protected:
  RunConfig cfg = bicap::testing::tiny_config();
  PairedDataset data = bicap::testing::tiny_dataset(cfg);

  std::vector<EpochReport> run(const RunConfig& c, std::size_t epochs, AlignmentModel<double>* out = nullptr) {
    auto provider = make_provider(c, data);
    const auto fc = fusion_config_for(c, provider);
    auto model = AlignmentModel<double>::initialized(fc, c.alignment_config(data.bank->neural_dim()), c.seed);
    Trainer trainer(c, data, provider, model);
    std::vector<EpochReport> reports;
    for (std::size_t e = 0; e < epochs; ++e) reports.push_back(trainer.run_epoch(e));
    if (out) *out = model;
    return reports;
  }
};

TEST_F(TrainerTest, ZeroLearningRateKeepsLossConstant) {
  RunConfig c = cfg;
  c.train.learning_rate = 0.0;
  c.train.weight_decay = 0.0;
  c.fusion.dropout = 0.0;
  c.regulation.enabled = false;
  c.encoder.provider = "bank";
  c.train.batch_size = data.train_ids.size();
  AlignmentModel<double> after;
  const auto reports = run(c, 2, &after);
  EXPECT_NEAR(reports[0].loss, reports[1].loss, 1e-12);

  auto provider = make_provider(c, data);
  const auto init =
      AlignmentModel<double>::initialized(fusion_config_for(c, provider), c.alignment_config(16), c.seed);
  EXPECT_EQ(after.neural_w, init.neural_w);
  EXPECT_EQ(after.fusion.proj_w, init.fusion.proj_w);
}

TEST_F(TrainerTest, FixedSeedGivesBitIdenticalReports) {
  AlignmentModel<double> a, b;
  const auto ra = run(cfg, 3, &a), rb = run(cfg, 3, &b);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(ra[e].loss, rb[e].loss);
    EXPECT_EQ(ra[e].mean_smoothed, rb[e].mean_smoothed);
    EXPECT_EQ(ra[e].kernel_histogram, rb[e].kernel_histogram);
  }
  EXPECT_EQ(a.neural_w, b.neural_w);
  EXPECT_EQ(a.log_tau, b.log_tau);
}

TEST_F(TrainerTest, RegulationStartsAfterTheFirstEpoch) {
  const auto reports = run(cfg, 3);
  EXPECT_EQ(reports[0].kernel_min, 75);
  EXPECT_EQ(reports[0].kernel_max, 75);
  EXPECT_TRUE(reports[2].kernel_min < 75 || reports[2].kernel_max > 75);
  std::size_t total = 0;
  for (const auto& [k, n] : reports[2].kernel_histogram) {
    EXPECT_EQ(k % 2, 1);
    total += n;
  }
  EXPECT_EQ(total, data.train_ids.size());
  for (const auto& r : reports) EXPECT_LE(r.t_lower, r.t_upper);
}

TEST_F(TrainerTest, TemperatureStaysClamped) {
  RunConfig c = cfg;
  c.train.learning_rate = 0.5;
  c.train.tau_min = 0.05;
  AlignmentModel<double> after;
  run(c, 4, &after);
  EXPECT_GE(after.tau(), 0.05 * (1 - 1e-12));
  EXPECT_LE(after.tau(), 1.0 * (1 + 1e-12));
}

TEST_F(TrainerTest, NonFiniteLossRaisesWithDiagnostic) {
  EmbeddingBank bad(data.bank->views(), data.bank->dim(), data.bank->kernel_levels(), data.bank->neural_dim());
  for (std::size_t s = 0; s < data.bank->sample_count(); ++s) {
    std::vector<ViewFeatureSet> levels;
    for (std::size_t l = 0; l < data.bank->kernel_levels().size(); ++l) levels.push_back(data.bank->features(s, l));
    auto neural = data.bank->neural(s);
    if (s == data.train_ids.front()) neural[0] = std::numeric_limits<double>::quiet_NaN();
    bad.add_sample(levels, neural, data.bank->labels()[s], data.bank->splits()[s]);
  }
  const auto broken = PairedDataset::from_bank(std::make_shared<const EmbeddingBank>(std::move(bad)));
  RunConfig c = cfg;
  c.encoder.provider = "bank";
  auto provider = make_provider(c, broken);
  const auto fc = fusion_config_for(c, provider);
  auto model = AlignmentModel<double>::initialized(fc, c.alignment_config(16), c.seed);
  Trainer trainer(c, broken, provider, model);
  try {
    trainer.run_epoch(0);
    FAIL() << "expected a numeric failure";
  } catch (const NumericError& e) {
    const auto diag = nlohmann::json::parse(e.diagnostic());
    EXPECT_EQ(diag.at("epoch"), 0);
    EXPECT_EQ(diag.at("loss"), "nan");
    EXPECT_EQ(diag.at("samples").size(), c.train.batch_size);
  }
}

TEST_F(TrainerTest, TooFewSamplesForABatchIsAConfigError) {
  RunConfig c = cfg;
  c.train.batch_size = data.train_ids.size() + 1;
  auto provider = make_provider(c, data);
  auto model = AlignmentModel<double>::initialized(fusion_config_for(c, provider), c.alignment_config(16), 1);
  EXPECT_THROW(Trainer(c, data, provider, model), ConfigError);
}

TEST_F(TrainerTest, TestSimilarityIsSquareOverTestSplit) {
  auto provider = make_provider(cfg, data);
  const auto fc = fusion_config_for(cfg, provider);
  const auto model = AlignmentModel<double>::initialized(fc, cfg.alignment_config(16), 3);
  const auto sim = test_similarity(model, fc, provider, data, 75);
  EXPECT_EQ(sim.rows(), data.test_ids.size());
  EXPECT_EQ(sim.cols(), data.test_ids.size());
  for (double v : sim.flat()) {
    EXPECT_GE(v, -1.0 - 1e-12);
    EXPECT_LE(v, 1.0 + 1e-12);
  }
}
