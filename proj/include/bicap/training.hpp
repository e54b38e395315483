#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include <json.hpp>

#include "bicap/alignment.hpp"
#include "bicap/config.hpp"
#include "bicap/core/error.hpp"
#include "bicap/core/random.hpp"
#include "bicap/dataset.hpp"
#include "bicap/provider.hpp"
#include "bicap/regulator.hpp"

namespace bicap {

struct EpochReport {
  std::size_t epoch = 0;
  std::size_t batches = 0;
  double loss = 0.0;
  double mean_smoothed = 0.0;
  int kernel_min = 0;
  int kernel_max = 0;
  double kernel_mean = 0.0;
  double t_lower = 0.0;  // averaged over the epoch's batches
  double t_upper = 0.0;
  std::map<int, std::size_t> kernel_histogram;
};

/// Builds the provider named by the config over a loaded dataset.
inline FeatureProvider make_provider(const RunConfig& cfg, const PairedDataset& data) {
  if (cfg.encoder.provider == "bank") return BankProvider(data.bank, cfg.view_selection());
  if (!data.images) throw ConfigError("synthetic provider needs dataset images");
  const std::size_t channels = data.images->empty() ? 3 : data.images->front().channels();
  return SyntheticProvider(data.images, SyntheticEncoder(channels, cfg.encoder.dim, cfg.encoder.seed, cfg.encoder.grid),
                           cfg.foveation_params(), cfg.view_params(), cfg.view_selection(), cfg.seed);
}

inline FusionConfig fusion_config_for(const RunConfig& cfg, const FeatureProvider& provider) {
  return cfg.fusion_config(provider_view_count(provider), provider_feature_dim(provider));
}

/// Single-writer training loop: per batch, views at each sample's current
/// kernel, fused forward/backward, one AdamW step, then regulator feedback
/// from the diagonal logits.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const PairedDataset& data, FeatureProvider& provider, AlignmentModel<double>& model)
      : cfg_(cfg),
        data_(data),
        provider_(provider),
        model_(model),
        fusion_cfg_(fusion_config_for(cfg, provider)),
        optimizer_(model, cfg.optimizer_config()),
        regulator_(data.train_ids.size(), cfg.regulator_config()) {
    if (data.train_ids.size() < cfg.train.batch_size)
      throw ConfigError("training split has " + std::to_string(data.train_ids.size()) +
                        " samples, fewer than one batch of " + std::to_string(cfg.train.batch_size));
    if (data.bank->neural_dim() != model.neural_w.cols())
      throw ConfigError("neural dim mismatch: dataset " + std::to_string(data.bank->neural_dim()) + ", model " +
                        std::to_string(model.neural_w.cols()));
  }

  const BlurRegulator& regulator() const noexcept { return regulator_; }
  const FusionConfig& fusion_config() const noexcept { return fusion_cfg_; }

  EpochReport run_epoch(std::size_t epoch) {
    const std::size_t n = data_.train_ids.size(), batch = cfg_.train.batch_size;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed({cfg_.seed, 0x73687566ULL, epoch}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.uniform_index(i)]);

    const bool adjust = cfg_.regulation.enabled && epoch >= cfg_.regulation.start_epoch;
    EpochReport report;
    report.epoch = epoch;
    report.batches = n / batch;  // the incomplete tail batch is dropped
    for (std::size_t b = 0; b < report.batches; ++b) {
      std::vector<std::size_t> ids(order.begin() + static_cast<long>(b * batch),
                                   order.begin() + static_cast<long>((b + 1) * batch));
      std::vector<ViewFeatureSet> features;
      Matrix<double> neural(batch, data_.bank->neural_dim());
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t sample = data_.train_ids[ids[i]];
        const int kernel = cfg_.regulation.enabled ? regulator_.kernel(ids[i]) : cfg_.transforms.kernel_size;
        features.push_back(encode_views(provider_, {sample, kernel, epoch}));
        const auto nv = data_.bank->neural(sample);
        std::copy(nv.begin(), nv.end(), neural.row(i).begin());
      }
      std::vector<std::vector<double>> masks;
      if (fusion_cfg_.dropout > 0.0) {
        Rng drop(derive_seed({cfg_.seed, 0x64726f70ULL, epoch, b}));
        for (std::size_t i = 0; i < batch; ++i)
          masks.push_back(dropout_mask<double>(fusion_cfg_.latent_dim, fusion_cfg_.dropout, drop));
      }

      auto grad = AlignmentModel<double>::zeros(fusion_cfg_, cfg_.alignment_config(data_.bank->neural_dim()));
      const auto result = batch_loss_and_grad<double>(model_, fusion_cfg_, features, neural, masks, &grad);
      if (!std::isfinite(result.loss)) throw NumericError("non-finite loss", diagnostic(epoch, b, ids, result.loss));
      optimizer_.step(model_, grad);
      model_.log_tau(0, 0) = std::clamp(model_.log_tau(0, 0), std::log(cfg_.train.tau_min), std::log(cfg_.train.tau_max));

      const auto bounds = regulator_.observe_batch(ids, result.diagonal_logits, adjust);
      report.loss += result.loss;
      report.t_lower += bounds.lower;
      report.t_upper += bounds.upper;
    }
    if (report.batches) {
      report.loss /= static_cast<double>(report.batches);
      report.t_lower /= static_cast<double>(report.batches);
      report.t_upper /= static_cast<double>(report.batches);
    }

    std::size_t seen = 0;
    double kernel_sum = 0.0;
    report.kernel_min = regulator_.config().kernel_max;
    report.kernel_max = regulator_.config().kernel_min;
    for (std::size_t id = 0; id < n; ++id) {
      const int k = regulator_.kernel(id);
      report.kernel_min = std::min(report.kernel_min, k);
      report.kernel_max = std::max(report.kernel_max, k);
      kernel_sum += k;
      ++report.kernel_histogram[k];
      if (regulator_.initialized(id)) {
        report.mean_smoothed += regulator_.smoothed(id);
        ++seen;
      }
    }
    report.kernel_mean = kernel_sum / static_cast<double>(n);
    if (seen) report.mean_smoothed /= static_cast<double>(seen);
    return report;
  }

 private:
  std::string diagnostic(std::size_t epoch, std::size_t batch, const std::vector<std::size_t>& ids, double loss) const {
    nlohmann::json d;
    d["epoch"] = epoch;
    d["batch"] = batch;
    d["loss"] = std::isnan(loss) ? "nan" : (loss > 0 ? "inf" : "-inf");
    d["tau"] = model_.tau();
    d["optimizer_steps"] = optimizer_.steps();
    auto& samples = d["samples"] = nlohmann::json::array();
    for (auto id : ids)
      samples.push_back({{"sample", data_.train_ids[id]},
                         {"kernel", regulator_.kernel(id)},
                         {"smoothed", regulator_.smoothed(id)}});
    return d.dump(2);
  }

  const RunConfig& cfg_;
  const PairedDataset& data_;
  FeatureProvider& provider_;
  AlignmentModel<double>& model_;
  FusionConfig fusion_cfg_;
  AdamW<double> optimizer_;
  BlurRegulator regulator_;
};

/// Test-split embeddings in evaluation mode, visual views built at `kernel`.
struct TestEmbeddings {
  Matrix<double> neural;  // queries
  Matrix<double> visual;  // gallery
};

inline TestEmbeddings embed_test_split(const AlignmentModel<double>& model, const FusionConfig& fc,
                                       FeatureProvider& provider, const PairedDataset& data, int kernel) {
  const std::size_t q = data.test_ids.size();
  TestEmbeddings out{Matrix<double>(q, data.bank->neural_dim()), Matrix<double>(q, fc.latent_dim)};
  for (std::size_t i = 0; i < q; ++i) {
    const std::size_t sample = data.test_ids[i];
    const auto latent = fusion_forward<double>(encode_views(provider, {sample, kernel, kEvalEpoch}), model.fusion, fc);
    std::copy(latent.begin(), latent.end(), out.visual.row(i).begin());
    const auto nv = data.bank->neural(sample);
    std::copy(nv.begin(), nv.end(), out.neural.row(i).begin());
  }
  out.neural = encode_neural(model, out.neural);
  return out;
}

inline Matrix<double> test_similarity(const AlignmentModel<double>& model, const FusionConfig& fc,
                                      FeatureProvider& provider, const PairedDataset& data, int kernel) {
  const auto emb = embed_test_split(model, fc, provider, data, kernel);
  return cosine_similarity_matrix(emb.neural, emb.visual);
}

}  // namespace bicap
