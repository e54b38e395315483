#pragma once

// Feature providers turn a sample (at its current blur kernel) into a
// ViewFeatureSet, either by rendering views and running the synthetic encoder
// or by looking up a precomputed embedding bank.

#include <map>
#include <memory>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "bicap/core/error.hpp"
#include "bicap/core/random.hpp"
#include "bicap/embedding_bank.hpp"
#include "bicap/features.hpp"
#include "bicap/image.hpp"
#include "bicap/transforms.hpp"

namespace bicap {

/// Epoch tag used for noise seeds outside training (evaluation, bank export).
inline constexpr std::uint64_t kEvalEpoch = ~std::uint64_t{0};

/// Active views, always a subsequence of the fixed order in kAllViews.
struct ViewSelection {
  std::vector<ViewKind> kinds;

  static ViewSelection all() { return {{kAllViews.begin(), kAllViews.end()}}; }

  static ViewSelection from_flags(bool foveation, bool noise, bool low_res, bool mosaic) {
    ViewSelection s;
    if (foveation) s.kinds.push_back(ViewKind::foveated);
    if (noise) s.kinds.push_back(ViewKind::noisy);
    if (low_res) s.kinds.push_back(ViewKind::low_resolution);
    if (mosaic) s.kinds.push_back(ViewKind::mosaic);
    if (s.kinds.empty()) throw ConfigError("at least one view must be enabled");
    return s;
  }

  std::size_t size() const noexcept { return kinds.size(); }
  bool is_full() const noexcept { return kinds.size() == kAllViews.size(); }
};

struct SampleRequest {
  std::size_t index = 0;
  int kernel = 75;
  std::uint64_t epoch = kEvalEpoch;
};

/// Renders views on demand. Foveated and static views are memoized per
/// (sample, kernel); the noisy view is re-drawn with seed
/// derive_seed({run_seed, sample, epoch}). Not safe for concurrent use.
class SyntheticProvider {
 public:
  SyntheticProvider(std::shared_ptr<const std::vector<Image>> images, SyntheticEncoder encoder, FoveationParams fov,
                    ViewParams views, ViewSelection selection, std::uint64_t run_seed)
      : images_(std::move(images)),
        encoder_(std::move(encoder)),
        fov_(fov),
        views_(views),
        selection_(std::move(selection)),
        run_seed_(run_seed) {
    expects(images_ != nullptr, "synthetic provider needs images");
  }

  const ViewSelection& selection() const noexcept { return selection_; }
  std::size_t feature_dim() const noexcept { return encoder_.dim(); }
  const SyntheticEncoder& encoder() const noexcept { return encoder_; }

  ViewFeatureSet encode(const SampleRequest& req) {
    expects(req.index < images_->size(), "sample index outside image set");
    ViewFeatureSet out(selection_.size(), encoder_.dim());
    for (std::size_t v = 0; v < selection_.size(); ++v) {
      const auto row = view_features(req, selection_.kinds[v]);
      std::copy(row.begin(), row.end(), out.row(v).begin());
    }
    return out;
  }

 private:
  std::vector<double> view_features(const SampleRequest& req, ViewKind kind) {
    const Image& img = (*images_)[req.index];
    if (kind == ViewKind::noisy) {
      ViewParams vp = views_;
      vp.noise_seed = derive_seed({run_seed_, req.index, req.epoch});
      return encoder_.encode(build_view(img, kind, fov_, vp));
    }
    const int kernel = kind == ViewKind::foveated ? req.kernel : 0;
    const auto key = std::make_tuple(req.index, static_cast<int>(kind), kernel);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    FoveationParams fov = fov_;
    fov.kernel_size = req.kernel;
    auto feat = encoder_.encode(build_view(img, kind, fov, views_));
    cache_.emplace(key, feat);
    return feat;
  }

  std::shared_ptr<const std::vector<Image>> images_;
  SyntheticEncoder encoder_;
  FoveationParams fov_;
  ViewParams views_;
  ViewSelection selection_;
  std::uint64_t run_seed_;
  std::map<std::tuple<std::size_t, int, int>, std::vector<double>> cache_;
};

/// Reads features from a bank at the level nearest the requested kernel.
/// Four-view banks honor the view selection; other banks require all views on.
class BankProvider {
 public:
  BankProvider(std::shared_ptr<const EmbeddingBank> bank, ViewSelection selection)
      : bank_(std::move(bank)), selection_(std::move(selection)) {
    expects(bank_ != nullptr, "bank provider needs a bank");
    if (bank_->views() != kAllViews.size() && !selection_.is_full())
      throw ConfigError("view ablation needs a four-view bank, this bank has " + std::to_string(bank_->views()));
  }

  const ViewSelection& selection() const noexcept { return selection_; }
  std::size_t feature_dim() const noexcept { return bank_->dim(); }
  std::size_t view_count() const noexcept {
    return bank_->views() == kAllViews.size() ? selection_.size() : bank_->views();
  }
  std::size_t out_of_range_requests() const noexcept { return out_of_range_; }

  ViewFeatureSet encode(const SampleRequest& req) {
    const auto choice = bank_->select_level(req.kernel);
    if (choice.out_of_range) ++out_of_range_;
    ViewFeatureSet all = bank_->features(req.index, choice.index);
    if (bank_->views() != kAllViews.size() || selection_.is_full()) return all;
    ViewFeatureSet out(selection_.size(), all.cols());
    for (std::size_t v = 0; v < selection_.size(); ++v) {
      auto src = all.row(static_cast<std::size_t>(selection_.kinds[v]));
      std::copy(src.begin(), src.end(), out.row(v).begin());
    }
    return out;
  }

 private:
  std::shared_ptr<const EmbeddingBank> bank_;
  ViewSelection selection_;
  std::size_t out_of_range_ = 0;
};

using FeatureProvider = std::variant<SyntheticProvider, BankProvider>;

inline ViewFeatureSet encode_views(FeatureProvider& provider, const SampleRequest& req) {
  return std::visit([&req](auto& p) { return p.encode(req); }, provider);
}

inline std::size_t provider_view_count(const FeatureProvider& provider) {
  return std::visit(
      [](const auto& p) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, BankProvider>) return p.view_count();
        else return p.selection().size();
      },
      provider);
}

inline std::size_t provider_feature_dim(const FeatureProvider& provider) {
  return std::visit([](const auto& p) { return p.feature_dim(); }, provider);
}

}  // namespace bicap
