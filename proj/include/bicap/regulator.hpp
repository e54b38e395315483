#pragma once

// Feedback-controlled blur regulation. Each training sample carries a
// momentum-smoothed alignment logit and its own blur kernel size; per batch,
// samples whose smoothed logit leaves the batch confidence interval get a
// sharper (above) or blurrier (below) kernel.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "bicap/core/error.hpp"

namespace bicap {

struct RegulatorConfig {
  double momentum = 0.9;  // beta, weight on the newest observation
  double z = 1.959963984540054;
  int kernel_init = 75;
  int perturbation = 6;
  int kernel_min = 1;
  int kernel_max = 149;

  /// z_{alpha/2} for a two-sided (1 - alpha) interval.
  static double z_for_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha / 2.0);
  }

  void validate() const {
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("momentum must lie in [0, 1]");
    if (!(z >= 0.0) || !std::isfinite(z)) throw ConfigError("z-score must be finite and >= 0");
    if (perturbation < 2 || perturbation % 2) throw ConfigError("perturbation must be even and >= 2");
    for (int k : {kernel_init, kernel_min, kernel_max})
      if (k < 1 || k % 2 == 0) throw ConfigError("kernel sizes must be odd and >= 1");
    if (!(kernel_min <= kernel_init && kernel_init <= kernel_max))
      throw ConfigError("kernel bounds must satisfy k_min <= k_init <= k_max");
  }
};

struct ConfidenceBounds {
  double lower = 0.0;
  double upper = 0.0;
  bool degenerate = false;  // fewer than two samples
};

/// mu +/- z * sigma with the population standard deviation.
inline ConfidenceBounds confidence_bounds(std::span<const double> smoothed, double z) {
  expects(!smoothed.empty(), "confidence bounds need at least one value");
  double mean = 0.0;
  for (double s : smoothed) mean += s;
  mean /= static_cast<double>(smoothed.size());
  if (smoothed.size() < 2) return {mean, mean, true};
  double var = 0.0;
  for (double s : smoothed) var += (s - mean) * (s - mean);
  const double half = z * std::sqrt(var / static_cast<double>(smoothed.size()));
  return {mean - half, mean + half, false};
}

class BlurRegulator {
 public:
  BlurRegulator(std::size_t samples, RegulatorConfig cfg)
      : cfg_(cfg), smoothed_(samples, 0.0), kernel_(samples, cfg.kernel_init), initialized_(samples, false) {
    cfg_.validate();
  }

  const RegulatorConfig& config() const noexcept { return cfg_; }
  std::size_t size() const noexcept { return kernel_.size(); }
  int kernel(std::size_t id) const { return kernel_.at(id); }
  double smoothed(std::size_t id) const { return smoothed_.at(id); }
  bool initialized(std::size_t id) const { return initialized_.at(id); }
  const std::vector<int>& kernels() const noexcept { return kernel_; }
  std::size_t degenerate_batches() const noexcept { return degenerate_batches_; }

  /// s_hat <- beta * s + (1 - beta) * s_hat; the first observation initializes s_hat.
  void update_smoothed(std::span<const std::size_t> ids, std::span<const double> logits) {
    expects(ids.size() == logits.size(), "one logit per sample id required");
    check_ids(ids);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t id = ids[i];
      if (!initialized_[id]) {
        smoothed_[id] = logits[i];
        initialized_[id] = true;
      } else {
        smoothed_[id] = cfg_.momentum * logits[i] + (1.0 - cfg_.momentum) * smoothed_[id];
      }
    }
  }

  std::vector<double> smoothed_of(std::span<const std::size_t> ids) const {
    check_ids(ids);
    std::vector<double> out;
    out.reserve(ids.size());
    for (auto id : ids) out.push_back(smoothed_[id]);
    return out;
  }

  ConfidenceBounds batch_bounds(std::span<const std::size_t> ids) {
    const auto values = smoothed_of(ids);
    auto b = confidence_bounds(values, cfg_.z);
    if (b.degenerate) ++degenerate_batches_;
    return b;
  }

  /// Strictly above: k - c. Strictly below: k + c. Otherwise unchanged.
  /// Results are clamped to [k_min, k_max]; both bounds are odd, so parity holds.
  void update_kernels(std::span<const std::size_t> ids, const ConfidenceBounds& bounds) {
    check_ids(ids);
    for (auto id : ids) {
      int k = kernel_[id];
      if (smoothed_[id] > bounds.upper) k -= cfg_.perturbation;
      else if (smoothed_[id] < bounds.lower) k += cfg_.perturbation;
      kernel_[id] = std::clamp(k, cfg_.kernel_min, cfg_.kernel_max);
    }
  }

  /// update_smoothed, then bounds over the batch; kernels move only when `adjust`.
  ConfidenceBounds observe_batch(std::span<const std::size_t> ids, std::span<const double> logits, bool adjust) {
    update_smoothed(ids, logits);
    const auto bounds = batch_bounds(ids);
    if (adjust) update_kernels(ids, bounds);
    return bounds;
  }

 private:
  void check_ids(std::span<const std::size_t> ids) const {
    for (auto id : ids)
      if (id >= kernel_.size()) throw ContractViolation("unknown sample id " + std::to_string(id));
  }

  RegulatorConfig cfg_;
  std::vector<double> smoothed_;
  std::vector<int> kernel_;
  std::vector<bool> initialized_;
  std::size_t degenerate_batches_ = 0;
};

}  // namespace bicap
