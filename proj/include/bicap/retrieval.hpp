#pragma once

// Zero-shot retrieval metrics. Queries are rows of a similarity matrix,
// gallery items its columns; ties rank the lower gallery index first.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "bicap/core/error.hpp"
#include "bicap/core/matrix.hpp"
#include "bicap/core/random.hpp"

namespace bicap {

/// 1-based rank of `truth` within `scores`, descending, stable by index.
template <class T>
std::size_t rank_of(std::span<const T> scores, std::size_t truth) {
  expects(truth < scores.size(), "truth index outside gallery");
  const T target = scores[truth];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > target || (scores[j] == target && j < truth)) ++rank;
  return rank;
}

template <class T>
double topk_accuracy(const Matrix<T>& sim, std::span<const std::size_t> truth, std::size_t k) {
  expects(truth.size() == sim.rows(), "one truth index per query required");
  expects(k >= 1 && k <= sim.cols(), "k must lie in [1, gallery size]");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < sim.rows(); ++q) hits += rank_of<T>(sim.row(q), truth[q]) <= k;
  return static_cast<double>(hits) / static_cast<double>(sim.rows());
}

/// Instance-level mAP: one relevant item per query, so AP = 1 / rank.
template <class T>
double mean_average_precision(const Matrix<T>& sim, std::span<const std::size_t> truth) {
  expects(truth.size() == sim.rows(), "one truth index per query required");
  double total = 0.0;
  for (std::size_t q = 0; q < sim.rows(); ++q) total += 1.0 / static_cast<double>(rank_of<T>(sim.row(q), truth[q]));
  return total / static_cast<double>(sim.rows());
}

/// Mean of paired (diagonal) cosine similarities.
template <class T>
double similarity_score(std::span<const T> diagonal) {
  expects(!diagonal.empty(), "similarity score needs at least one pair");
  double total = 0.0;
  for (T v : diagonal) total += v;
  return total / static_cast<double>(diagonal.size());
}

struct EvalReport {
  double top1 = 0.0;
  double top5 = 0.0;
  double map = 0.0;
  double similarity = 0.0;
  std::size_t gallery_size = 0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
};

/// Averages metrics over `trials` random n-way subsets of a square pairing
/// (query i matches gallery item i). Each trial draws n items without
/// replacement; their queries are ranked against their gallery images.
template <class T>
EvalReport nway_evaluate(const Matrix<T>& paired_sim, std::size_t n, std::size_t trials, std::uint64_t seed) {
  const std::size_t total = paired_sim.rows();
  expects(paired_sim.cols() == total, "n-way evaluation needs a square pairing");
  if (n < 1 || n > total)
    throw ConfigError("gallery size " + std::to_string(n) + " exceeds the " + std::to_string(total) +
                      " available test items");
  if (trials < 1) throw ConfigError("need at least one evaluation trial");

  EvalReport report{0.0, 0.0, 0.0, 0.0, n, trials, seed};
  std::vector<std::size_t> pool(total);
  std::vector<std::size_t> truth(n);
  std::iota(truth.begin(), truth.end(), std::size_t{0});
  const std::size_t k5 = std::min<std::size_t>(5, n);
  for (std::size_t t = 0; t < trials; ++t) {
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    Rng rng(derive_seed({seed, t}));
    for (std::size_t i = 0; i < n; ++i) std::swap(pool[i], pool[i + rng.uniform_index(total - i)]);
    std::vector<std::size_t> chosen(pool.begin(), pool.begin() + static_cast<long>(n));
    std::sort(chosen.begin(), chosen.end());

    Matrix<T> sub(n, n);
    std::vector<T> diag(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) sub(i, j) = paired_sim(chosen[i], chosen[j]);
      diag[i] = sub(i, i);
    }
    report.top1 += topk_accuracy(sub, std::span<const std::size_t>(truth), 1);
    report.top5 += topk_accuracy(sub, std::span<const std::size_t>(truth), k5);
    report.map += mean_average_precision(sub, std::span<const std::size_t>(truth));
    report.similarity += similarity_score<T>(diag);
  }
  const auto denom = static_cast<double>(trials);
  report.top1 /= denom;
  report.top5 /= denom;
  report.map /= denom;
  report.similarity /= denom;
  return report;
}

}  // namespace bicap
