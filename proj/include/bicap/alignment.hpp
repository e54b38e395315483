#pragma once

// Symmetric contrastive alignment between neural and visual embeddings.

#include <cmath>
#include <string_view>
#include <vector>

#include "bicap/core/error.hpp"
#include "bicap/core/matrix.hpp"
#include "bicap/core/random.hpp"
#include "bicap/fusion.hpp"
#include "bicap/nn/activations.hpp"

namespace bicap {

inline constexpr double kNormFloor = 1e-12;

template <class T>
std::vector<T> row_norms(const Matrix<T>& m) {
  std::vector<T> norms(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    norms[r] = std::max(std::sqrt(dot<T>(m.row(r), m.row(r))), static_cast<T>(kNormFloor));
  return norms;
}

template <class T>
Matrix<T> normalize_rows(const Matrix<T>& m) {
  Matrix<T> out = m;
  const auto norms = row_norms(m);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (T& v : out.row(r)) v /= norms[r];
  return out;
}

/// (i, j) = <a_i, c_j> / (|a_i| |c_j|), row norms floored at 1e-12.
template <class T>
Matrix<T> cosine_similarity_matrix(const Matrix<T>& a, const Matrix<T>& c) {
  expects(a.cols() == c.cols(), "cosine similarity needs equal feature widths");
  const auto an = normalize_rows(a);
  const auto cn = normalize_rows(c);
  Matrix<T> sim(a.rows(), c.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < c.rows(); ++j) sim(i, j) = dot<T>(an.row(i), cn.row(j));
  return sim;
}

namespace detail {

// Mean over rows of -log softmax(row)[i] at the diagonal.
template <class T>
T diagonal_cross_entropy(const Matrix<T>& logits) {
  T total{};
  for (std::size_t i = 0; i < logits.rows(); ++i) total += nn::log_sum_exp<T>(logits.row(i)) - logits(i, i);
  return total / static_cast<T>(logits.rows());
}

}  // namespace detail

template <class T>
struct ContrastiveResult {
  T loss{};
  Matrix<T> logits;  // logits_N = sim(F_N, F_latent) / tau, rows are neural queries
};

/// 1/2 [CE(sim(A, C) / tau, diag) + CE(sim(C, A) / tau, diag)].
template <class T>
ContrastiveResult<T> symmetric_contrastive_loss(const Matrix<T>& neural, const Matrix<T>& visual, T tau) {
  if (neural.rows() < 2 || neural.rows() != visual.rows())
    throw ContractViolation("contrastive loss needs two equal batches of size >= 2");
  expects(tau > T{0}, "temperature must be positive");
  ContrastiveResult<T> r;
  r.logits = cosine_similarity_matrix(neural, visual);
  for (T& v : r.logits.flat()) v /= tau;
  r.loss = T{0.5} * (detail::diagonal_cross_entropy(r.logits) + detail::diagonal_cross_entropy(r.logits.transposed()));
  return r;
}

template <class T>
struct ContrastiveGrad {
  Matrix<T> d_neural;
  Matrix<T> d_visual;
  T d_log_tau{};
};

/// Gradients of the symmetric loss w.r.t. both embedding batches and log(tau).
template <class T>
ContrastiveGrad<T> contrastive_loss_backward(const Matrix<T>& neural, const Matrix<T>& visual, T tau,
                                             const Matrix<T>& logits) {
  const std::size_t b = neural.rows();
  const T half_mean = T{0.5} / static_cast<T>(b);
  Matrix<T> d_logits(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto p = nn::softmax<T>(logits.row(i));
    for (std::size_t j = 0; j < b; ++j) d_logits(i, j) += half_mean * (p[j] - (i == j ? T{1} : T{0}));
  }
  const Matrix<T> lt = logits.transposed();
  for (std::size_t j = 0; j < b; ++j) {
    const auto p = nn::softmax<T>(lt.row(j));
    for (std::size_t i = 0; i < b; ++i) d_logits(i, j) += half_mean * (p[i] - (i == j ? T{1} : T{0}));
  }

  ContrastiveGrad<T> g{Matrix<T>(b, neural.cols()), Matrix<T>(b, visual.cols()), T{}};
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) g.d_log_tau -= d_logits(i, j) * logits(i, j);

  const auto an = normalize_rows(neural), vn = normalize_rows(visual);
  const auto a_norm = row_norms(neural), v_norm = row_norms(visual);
  Matrix<T> d_an(b, neural.cols()), d_vn(b, visual.cols());
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      const T ds = d_logits(i, j) / tau;
      for (std::size_t k = 0; k < neural.cols(); ++k) {
        d_an(i, k) += ds * vn(j, k);
        d_vn(j, k) += ds * an(i, k);
      }
    }
  auto unnormalize = [](const Matrix<T>& unit, const Matrix<T>& d_unit, const std::vector<T>& norms, Matrix<T>& out) {
    for (std::size_t r = 0; r < unit.rows(); ++r) {
      const T proj = dot<T>(unit.row(r), d_unit.row(r));
      const bool floored = norms[r] <= static_cast<T>(kNormFloor);
      for (std::size_t k = 0; k < unit.cols(); ++k)
        out(r, k) = (d_unit(r, k) - (floored ? T{} : unit(r, k) * proj)) / norms[r];
    }
  };
  unnormalize(an, d_an, a_norm, g.d_neural);
  unnormalize(vn, d_vn, v_norm, g.d_visual);
  return g;
}

// ---------------------------------------------------------------------------
// Trainable state

struct AlignmentConfig {
  std::size_t neural_input_dim = 64;
  double tau_init = 0.07;
  double tau_min = 1e-3;
  double tau_max = 1.0;

  void validate() const {
    if (neural_input_dim < 1) throw ConfigError("neural input dim must be >= 1");
    if (!(tau_min > 0.0 && tau_min <= tau_init && tau_init <= tau_max))
      throw ConfigError("temperature must satisfy 0 < tau_min <= tau_init <= tau_max");
  }
};

/// Fusion parameters, the affine neural-side encoder, and log(tau).
template <class T>
struct AlignmentModel {
  FusionParams<T> fusion;
  Matrix<T> neural_w;  // latent x neural_input
  Matrix<T> neural_b;  // latent x 1
  Matrix<T> log_tau;   // 1 x 1

  T tau() const { return std::exp(log_tau(0, 0)); }

  static AlignmentModel zeros(const FusionConfig& fc, const AlignmentConfig& ac) {
    ac.validate();
    AlignmentModel m;
    m.fusion = FusionParams<T>::zeros(fc);
    m.neural_w = Matrix<T>(fc.latent_dim, ac.neural_input_dim);
    m.neural_b = Matrix<T>(fc.latent_dim, 1);
    m.log_tau = Matrix<T>(1, 1);
    return m;
  }

  static AlignmentModel initialized(const FusionConfig& fc, const AlignmentConfig& ac, std::uint64_t seed) {
    AlignmentModel m = zeros(fc, ac);
    Rng rng(derive_seed({seed, 0x696e6974ULL}));
    m.fusion = FusionParams<T>::initialized(fc, rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(ac.neural_input_dim));
    for (T& v : m.neural_w.flat()) v = static_cast<T>(scale * rng.normal());
    m.log_tau(0, 0) = static_cast<T>(std::log(ac.tau_init));
    return m;
  }

  template <class F>
  void visit(F&& f) {
    fusion.visit(f);
    f(std::string_view("neural.w"), neural_w, true);
    f(std::string_view("neural.b"), neural_b, false);
    f(std::string_view("log_tau"), log_tau, false);
  }
  template <class F>
  void visit(F&& f) const {
    fusion.visit(f);
    f(std::string_view("neural.w"), neural_w, true);
    f(std::string_view("neural.b"), neural_b, false);
    f(std::string_view("log_tau"), log_tau, false);
  }

  void zero() {
    visit([](std::string_view, Matrix<T>& m, bool) { m.fill(T{}); });
  }
};

template <class T>
Matrix<T> encode_neural(const AlignmentModel<T>& m, const Matrix<T>& neural_inputs) {
  Matrix<T> out(neural_inputs.rows(), m.neural_w.rows());
  for (std::size_t i = 0; i < neural_inputs.rows(); ++i)
    affine<T>(m.neural_w, m.neural_b.flat(), neural_inputs.row(i), out.row(i));
  return out;
}

template <class T>
struct BatchResult {
  T loss{};
  Matrix<T> logits;
  std::vector<T> diagonal_logits;
};

/// Forward and backward over one batch. `masks[i]` is the dropout mask for
/// sample i (empty for evaluation mode). `grad` must be zero-initialized by
/// the caller with AlignmentModel::zeros of matching shape.
template <class T>
BatchResult<T> batch_loss_and_grad(const AlignmentModel<T>& model, const FusionConfig& cfg,
                                   const std::vector<Matrix<T>>& features, const Matrix<T>& neural_inputs,
                                   const std::vector<std::vector<T>>& masks, AlignmentModel<T>* grad) {
  const std::size_t b = features.size();
  expects(neural_inputs.rows() == b, "neural and visual batch sizes differ");
  expects(masks.empty() || masks.size() == b, "one dropout mask per sample required");
  std::vector<FusionTrace<T>> traces(b);
  Matrix<T> visual(b, cfg.latent_dim);
  for (std::size_t i = 0; i < b; ++i) {
    std::span<const T> mask = masks.empty() ? std::span<const T>{} : std::span<const T>(masks[i]);
    const auto latent = fusion_forward<T>(features[i], model.fusion, cfg, mask, &traces[i]);
    std::copy(latent.begin(), latent.end(), visual.row(i).begin());
  }
  const Matrix<T> neural = encode_neural(model, neural_inputs);
  const T tau = model.tau();
  auto fwd = symmetric_contrastive_loss<T>(neural, visual, tau);

  BatchResult<T> out{fwd.loss, std::move(fwd.logits), std::vector<T>(b)};
  for (std::size_t i = 0; i < b; ++i) out.diagonal_logits[i] = out.logits(i, i);
  if (!grad) return out;

  const auto g = contrastive_loss_backward<T>(neural, visual, tau, out.logits);
  grad->log_tau(0, 0) += g.d_log_tau;
  for (std::size_t i = 0; i < b; ++i) {
    affine_backward<T>(model.neural_w, neural_inputs.row(i), g.d_neural.row(i), grad->neural_w, grad->neural_b.flat(),
                       std::span<T>{});
    fusion_backward<T>(features[i], model.fusion, cfg, traces[i], g.d_visual.row(i), grad->fusion);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay, applied to weight matrices only.
template <class T>
class AdamW {
 public:
  AdamW(const AlignmentModel<T>& model, AdamWConfig cfg) : cfg_(cfg) {
    model.visit([this](std::string_view, const Matrix<T>& m, bool) {
      first_.emplace_back(m.rows(), m.cols());
      second_.emplace_back(m.rows(), m.cols());
    });
  }

  std::size_t steps() const noexcept { return step_; }

  void step(AlignmentModel<T>& model, const AlignmentModel<T>& grad) {
    ++step_;
    std::vector<const Matrix<T>*> grads;
    grad.visit([&grads](std::string_view, const Matrix<T>& g, bool) { grads.push_back(&g); });
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    std::size_t idx = 0;
    model.visit([&](std::string_view, Matrix<T>& param, bool decay) {
      auto p = param.flat();
      auto g = grads[idx]->flat();
      auto m = first_[idx].flat();
      auto v = second_[idx].flat();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = static_cast<T>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i]);
        v[i] = static_cast<T>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i]);
        const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps) + (decay ? cfg_.weight_decay * p[i] : 0.0);
        p[i] = static_cast<T>(p[i] - cfg_.learning_rate * update);
      }
      ++idx;
    });
  }

 private:
  AdamWConfig cfg_;
  std::vector<Matrix<T>> first_, second_;
  std::size_t step_ = 0;
};

}  // namespace bicap
