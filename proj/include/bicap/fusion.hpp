#pragma once

// Evidence-driven latent representation: per-view evidence and belief weights,
// an evidence-weighted pool, a softmax-attention residual branch, and a
// bottleneck purifier producing the latent visual embedding.

#include <algorithm>
#include <cmath>
#include <span>
#include <string_view>
#include <vector>

#include "bicap/core/error.hpp"
#include "bicap/core/matrix.hpp"
#include "bicap/core/random.hpp"
#include "bicap/nn/activations.hpp"

namespace bicap {

struct FusionConfig {
  std::size_t views = 4;
  std::size_t feature_dim = 64;
  std::size_t latent_dim = 64;
  std::size_t bottleneck_dim = 32;
  std::size_t evidence_hidden = 32;
  bool evidence = true;        // evidence-weighting branch on/off
  bool softplus_only = false;  // e = softplus(.) instead of exp(softplus(.))
  double dropout = 0.1;
  double epsilon = 1e-8;
  double layer_norm_eps = 1e-5;

  void validate() const {
    if (views < 1) throw ConfigError("fusion needs at least one view");
    if (feature_dim < 1 || latent_dim < 1 || bottleneck_dim < 1 || evidence_hidden < 1)
      throw ConfigError("fusion dimensions must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("fusion epsilon must be > 0");
    if (!(layer_norm_eps > 0.0)) throw ConfigError("layer-norm epsilon must be > 0");
  }

  /// The attention branch needs its own projection when it cannot be added raw.
  bool projects_attention() const noexcept { return latent_dim != feature_dim; }
};

template <class T>
struct FusionParams {
  Matrix<T> evidence_w1, evidence_b1, evidence_w2, evidence_b2;
  Matrix<T> proj_w, proj_b;
  Matrix<T> attention_w, attention_b;
  Matrix<T> attention_proj_w, attention_proj_b;
  Matrix<T> purifier_w1, purifier_b1, purifier_w2, purifier_b2;
  Matrix<T> norm_gain, norm_bias;

  /// All tensors shaped for `cfg` and zero-filled.
  static FusionParams zeros(const FusionConfig& cfg) {
    cfg.validate();
    FusionParams p;
    if (cfg.evidence) {
      p.evidence_w1 = Matrix<T>(cfg.evidence_hidden, cfg.feature_dim);
      p.evidence_b1 = Matrix<T>(cfg.evidence_hidden, 1);
      p.evidence_w2 = Matrix<T>(1, cfg.evidence_hidden);
      p.evidence_b2 = Matrix<T>(1, 1);
      p.proj_w = Matrix<T>(cfg.latent_dim, cfg.feature_dim);
      p.proj_b = Matrix<T>(cfg.latent_dim, 1);
    }
    p.attention_w = Matrix<T>(1, cfg.feature_dim);
    p.attention_b = Matrix<T>(1, 1);
    if (cfg.projects_attention()) {
      p.attention_proj_w = Matrix<T>(cfg.latent_dim, cfg.feature_dim);
      p.attention_proj_b = Matrix<T>(cfg.latent_dim, 1);
    }
    p.purifier_w1 = Matrix<T>(cfg.bottleneck_dim, cfg.latent_dim);
    p.purifier_b1 = Matrix<T>(cfg.bottleneck_dim, 1);
    p.purifier_w2 = Matrix<T>(cfg.latent_dim, cfg.bottleneck_dim);
    p.purifier_b2 = Matrix<T>(cfg.latent_dim, 1);
    p.norm_gain = Matrix<T>(cfg.latent_dim, 1);
    p.norm_bias = Matrix<T>(cfg.latent_dim, 1);
    return p;
  }

  /// Weights ~ N(0, 1/fan_in), biases 0, layer-norm gain 1.
  static FusionParams initialized(const FusionConfig& cfg, Rng& rng) {
    FusionParams p = zeros(cfg);
    auto fill = [&rng](Matrix<T>& m) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(m.cols()));
      for (T& v : m.flat()) v = static_cast<T>(scale * rng.normal());
    };
    p.visit([&](std::string_view, Matrix<T>& m, bool decay) {
      if (decay) fill(m);
    });
    p.norm_gain.fill(T{1});
    return p;
  }

  /// Calls f(name, tensor, is_weight_matrix) for every allocated tensor in a
  /// fixed order; that order is the checkpoint and optimizer order.
  template <class F>
  void visit(F&& f) {
    visit_all(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_all(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit_all(Self& s, F& f) {
    auto v = [&f](std::string_view name, auto& m, bool decay) {
      if (!m.empty()) f(name, m, decay);
    };
    v("fusion.evidence.w1", s.evidence_w1, true);
    v("fusion.evidence.b1", s.evidence_b1, false);
    v("fusion.evidence.w2", s.evidence_w2, true);
    v("fusion.evidence.b2", s.evidence_b2, false);
    v("fusion.proj.w", s.proj_w, true);
    v("fusion.proj.b", s.proj_b, false);
    v("fusion.attention.w", s.attention_w, true);
    v("fusion.attention.b", s.attention_b, false);
    v("fusion.attention_proj.w", s.attention_proj_w, true);
    v("fusion.attention_proj.b", s.attention_proj_b, false);
    v("fusion.purifier.w1", s.purifier_w1, true);
    v("fusion.purifier.b1", s.purifier_b1, false);
    v("fusion.purifier.w2", s.purifier_w2, true);
    v("fusion.purifier.b2", s.purifier_b2, false);
    v("fusion.norm.gain", s.norm_gain, false);
    v("fusion.norm.bias", s.norm_bias, false);
  }
};

// ---------------------------------------------------------------------------
// Evidence

template <class T>
struct EvidenceState {
  std::vector<T> evidence;     // e_v >= 0
  std::vector<T> strength;     // S_v = e_v + 1
  std::vector<T> uncertainty;  // u_v = 1 / S_v
  std::vector<T> belief;       // w_v = 1 - u_v
};

template <class T>
EvidenceState<T> belief_weights(std::span<const T> evidence) {
  EvidenceState<T> s;
  for (T e : evidence) {
    if (!(e >= T{0})) throw ContractViolation("evidence must be non-negative");
    const T strength = e + T{1};
    const T u = T{1} / strength;
    s.evidence.push_back(e);
    s.strength.push_back(strength);
    s.uncertainty.push_back(u);
    s.belief.push_back(T{1} - u);
  }
  return s;
}

template <class T>
struct EvidenceTrace {
  Matrix<T> hidden_pre;  // V x h, before GELU
  Matrix<T> hidden;      // V x h
  std::vector<T> logit;  // V, before softplus
  std::vector<T> evidence;
};

/// e_v = exp(softplus(w2 . gelu(W1 f_v + b1) + b2)), one shared MLP across views.
template <class T>
std::vector<T> evidence_head(const Matrix<T>& features, const FusionParams<T>& p, const FusionConfig& cfg,
                             EvidenceTrace<T>* trace = nullptr) {
  expects(!p.evidence_w1.empty(), "evidence head is disabled in this configuration");
  const std::size_t views = features.rows(), hidden = p.evidence_w1.rows();
  EvidenceTrace<T> t{Matrix<T>(views, hidden), Matrix<T>(views, hidden), std::vector<T>(views),
                     std::vector<T>(views)};
  for (std::size_t v = 0; v < views; ++v) {
    affine<T>(p.evidence_w1, p.evidence_b1.flat(), features.row(v), t.hidden_pre.row(v));
    for (std::size_t j = 0; j < hidden; ++j) t.hidden(v, j) = nn::gelu(t.hidden_pre(v, j));
    t.logit[v] = p.evidence_b2(0, 0) + dot<T>(p.evidence_w2.row(0), t.hidden.row(v));
    const T sp = nn::softplus(t.logit[v]);
    t.evidence[v] = cfg.softplus_only ? sp : std::exp(sp);
  }
  auto out = t.evidence;
  if (trace) *trace = std::move(t);
  return out;
}

namespace detail {

// Accumulation order for the pool: by weight, then by feature row. Joint
// permutations of views and weights therefore give bit-identical sums.
template <class T>
std::vector<std::size_t> canonical_view_order(const Matrix<T>& features, std::span<const T> weights) {
  std::vector<std::size_t> order(features.rows());
  for (std::size_t v = 0; v < order.size(); ++v) order[v] = v;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (weights[a] != weights[b]) return weights[a] < weights[b];
    const auto ra = features.row(a), rb = features.row(b);
    return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
  });
  return order;
}

}  // namespace detail

/// sum_v w_v f_v / (sum_v w_v + eps): the evidence pool before projection.
/// `denom_out` receives sum_v w_v + eps.
template <class T>
std::vector<T> evidence_pool(const Matrix<T>& features, std::span<const T> weights, T epsilon,
                             T* denom_out = nullptr) {
  expects(weights.size() == features.rows(), "one weight per view required");
  std::vector<T> pooled(features.cols());
  T total{};
  for (std::size_t v : detail::canonical_view_order(features, weights)) {
    total += weights[v];
    auto f = features.row(v);
    for (std::size_t j = 0; j < pooled.size(); ++j) pooled[j] += weights[v] * f[j];
  }
  const T denom = total + epsilon;
  for (T& x : pooled) x /= denom;
  if (denom_out) *denom_out = denom;
  return pooled;
}

template <class T>
std::vector<T> evidential_fuse(const Matrix<T>& features, std::span<const T> weights, const FusionParams<T>& p,
                               const FusionConfig& cfg) {
  const auto pooled = evidence_pool(features, weights, static_cast<T>(cfg.epsilon));
  std::vector<T> out(p.proj_w.rows());
  affine<T>(p.proj_w, p.proj_b.flat(), pooled, out);
  return out;
}

// ---------------------------------------------------------------------------
// Attention residual

template <class T>
std::vector<T> attention_weights(const Matrix<T>& features, const FusionParams<T>& p) {
  std::vector<T> scores(features.rows());
  for (std::size_t v = 0; v < features.rows(); ++v)
    scores[v] = p.attention_b(0, 0) + dot<T>(p.attention_w.row(0), features.row(v));
  return nn::softmax<T>(scores);
}

/// sum_v softmax(s)_v f_v, in feature space (before any attention projection).
template <class T>
std::vector<T> attention_fuse(const Matrix<T>& features, const FusionParams<T>& p) {
  const auto alpha = attention_weights(features, p);
  std::vector<T> out(features.cols());
  for (std::size_t v = 0; v < features.rows(); ++v) {
    auto f = features.row(v);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += alpha[v] * f[j];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full forward / backward

template <class T>
struct FusionTrace {
  EvidenceTrace<T> evidence;
  std::vector<T> belief;
  std::vector<T> pooled;
  T pool_denom{};
  std::vector<T> alpha;
  std::vector<T> attended;  // feature space
  std::vector<T> fused;     // F_fus
  std::vector<T> bottleneck_pre, bottleneck, expanded;
  std::vector<T> mask;
  nn::LayerNormCache<T> norm;
};

template <class T>
std::vector<T> dropout_mask(std::size_t n, double rate, Rng& rng) {
  std::vector<T> mask(n, T{1});
  if (rate <= 0.0) return mask;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (T& m : mask) m = rng.uniform01() < rate ? T{0} : keep_scale;
  return mask;
}

/// F_latent = LayerNorm(F_fus + dropout(W2 gelu(W1 F_fus + b1) + b2)).
/// The skip connection and post-normalization order live only here.
template <class T>
std::vector<T> purify(std::span<const T> fused, const FusionParams<T>& p, const FusionConfig& cfg,
                      std::span<const T> mask, FusionTrace<T>* trace) {
  const std::size_t nb = p.purifier_w1.rows(), nl = fused.size();
  std::vector<T> pre(nb), act(nb), expanded(nl), residual(nl);
  affine<T>(p.purifier_w1, p.purifier_b1.flat(), fused, pre);
  for (std::size_t i = 0; i < nb; ++i) act[i] = nn::gelu(pre[i]);
  affine<T>(p.purifier_w2, p.purifier_b2.flat(), act, expanded);
  for (std::size_t i = 0; i < nl; ++i) residual[i] = fused[i] + (mask.empty() ? T{1} : mask[i]) * expanded[i];
  nn::LayerNormCache<T> norm;
  auto out = nn::layer_norm<T>(residual, p.norm_gain.flat(), p.norm_bias.flat(),
                               static_cast<T>(cfg.layer_norm_eps), &norm);
  if (trace) {
    trace->bottleneck_pre = std::move(pre);
    trace->bottleneck = std::move(act);
    trace->expanded = std::move(expanded);
    trace->mask.assign(mask.begin(), mask.end());
    trace->norm = std::move(norm);
  }
  return out;
}

/// Full fusion forward. An empty `mask` means evaluation mode (no dropout).
template <class T>
std::vector<T> fusion_forward(const Matrix<T>& features, const FusionParams<T>& p, const FusionConfig& cfg,
                              std::span<const T> mask = {}, FusionTrace<T>* trace = nullptr) {
  if (features.rows() != cfg.views || features.cols() != cfg.feature_dim)
    throw ContractViolation("feature set shape does not match fusion configuration");
  FusionTrace<T> local;
  FusionTrace<T>& t = trace ? *trace : local;

  std::vector<T> fused(cfg.latent_dim);
  if (cfg.evidence) {
    evidence_head(features, p, cfg, &t.evidence);
    t.belief = belief_weights<T>(t.evidence.evidence).belief;
    t.pooled = evidence_pool<T>(features, t.belief, static_cast<T>(cfg.epsilon), &t.pool_denom);
    affine<T>(p.proj_w, p.proj_b.flat(), t.pooled, fused);
  }
  t.alpha = attention_weights(features, p);
  t.attended.assign(cfg.feature_dim, T{});
  for (std::size_t v = 0; v < features.rows(); ++v)
    for (std::size_t j = 0; j < cfg.feature_dim; ++j) t.attended[j] += t.alpha[v] * features(v, j);
  if (cfg.projects_attention()) {
    std::vector<T> projected(cfg.latent_dim);
    affine<T>(p.attention_proj_w, p.attention_proj_b.flat(), t.attended, projected);
    for (std::size_t j = 0; j < cfg.latent_dim; ++j) fused[j] += projected[j];
  } else {
    for (std::size_t j = 0; j < cfg.latent_dim; ++j) fused[j] += t.attended[j];
  }
  t.fused = fused;
  return purify<T>(fused, p, cfg, mask, &t);
}

/// Evaluation-mode forward with optional dropout (train_mode draws a fresh mask from rng).
template <class T>
std::vector<T> fuse_and_purify(const Matrix<T>& features, const FusionParams<T>& p, const FusionConfig& cfg,
                               bool train_mode, Rng* rng = nullptr) {
  std::vector<T> mask;
  if (train_mode) {
    expects(rng != nullptr, "train mode needs a random stream for dropout");
    mask = dropout_mask<T>(cfg.latent_dim, cfg.dropout, *rng);
  }
  return fusion_forward<T>(features, p, cfg, mask);
}

/// Accumulates parameter gradients of <d_out, F_latent> into `grad`.
/// Features are inputs of a frozen encoder and receive no gradient.
template <class T>
void fusion_backward(const Matrix<T>& features, const FusionParams<T>& p, const FusionConfig& cfg,
                     const FusionTrace<T>& t, std::span<const T> d_out, FusionParams<T>& grad) {
  const std::size_t nl = cfg.latent_dim, nb = cfg.bottleneck_dim, nd = cfg.feature_dim, nv = features.rows();

  // Layer norm and purifier.
  auto d_residual = nn::layer_norm_backward<T>(t.norm, p.norm_gain.flat(), d_out, grad.norm_gain.flat(),
                                               grad.norm_bias.flat());
  std::vector<T> d_expanded(nl);
  for (std::size_t i = 0; i < nl; ++i) d_expanded[i] = d_residual[i] * (t.mask.empty() ? T{1} : t.mask[i]);
  std::vector<T> d_act(nb);
  affine_backward<T>(p.purifier_w2, t.bottleneck, d_expanded, grad.purifier_w2, grad.purifier_b2.flat(), d_act);
  for (std::size_t i = 0; i < nb; ++i) d_act[i] *= nn::gelu_grad(t.bottleneck_pre[i]);
  std::vector<T> d_fused(nl);
  affine_backward<T>(p.purifier_w1, t.fused, d_act, grad.purifier_w1, grad.purifier_b1.flat(), d_fused);
  for (std::size_t i = 0; i < nl; ++i) d_fused[i] += d_residual[i];

  // Attention branch.
  std::vector<T> d_attended(nd);
  if (cfg.projects_attention()) {
    affine_backward<T>(p.attention_proj_w, t.attended, d_fused, grad.attention_proj_w, grad.attention_proj_b.flat(),
                       d_attended);
  } else {
    d_attended.assign(d_fused.begin(), d_fused.end());
  }
  std::vector<T> d_alpha(nv);
  T weighted{};
  for (std::size_t v = 0; v < nv; ++v) {
    d_alpha[v] = dot<T>(d_attended, features.row(v));
    weighted += t.alpha[v] * d_alpha[v];
  }
  for (std::size_t v = 0; v < nv; ++v) {
    const T d_score = t.alpha[v] * (d_alpha[v] - weighted);
    grad.attention_b(0, 0) += d_score;
    auto gw = grad.attention_w.row(0);
    auto f = features.row(v);
    for (std::size_t j = 0; j < nd; ++j) gw[j] += d_score * f[j];
  }

  if (!cfg.evidence) return;

  // Evidence branch.
  std::vector<T> d_pooled(nd);
  affine_backward<T>(p.proj_w, t.pooled, d_fused, grad.proj_w, grad.proj_b.flat(), d_pooled);
  const std::size_t nh = p.evidence_w1.rows();
  std::vector<T> d_hidden_pre(nh);
  for (std::size_t v = 0; v < nv; ++v) {
    auto f = features.row(v);
    T d_belief{};
    for (std::size_t j = 0; j < nd; ++j) d_belief += d_pooled[j] * (f[j] - t.pooled[j]);
    d_belief /= t.pool_denom;
    const T e = t.evidence.evidence[v];
    const T d_evidence = d_belief / ((e + T{1}) * (e + T{1}));
    const T sp_grad = nn::sigmoid(t.evidence.logit[v]);
    const T d_logit = d_evidence * (cfg.softplus_only ? sp_grad : e * sp_grad);
    grad.evidence_b2(0, 0) += d_logit;
    for (std::size_t j = 0; j < nh; ++j) {
      grad.evidence_w2(0, j) += d_logit * t.evidence.hidden(v, j);
      d_hidden_pre[j] = d_logit * p.evidence_w2(0, j) * nn::gelu_grad(t.evidence.hidden_pre(v, j));
    }
    affine_backward<T>(p.evidence_w1, f, d_hidden_pre, grad.evidence_w1, grad.evidence_b1.flat(), std::span<T>{});
  }
}

}  // namespace bicap
