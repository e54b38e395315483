#pragma once

// Run configuration. Every key has a default; unknown keys are errors.
// Auto-valued keys (0 or null) are resolved once at load, so the resolved
// configuration written into manifests reproduces a run exactly.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "bicap/alignment.hpp"
#include "bicap/core/binary_io.hpp"
#include "bicap/core/error.hpp"
#include "bicap/dataset.hpp"
#include "bicap/fusion.hpp"
#include "bicap/provider.hpp"
#include "bicap/regulator.hpp"
#include "bicap/transforms.hpp"

namespace bicap {

using Json = nlohmann::json;

struct RunConfig {
  std::uint64_t seed = 42;

  SyntheticDataConfig data;

  struct Transforms {
    double gamma = 1.0;
    int kernel_size = 75;
    int perturbation = 6;
    double noise_sigma = 10.0;
    Scale scale_low{1, 2};
    Scale scale_mosaic{1, 16};
    std::optional<PixelCoord> center;
  } transforms;

  struct Views {
    bool foveation = true;
    bool noise = true;
    bool low_res = true;
    bool mosaic = true;
  } views;

  struct Encoder {
    std::string provider = "synthetic";  // synthetic | bank
    std::size_t dim = 64;
    std::uint64_t seed = 7;
    std::size_t grid = 16;
  } encoder;

  struct Fusion {
    bool evidence = true;
    bool softplus_only = false;
    std::size_t evidence_hidden = 0;  // 0: feature_dim / 2
    std::size_t latent_dim = 0;       // 0: feature_dim
    std::size_t bottleneck_dim = 0;   // 0: latent_dim / 2
    double dropout = 0.1;
    double epsilon = 1e-8;
    double layer_norm_eps = 1e-5;
  } fusion;

  struct Regulation {
    bool enabled = true;  // dynamic foveation
    double momentum = 0.9;
    double alpha = 0.05;
    int kernel_min = 1;
    int kernel_max = 0;  // 0: 2 * kernel_size - 1
    std::size_t start_epoch = 1;
  } regulation;

  struct Train {
    std::size_t epochs = 150;
    std::size_t batch_size = 32;
    double learning_rate = 1e-4;
    double weight_decay = 0.01;
    double tau = 0.07;
    double tau_min = 1e-3;
    double tau_max = 1.0;
  } train;

  struct Eval {
    std::vector<std::size_t> gallery_sizes{200, 100, 50};
    std::size_t trials = 20;
    std::vector<int> kernel_sizes;  // empty: [transforms.kernel_size]
    std::string subject = "synthetic-01";
  } eval;

  struct Paths {
    std::string dataset = "data";
    std::string checkpoint;  // empty: <out>/checkpoint.bick
  } paths;

  // Derived settings ---------------------------------------------------------

  ViewSelection view_selection() const {
    return ViewSelection::from_flags(views.foveation, views.noise, views.low_res, views.mosaic);
  }

  FoveationParams foveation_params() const {
    return {transforms.center, transforms.gamma, transforms.kernel_size, transforms.perturbation};
  }

  ViewParams view_params() const { return {transforms.noise_sigma, transforms.scale_low, transforms.scale_mosaic, 0}; }

  FusionConfig fusion_config(std::size_t views_count, std::size_t feature_dim) const {
    FusionConfig fc;
    fc.views = views_count;
    fc.feature_dim = feature_dim;
    fc.latent_dim = fusion.latent_dim ? fusion.latent_dim : feature_dim;
    fc.bottleneck_dim = fusion.bottleneck_dim ? fusion.bottleneck_dim : std::max<std::size_t>(1, fc.latent_dim / 2);
    fc.evidence_hidden = fusion.evidence_hidden ? fusion.evidence_hidden : std::max<std::size_t>(1, feature_dim / 2);
    fc.evidence = fusion.evidence;
    fc.softplus_only = fusion.softplus_only;
    fc.dropout = fusion.dropout;
    fc.epsilon = fusion.epsilon;
    fc.layer_norm_eps = fusion.layer_norm_eps;
    fc.validate();
    return fc;
  }

  AlignmentConfig alignment_config(std::size_t neural_dim) const {
    AlignmentConfig ac{neural_dim, train.tau, train.tau_min, train.tau_max};
    ac.validate();
    return ac;
  }

  AdamWConfig optimizer_config() const {
    AdamWConfig oc;
    oc.learning_rate = train.learning_rate;
    oc.weight_decay = train.weight_decay;
    return oc;
  }

  RegulatorConfig regulator_config() const {
    RegulatorConfig rc;
    rc.momentum = regulation.momentum;
    rc.z = RegulatorConfig::z_for_alpha(regulation.alpha);
    rc.kernel_init = transforms.kernel_size;
    rc.perturbation = transforms.perturbation;
    rc.kernel_min = regulation.kernel_min;
    rc.kernel_max = regulation.kernel_max;
    rc.validate();
    return rc;
  }

  std::vector<int> eval_kernels() const {
    return eval.kernel_sizes.empty() ? std::vector<int>{transforms.kernel_size} : eval.kernel_sizes;
  }

  /// Fills auto values and checks cross-field constraints.
  void resolve() {
    if (regulation.kernel_max == 0) regulation.kernel_max = 2 * transforms.kernel_size - 1;
    data.validate();
    view_selection();
    if (encoder.provider != "synthetic" && encoder.provider != "bank")
      throw ConfigError("encoder.provider must be 'synthetic' or 'bank'");
    if (encoder.dim < 2) throw ConfigError("encoder.dim must be >= 2");
    if (encoder.grid < 1) throw ConfigError("encoder.grid must be >= 1");
    foveation_params().validate(data.image_size, data.image_size);
    view_params().validate(data.image_size, data.image_size);
    regulator_config();
    fusion_config(view_selection().size(), encoder.dim);
    alignment_config(data.neural_dim);
    if (train.batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
    if (!(train.learning_rate >= 0.0) || !(train.weight_decay >= 0.0))
      throw ConfigError("learning rate and weight decay must be >= 0");
    if (eval.trials < 1) throw ConfigError("eval.trials must be >= 1");
    for (int k : eval_kernels())
      if (k < 1 || k % 2 == 0) throw ConfigError("eval.kernel_sizes must be odd and >= 1");
  }
};

namespace detail {

/// Walks a JSON object, records consumed keys, and reports leftovers.
class Section {
 public:
  Section(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + qualify(it.key()) + "'");
  }

  template <class V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + qualify(key) + "' has the wrong type");
    }
  }

  void read(const char* key, Scale& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number_integer() || !(*it)[1].is_number_integer())
      throw ConfigError("config key '" + qualify(key) + "' must be [numerator, denominator]");
    out = {(*it)[0].get<int>(), (*it)[1].get<int>()};
  }

  void read(const char* key, std::optional<PixelCoord>& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number())
      throw ConfigError("config key '" + qualify(key) + "' must be [row, col] or null");
    out = PixelCoord{(*it)[0].get<double>(), (*it)[1].get<double>()};
  }

  Section sub(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return Section(it == obj_.end() ? empty() : *it, qualify(key));
  }

 private:
  static const Json& empty() {
    static const Json e = Json::object();
    return e;
  }
  std::string qualify(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig config_from_json(const Json& root) {
  RunConfig c;
  {
    detail::Section s(root, "");
    s.read("seed", c.seed);
    {
      auto d = s.sub("data");
      d.read("classes", c.data.classes);
      d.read("test_classes", c.data.test_classes);
      d.read("train_per_class", c.data.train_per_class);
      d.read("test_per_class", c.data.test_per_class);
      d.read("image_size", c.data.image_size);
      d.read("neural_dim", c.data.neural_dim);
      d.read("neural_noise", c.data.neural_noise);
      d.read("bank_levels", c.data.bank_levels);
    }
    {
      auto t = s.sub("transforms");
      t.read("gamma", c.transforms.gamma);
      t.read("kernel_size", c.transforms.kernel_size);
      t.read("perturbation", c.transforms.perturbation);
      t.read("noise_sigma", c.transforms.noise_sigma);
      t.read("scale_low", c.transforms.scale_low);
      t.read("scale_mosaic", c.transforms.scale_mosaic);
      t.read("center", c.transforms.center);
    }
    {
      auto v = s.sub("views");
      v.read("foveation", c.views.foveation);
      v.read("noise", c.views.noise);
      v.read("low_res", c.views.low_res);
      v.read("mosaic", c.views.mosaic);
    }
    {
      auto e = s.sub("encoder");
      e.read("provider", c.encoder.provider);
      e.read("dim", c.encoder.dim);
      e.read("seed", c.encoder.seed);
      e.read("grid", c.encoder.grid);
    }
    {
      auto f = s.sub("fusion");
      f.read("evidence", c.fusion.evidence);
      f.read("softplus_only", c.fusion.softplus_only);
      f.read("evidence_hidden", c.fusion.evidence_hidden);
      f.read("latent_dim", c.fusion.latent_dim);
      f.read("bottleneck_dim", c.fusion.bottleneck_dim);
      f.read("dropout", c.fusion.dropout);
      f.read("epsilon", c.fusion.epsilon);
      f.read("layer_norm_eps", c.fusion.layer_norm_eps);
    }
    {
      auto r = s.sub("regulation");
      r.read("enabled", c.regulation.enabled);
      r.read("momentum", c.regulation.momentum);
      r.read("alpha", c.regulation.alpha);
      r.read("kernel_min", c.regulation.kernel_min);
      r.read("kernel_max", c.regulation.kernel_max);
      r.read("start_epoch", c.regulation.start_epoch);
    }
    {
      auto t = s.sub("train");
      t.read("epochs", c.train.epochs);
      t.read("batch_size", c.train.batch_size);
      t.read("learning_rate", c.train.learning_rate);
      t.read("weight_decay", c.train.weight_decay);
      t.read("tau", c.train.tau);
      t.read("tau_min", c.train.tau_min);
      t.read("tau_max", c.train.tau_max);
    }
    {
      auto e = s.sub("eval");
      e.read("gallery_sizes", c.eval.gallery_sizes);
      e.read("trials", c.eval.trials);
      e.read("kernel_sizes", c.eval.kernel_sizes);
      e.read("subject", c.eval.subject);
    }
    {
      auto p = s.sub("paths");
      p.read("dataset", c.paths.dataset);
      p.read("checkpoint", c.paths.checkpoint);
    }
  }
  c.resolve();
  return c;
}

inline Json config_to_json(const RunConfig& c) {
  Json center = c.transforms.center ? Json::array({c.transforms.center->row, c.transforms.center->col}) : Json(nullptr);
  return {
      {"seed", c.seed},
      {"data",
       {{"classes", c.data.classes},
        {"test_classes", c.data.test_classes},
        {"train_per_class", c.data.train_per_class},
        {"test_per_class", c.data.test_per_class},
        {"image_size", c.data.image_size},
        {"neural_dim", c.data.neural_dim},
        {"neural_noise", c.data.neural_noise},
        {"bank_levels", c.data.bank_levels}}},
      {"transforms",
       {{"gamma", c.transforms.gamma},
        {"kernel_size", c.transforms.kernel_size},
        {"perturbation", c.transforms.perturbation},
        {"noise_sigma", c.transforms.noise_sigma},
        {"scale_low", {c.transforms.scale_low.num, c.transforms.scale_low.den}},
        {"scale_mosaic", {c.transforms.scale_mosaic.num, c.transforms.scale_mosaic.den}},
        {"center", center}}},
      {"views",
       {{"foveation", c.views.foveation},
        {"noise", c.views.noise},
        {"low_res", c.views.low_res},
        {"mosaic", c.views.mosaic}}},
      {"encoder",
       {{"provider", c.encoder.provider}, {"dim", c.encoder.dim}, {"seed", c.encoder.seed}, {"grid", c.encoder.grid}}},
      {"fusion",
       {{"evidence", c.fusion.evidence},
        {"softplus_only", c.fusion.softplus_only},
        {"evidence_hidden", c.fusion.evidence_hidden},
        {"latent_dim", c.fusion.latent_dim},
        {"bottleneck_dim", c.fusion.bottleneck_dim},
        {"dropout", c.fusion.dropout},
        {"epsilon", c.fusion.epsilon},
        {"layer_norm_eps", c.fusion.layer_norm_eps}}},
      {"regulation",
       {{"enabled", c.regulation.enabled},
        {"momentum", c.regulation.momentum},
        {"alpha", c.regulation.alpha},
        {"kernel_min", c.regulation.kernel_min},
        {"kernel_max", c.regulation.kernel_max},
        {"start_epoch", c.regulation.start_epoch}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"weight_decay", c.train.weight_decay},
        {"tau", c.train.tau},
        {"tau_min", c.train.tau_min},
        {"tau_max", c.train.tau_max}}},
      {"eval",
       {{"gallery_sizes", c.eval.gallery_sizes},
        {"trials", c.eval.trials},
        {"kernel_sizes", c.eval.kernel_sizes},
        {"subject", c.eval.subject}}},
      {"paths", {{"dataset", c.paths.dataset}, {"checkpoint", c.paths.checkpoint}}},
  };
}

/// Accepts a plain config or a run manifest (whose "config" member is used).
inline RunConfig load_config(const std::string& path) {
  Json j;
  try {
    j = Json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config " + path + ": " + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  if (j.is_object() && j.contains("bicap_manifest")) {
    if (!j.contains("config")) throw ConfigError("manifest " + path + " has no config member");
    return config_from_json(j.at("config"));
  }
  return config_from_json(j);
}

/// FNV-1a over the canonical JSON dump.
inline std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// The incremental ablation ladder: static-blur baseline, then dynamic
/// foveation, + noise, + low resolution, + mosaic, + evidence weighting.
struct AblationStep {
  std::string name;
  RunConfig config;
};

inline std::vector<AblationStep> ablation_ladder(const RunConfig& base) {
  RunConfig c = base;
  c.views = {true, false, false, false};
  c.fusion.evidence = false;
  c.regulation.enabled = false;
  std::vector<AblationStep> steps{{"baseline", c}};
  c.regulation.enabled = true;
  steps.push_back({"dyn", c});
  c.views.noise = true;
  steps.push_back({"dyn+noise", c});
  c.views.low_res = true;
  steps.push_back({"dyn+noise+res", c});
  c.views.mosaic = true;
  steps.push_back({"dyn+noise+res+mos", c});
  c.fusion.evidence = true;
  steps.push_back({"dyn+noise+res+mos+el", c});
  for (auto& s : steps) s.config.resolve();
  return steps;
}

}  // namespace bicap
