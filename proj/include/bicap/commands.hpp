#pragma once

// Command implementations behind the bicap CLI. Each command resolves its
// config, writes a manifest with that config next to its outputs, and
// reports failures through the typed errors in core/error.hpp.

#include <charconv>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bicap/checkpoint.hpp"
#include "bicap/config.hpp"
#include "bicap/dataset.hpp"
#include "bicap/retrieval.hpp"
#include "bicap/training.hpp"

namespace bicap {

namespace fs = std::filesystem;

struct CommandOptions {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::optional<std::string> out;
  std::string input;          // transform only
  std::ostream* log = nullptr;  // progress lines, off when null
};

/// Shortest round-trip text for a double; stable across runs.
inline std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline RunConfig resolve_config(const CommandOptions& opt) {
  RunConfig cfg = opt.config_path ? load_config(*opt.config_path) : config_from_json(Json::object());
  if (opt.seed) cfg.seed = *opt.seed;
  cfg.resolve();
  return cfg;
}

inline Json run_manifest(const RunConfig& cfg, std::string_view command) {
  return {{"bicap_manifest", 1},
          {"command", std::string(command)},
          {"seed", cfg.seed},
          {"config_hash", config_hash(cfg)},
          {"config", config_to_json(cfg)}};
}

namespace detail {

inline void claim_output(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) throw ConfigError(file.string() + " exists (use --force to overwrite)");
}

inline void write_json(const fs::path& file, const Json& j) { io::write_file(file.string(), j.dump(2) + "\n"); }

inline void log_line(const CommandOptions& opt, const std::string& line) {
  if (opt.log) *opt.log << line << '\n' << std::flush;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// generate

inline fs::path cmd_generate(const CommandOptions& opt) {
  const RunConfig cfg = resolve_config(opt);
  const fs::path dir = opt.out ? fs::path(*opt.out) : fs::path(cfg.paths.dataset);
  detail::claim_output(dir / "bank.bicp", opt.force);
  const SyntheticEncoder encoder(3, cfg.encoder.dim, cfg.encoder.seed, cfg.encoder.grid);
  const auto data = generate_synthetic_dataset(cfg.data, encoder, cfg.foveation_params(), cfg.view_params(), cfg.seed);
  save_dataset(dir, data);
  Json manifest = run_manifest(cfg, "generate");
  manifest["samples"] = data.bank.sample_count();
  detail::write_json(dir / "generate.manifest.json", manifest);
  detail::log_line(opt, "generated " + std::to_string(data.bank.sample_count()) + " samples in " + dir.string());
  return dir;
}

// ---------------------------------------------------------------------------
// transform

inline fs::path cmd_transform(const CommandOptions& opt) {
  const RunConfig cfg = resolve_config(opt);
  if (opt.input.empty()) throw ConfigError("transform needs an input pixmap");
  const Image image = read_ppm(opt.input);
  const auto fov = cfg.foveation_params();
  ViewParams vp = cfg.view_params();
  fov.validate(image.height(), image.width());
  vp.validate(image.height(), image.width());
  vp.noise_seed = derive_seed({cfg.seed, 0, kEvalEpoch});
  const fs::path dir = opt.out ? fs::path(*opt.out) : fs::path("views");
  fs::create_directories(dir);
  const auto stack = build_view_stack(image, fov, vp);
  for (std::size_t v = 0; v < stack.size(); ++v) {
    const fs::path file = dir / (std::string(view_name(kAllViews[v])) + ".ppm");
    detail::claim_output(file, opt.force);
    write_ppm(file.string(), stack[v]);
  }
  Json manifest = run_manifest(cfg, "transform");
  manifest["input"] = opt.input;
  detail::write_json(dir / "transform.manifest.json", manifest);
  return dir;
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  fs::path checkpoint;
  std::vector<EpochReport> epochs;
};

inline Json checkpoint_manifest(const RunConfig& cfg, const FusionConfig& fc, std::size_t neural_dim) {
  Json m = run_manifest(cfg, "train");
  Json names = Json::array();
  for (auto kind : cfg.view_selection().kinds) names.push_back(std::string(view_name(kind)));
  m["views"] = fc.views;
  m["view_names"] = names;
  m["feature_dim"] = fc.feature_dim;
  m["latent_dim"] = fc.latent_dim;
  m["neural_dim"] = neural_dim;
  return m;
}

inline fs::path default_checkpoint(const RunConfig& cfg, const fs::path& out) {
  return cfg.paths.checkpoint.empty() ? out / "checkpoint.bick" : fs::path(cfg.paths.checkpoint);
}

inline TrainOutcome train_run(const RunConfig& cfg, const fs::path& out, const CommandOptions& opt) {
  const auto data = load_dataset(cfg.paths.dataset, cfg.encoder.provider == "synthetic");
  auto provider = make_provider(cfg, data);
  const FusionConfig fc = fusion_config_for(cfg, provider);
  const std::size_t neural_dim = data.bank->neural_dim();
  auto model = AlignmentModel<double>::initialized(fc, cfg.alignment_config(neural_dim), cfg.seed);

  TrainOutcome outcome{default_checkpoint(cfg, out), {}};
  for (const auto& file : {outcome.checkpoint, out / "metrics.csv", out / "kernel_histogram.csv"})
    detail::claim_output(file, opt.force);
  fs::create_directories(out);

  std::string metrics = "epoch,loss,mean_smoothed_sim,kernel_min,kernel_mean,kernel_max,T_lower,T_upper\n";
  std::string histogram = "epoch,kernel,count\n";
  Trainer trainer(cfg, data, provider, model);
  try {
    for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
      auto r = trainer.run_epoch(e);
      metrics += std::to_string(e) + ',' + format_number(r.loss) + ',' + format_number(r.mean_smoothed) + ',' +
                 std::to_string(r.kernel_min) + ',' + format_number(r.kernel_mean) + ',' +
                 std::to_string(r.kernel_max) + ',' + format_number(r.t_lower) + ',' + format_number(r.t_upper) +
                 '\n';
      for (const auto& [k, count] : r.kernel_histogram)
        histogram += std::to_string(e) + ',' + std::to_string(k) + ',' + std::to_string(count) + '\n';
      detail::log_line(opt, "epoch " + std::to_string(e) + " loss " + format_number(r.loss) + " kernel mean " +
                                format_number(r.kernel_mean));
      outcome.epochs.push_back(std::move(r));
    }
  } catch (const NumericError& err) {
    io::write_file((out / "metrics.csv").string(), metrics);
    io::write_file((out / "diagnostic.json").string(), err.diagnostic() + "\n");
    throw;
  }
  io::write_file((out / "metrics.csv").string(), metrics);
  io::write_file((out / "kernel_histogram.csv").string(), histogram);
  const Json manifest = checkpoint_manifest(cfg, fc, neural_dim);
  write_checkpoint(outcome.checkpoint.string(), model, manifest);
  detail::write_json(out / "train.manifest.json", manifest);
  return outcome;
}

inline TrainOutcome cmd_train(const CommandOptions& opt) {
  const RunConfig cfg = resolve_config(opt);
  return train_run(cfg, opt.out ? fs::path(*opt.out) : fs::path("run"), opt);
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalRow {
  std::size_t n = 0;
  int kernel = 0;
  EvalReport report;
};

inline std::vector<EvalRow> evaluate_run(const RunConfig& cfg, const fs::path& out, const CommandOptions& opt) {
  const auto data = load_dataset(cfg.paths.dataset, cfg.encoder.provider == "synthetic");
  auto provider = make_provider(cfg, data);
  const FusionConfig fc = fusion_config_for(cfg, provider);
  auto model = AlignmentModel<double>::zeros(fc, cfg.alignment_config(data.bank->neural_dim()));
  const fs::path ck_path = default_checkpoint(cfg, out);
  if (!fs::exists(ck_path)) throw ConfigError("no checkpoint at " + ck_path.string());
  load_parameters(read_checkpoint(ck_path.string()), model);
  for (const auto& file : {out / "eval.csv", out / "eval_summary.json"}) detail::claim_output(file, opt.force);

  for (std::size_t n : cfg.eval.gallery_sizes)
    if (n > data.test_ids.size())
      throw ConfigError("gallery size " + std::to_string(n) + " exceeds the " + std::to_string(data.test_ids.size()) +
                        " test items");

  std::vector<EvalRow> rows;
  for (int kernel : cfg.eval_kernels()) {
    const auto sim = test_similarity(model, fc, provider, data, kernel);
    for (std::size_t n : cfg.eval.gallery_sizes)
      rows.push_back({n, kernel, nway_evaluate(sim, n, cfg.eval.trials, cfg.seed)});
  }

  std::string csv = "subject,n,kernel,seed,trials,top1,top5,map,similarity\n";
  Json summary = run_manifest(cfg, "evaluate");
  summary["checkpoint"] = ck_path.string();
  auto& results = summary["results"] = Json::array();
  for (const auto& r : rows) {
    const auto& e = r.report;
    csv += cfg.eval.subject + ',' + std::to_string(r.n) + ',' + std::to_string(r.kernel) + ',' +
           std::to_string(e.seed) + ',' + std::to_string(e.trials) + ',' + format_number(e.top1) + ',' +
           format_number(e.top5) + ',' + format_number(e.map) + ',' + format_number(e.similarity) + '\n';
    results.push_back({{"n", r.n},
                       {"kernel", r.kernel},
                       {"top1", e.top1},
                       {"top5", e.top5},
                       {"map", e.map},
                       {"similarity", e.similarity}});
    detail::log_line(opt, std::to_string(r.n) + "-way k=" + std::to_string(r.kernel) + " top1 " +
                              format_number(e.top1) + " top5 " + format_number(e.top5));
  }
  fs::create_directories(out);
  io::write_file((out / "eval.csv").string(), csv);
  detail::write_json(out / "eval_summary.json", summary);
  return rows;
}

inline std::vector<EvalRow> cmd_evaluate(const CommandOptions& opt) {
  const RunConfig cfg = resolve_config(opt);
  return evaluate_run(cfg, opt.out ? fs::path(*opt.out) : fs::path("run"), opt);
}

// ---------------------------------------------------------------------------
// report: the incremental ablation ladder, one train+evaluate run per step

struct AblationResult {
  std::string name;
  fs::path dir;
  std::string config_hash;
  std::vector<EvalRow> rows;
};

inline std::vector<AblationResult> cmd_report(const CommandOptions& opt) {
  const RunConfig base = resolve_config(opt);
  const fs::path out = opt.out ? fs::path(*opt.out) : fs::path("report");
  detail::claim_output(out / "ablation.csv", opt.force);
  std::vector<AblationResult> results;
  for (const auto& step : ablation_ladder(base)) {
    const fs::path dir = out / step.name;
    RunConfig cfg = step.config;
    cfg.paths.checkpoint.clear();
    detail::log_line(opt, "ablation step " + step.name);
    train_run(cfg, dir, opt);
    results.push_back({step.name, dir, config_hash(cfg), evaluate_run(cfg, dir, opt)});
  }
  std::string csv = "step,config_hash,n,kernel,top1,top5,map,similarity\n";
  for (const auto& r : results)
    for (const auto& row : r.rows)
      csv += r.name + ',' + r.config_hash + ',' + std::to_string(row.n) + ',' + std::to_string(row.kernel) + ',' +
             format_number(row.report.top1) + ',' + format_number(row.report.top5) + ',' +
             format_number(row.report.map) + ',' + format_number(row.report.similarity) + '\n';
  io::write_file((out / "ablation.csv").string(), csv);
  detail::write_json(out / "report.manifest.json", run_manifest(base, "report"));
  return results;
}

}  // namespace bicap
