#pragma once

// Embedding bank file ("BICP"): precomputed per-view visual features at a set
// of blur-kernel levels, paired neural vectors, labels and split tags.
//
//   "BICP" | u32 version | u32 header_len | header (UTF-8 JSON) | payload
//
// Payload is little-endian float32 in declared order: for each sample, for
// each kernel level a V x d_v row-major block, then the d_n neural vector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "bicap/core/binary_io.hpp"
#include "bicap/core/error.hpp"
#include "bicap/core/matrix.hpp"
#include "bicap/features.hpp"

namespace bicap {

enum class Split { train, test };

inline std::string split_name(Split s) { return s == Split::train ? "train" : "test"; }

class EmbeddingBank {
 public:
  static constexpr std::uint32_t kVersion = 1;

  EmbeddingBank() = default;
  EmbeddingBank(std::size_t views, std::size_t dim, std::vector<int> kernel_levels, std::size_t neural_dim)
      : views_(views), dim_(dim), neural_dim_(neural_dim), kernel_levels_(std::move(kernel_levels)) {
    validate_levels(kernel_levels_);
  }

  std::size_t sample_count() const noexcept { return labels_.size(); }
  std::size_t views() const noexcept { return views_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t neural_dim() const noexcept { return neural_dim_; }
  const std::vector<int>& kernel_levels() const noexcept { return kernel_levels_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::vector<Split>& splits() const noexcept { return splits_; }

  /// Appends a sample. `per_level` holds one V x d_v matrix per kernel level.
  void add_sample(const std::vector<ViewFeatureSet>& per_level, std::span<const double> neural, int label,
                  Split split) {
    expects(per_level.size() == kernel_levels_.size(), "one feature set per kernel level required");
    expects(neural.size() == neural_dim_, "neural vector has wrong dimension");
    for (const auto& f : per_level) {
      expects(f.rows() == views_ && f.cols() == dim_, "feature set has wrong shape");
      for (double v : f.flat()) features_.push_back(static_cast<float>(v));
    }
    for (double v : neural) neural_.push_back(static_cast<float>(v));
    labels_.push_back(label);
    splits_.push_back(split);
  }

  ViewFeatureSet features(std::size_t sample, std::size_t level_index) const {
    expects(sample < sample_count() && level_index < kernel_levels_.size(), "bank index out of range");
    ViewFeatureSet out(views_, dim_);
    const std::size_t block = views_ * dim_;
    const std::size_t offset = (sample * kernel_levels_.size() + level_index) * block;
    for (std::size_t i = 0; i < block; ++i) out.flat()[i] = features_[offset + i];
    return out;
  }

  std::vector<double> neural(std::size_t sample) const {
    expects(sample < sample_count(), "bank index out of range");
    return {neural_.begin() + static_cast<long>(sample * neural_dim_),
            neural_.begin() + static_cast<long>((sample + 1) * neural_dim_)};
  }

  /// Index of the level nearest to `kernel`, ties resolved upward. A request
  /// outside [min, max] clamps to the end level and reports out_of_range.
  struct LevelChoice {
    std::size_t index;
    bool out_of_range;
  };
  LevelChoice select_level(int kernel) const {
    if (kernel < kernel_levels_.front()) return {0, true};
    if (kernel > kernel_levels_.back()) return {kernel_levels_.size() - 1, true};
    std::size_t best = 0;
    for (std::size_t i = 1; i < kernel_levels_.size(); ++i) {
      const int d_best = std::abs(kernel - kernel_levels_[best]);
      const int d_i = std::abs(kernel - kernel_levels_[i]);
      if (d_i <= d_best) best = i;  // levels ascend, so "<=" prefers the larger level on ties
    }
    return {best, false};
  }

  /// Throws ProtocolError when a class label occurs in both splits.
  void check_zero_shot() const {
    std::set<int> train, test;
    for (std::size_t i = 0; i < sample_count(); ++i) (splits_[i] == Split::train ? train : test).insert(labels_[i]);
    for (int c : test)
      if (train.count(c)) throw ProtocolError("class " + std::to_string(c) + " appears in both train and test splits");
  }

  std::string serialize() const {
    nlohmann::json header = {{"sample_count", sample_count()}, {"views", views_},
                             {"dim", dim_},                    {"kernel_levels", kernel_levels_},
                             {"neural_dim", neural_dim_},      {"labels", labels_}};
    auto& splits = header["splits"] = nlohmann::json::array();
    for (Split s : splits_) splits.push_back(split_name(s));
    const std::string text = header.dump();

    std::string out = "BICP";
    io::put_u32(out, kVersion);
    io::put_u32(out, static_cast<std::uint32_t>(text.size()));
    io::put_bytes(out, text);
    const std::size_t block = kernel_levels_.size() * views_ * dim_;
    for (std::size_t s = 0; s < sample_count(); ++s) {
      for (std::size_t i = 0; i < block; ++i) io::put_f32(out, features_[s * block + i]);
      for (std::size_t i = 0; i < neural_dim_; ++i) io::put_f32(out, neural_[s * neural_dim_ + i]);
    }
    return out;
  }

  static EmbeddingBank deserialize(std::string_view bytes) {
    io::Reader in(bytes);
    if (bytes.empty()) throw FormatError("embedding bank is empty");
    if (in.take(4, "bank magic") != "BICP") throw FormatError("bad embedding bank magic");
    if (const auto v = in.u32("bank version"); v != kVersion)
      throw FormatError("unsupported embedding bank version " + std::to_string(v));
    const auto header_len = in.u32("bank header length");
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(in.take(header_len, "bank header"));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed bank header: ") + e.what());
    }

    EmbeddingBank bank;
    std::size_t count = 0;
    std::vector<std::string> splits;
    try {
      count = header.at("sample_count").get<std::size_t>();
      bank.views_ = header.at("views").get<std::size_t>();
      bank.dim_ = header.at("dim").get<std::size_t>();
      bank.neural_dim_ = header.at("neural_dim").get<std::size_t>();
      bank.kernel_levels_ = header.at("kernel_levels").get<std::vector<int>>();
      bank.labels_ = header.at("labels").get<std::vector<int>>();
      splits = header.at("splits").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bank header missing or mistyped field: ") + e.what());
    }
    if (bank.views_ < 1 || bank.dim_ < 1 || bank.neural_dim_ < 1) throw FormatError("bank dimensions must be >= 1");
    try {
      validate_levels(bank.kernel_levels_);
    } catch (const ConfigError& e) {
      throw FormatError(e.what());
    }
    if (bank.labels_.size() != count || splits.size() != count)
      throw FormatError("bank labels/splits do not match sample_count");
    for (const auto& s : splits) {
      if (s == "train") bank.splits_.push_back(Split::train);
      else if (s == "test") bank.splits_.push_back(Split::test);
      else throw FormatError("unknown split tag '" + s + "'");
    }

    const std::size_t block = bank.kernel_levels_.size() * bank.views_ * bank.dim_;
    const std::size_t expected = count * (block + bank.neural_dim_) * 4;
    if (in.remaining() != expected)
      throw FormatError("bank payload has " + std::to_string(in.remaining()) + " bytes, expected " +
                        std::to_string(expected) + " (missing kernel levels or truncated file)");
    bank.features_.reserve(count * block);
    bank.neural_.reserve(count * bank.neural_dim_);
    for (std::size_t s = 0; s < count; ++s) {
      for (std::size_t i = 0; i < block; ++i) bank.features_.push_back(finite(in.f32("bank features")));
      for (std::size_t i = 0; i < bank.neural_dim_; ++i) bank.neural_.push_back(finite(in.f32("bank neural")));
    }
    bank.check_zero_shot();
    return bank;
  }

  void save(const std::string& path) const { io::write_file(path, serialize()); }

 private:
  static float finite(float v) {
    if (!std::isfinite(v)) throw FormatError("bank payload contains NaN or Inf");
    return v;
  }

  static void validate_levels(const std::vector<int>& levels) {
    if (levels.empty()) throw ConfigError("bank needs at least one kernel level");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i] < 1 || levels[i] % 2 == 0) throw ConfigError("kernel levels must be odd and >= 1");
      if (i > 0 && levels[i] <= levels[i - 1]) throw ConfigError("kernel levels must be strictly increasing");
    }
  }

  std::size_t views_ = 0;
  std::size_t dim_ = 0;
  std::size_t neural_dim_ = 0;
  std::vector<int> kernel_levels_;
  std::vector<float> features_;
  std::vector<float> neural_;
  std::vector<int> labels_;
  std::vector<Split> splits_;
};

inline EmbeddingBank load_embedding_bank(const std::string& path) {
  return EmbeddingBank::deserialize(io::read_file(path));
}

}  // namespace bicap
