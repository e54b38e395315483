#pragma once

// Checkpoint file ("BICK"):
//
//   "BICK" | u32 version | u32 manifest_len | manifest (UTF-8 JSON) | tensors
//
// The manifest lists {name, rows, cols} for every tensor; tensors follow in
// that order as little-endian float32, row-major.

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "bicap/alignment.hpp"
#include "bicap/core/binary_io.hpp"
#include "bicap/core/error.hpp"
#include "bicap/core/matrix.hpp"

namespace bicap {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix<float> value;
};

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<NamedTensor> tensors;
};

/// `manifest` is extended with the tensor table.
template <class T>
std::string serialize_checkpoint(const AlignmentModel<T>& model, nlohmann::json manifest) {
  auto& table = manifest["tensors"] = nlohmann::json::array();
  std::string payload;
  model.visit([&](std::string_view name, const Matrix<T>& m, bool) {
    table.push_back({{"name", std::string(name)}, {"rows", m.rows()}, {"cols", m.cols()}});
    for (T v : m.flat()) io::put_f32(payload, static_cast<float>(v));
  });
  const std::string text = manifest.dump();
  std::string out = "BICK";
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(text.size()));
  io::put_bytes(out, text);
  io::put_bytes(out, payload);
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  io::Reader in(bytes);
  if (in.take(4, "checkpoint magic") != "BICK") throw FormatError("bad checkpoint magic");
  if (const auto v = in.u32("checkpoint version"); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  const auto len = in.u32("checkpoint manifest length");
  Checkpoint ck;
  try {
    ck.manifest = nlohmann::json::parse(in.take(len, "checkpoint manifest"));
    for (const auto& t : ck.manifest.at("tensors")) {
      NamedTensor nt{t.at("name").get<std::string>(),
                     Matrix<float>(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>())};
      for (float& v : nt.value.flat()) {
        v = in.f32("checkpoint tensor");
        if (!std::isfinite(v)) throw FormatError("checkpoint tensor " + nt.name + " holds a non-finite value");
      }
      ck.tensors.push_back(std::move(nt));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after checkpoint tensors");
  return ck;
}

template <class T>
void write_checkpoint(const std::string& path, const AlignmentModel<T>& model, const nlohmann::json& manifest) {
  io::write_file(path, serialize_checkpoint(model, manifest));
}

inline Checkpoint read_checkpoint(const std::string& path) { return deserialize_checkpoint(io::read_file(path)); }

/// Copies checkpoint tensors into a model built from the current config.
/// Name or shape disagreements are configuration errors naming both shapes.
template <class T>
void load_parameters(const Checkpoint& ck, AlignmentModel<T>& model) {
  std::size_t idx = 0;
  model.visit([&](std::string_view name, Matrix<T>& m, bool) {
    if (idx >= ck.tensors.size())
      throw ConfigError("checkpoint lacks tensor " + std::string(name) + " required by the config");
    const auto& src = ck.tensors[idx++];
    if (src.name != name)
      throw ConfigError("checkpoint tensor " + src.name + " found where config expects " + std::string(name));
    if (src.value.rows() != m.rows() || src.value.cols() != m.cols())
      throw ConfigError("dimension mismatch for " + src.name + ": checkpoint " + std::to_string(src.value.rows()) + "x" +
                        std::to_string(src.value.cols()) + ", config " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()));
    for (std::size_t i = 0; i < m.size(); ++i) m.flat()[i] = static_cast<T>(src.value.flat()[i]);
  });
  if (idx != ck.tensors.size()) throw ConfigError("checkpoint holds tensors the config does not use");
}

}  // namespace bicap
