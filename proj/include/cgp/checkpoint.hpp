#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgp/autodiff.hpp"
#include "cgp/network.hpp"

// Checkpoint container: an 8-byte magic, a JSON manifest (format version,
// model kind, architecture config, parameter count), then one record per
// parameter: name, shape, and raw float64 data. All integers and doubles are
// little-endian.
namespace cgp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

inline constexpr char kCkptMagic[8] = {'C', 'G', 'P', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCkptVersion = 1;

enum class ModelKind { cgp, mdn, dlstm };

inline const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::cgp: return "cgp";
    case ModelKind::mdn: return "mdn";
    case ModelKind::dlstm: return "dlstm";
  }
  return "?";
}

inline ModelKind model_kind_from(const std::string& s) {
  if (s == "cgp") return ModelKind::cgp;
  if (s == "mdn") return ModelKind::mdn;
  if (s == "dlstm") return ModelKind::dlstm;
  throw std::invalid_argument("unknown model kind '" + s + "' (expected cgp|mdn|dlstm)");
}

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw std::runtime_error("checkpoint: truncated file " + path);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, ModelKind kind, const NetConfig& cfg,
                            const std::vector<ad::Parameter>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kCkptMagic, sizeof(kCkptMagic));
  nlohmann::json manifest;
  manifest["version"] = kCkptVersion;
  manifest["kind"] = to_string(kind);
  manifest["num_classes"] = cfg.num_classes;
  manifest["components"] = cfg.components;
  manifest["hidden"] = cfg.hidden;
  manifest["input_dim"] = cfg.input_dim;
  manifest["params"] = params.size();
  const std::string m = manifest.dump();
  detail::write_u32(out, static_cast<std::uint32_t>(m.size()));
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& p : params) {
    detail::write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Tensor& t = p.node->value;
    detail::write_u32(out, static_cast<std::uint32_t>(t.rows()));
    detail::write_u32(out, static_cast<std::uint32_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
  ModelKind kind = ModelKind::cgp;
  NetConfig cfg;
  std::map<std::string, Tensor> arrays;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  const std::uint32_t mlen = detail::read_u32(in, path);
  std::string mtext(mlen, '\0');
  if (!in.read(mtext.data(), mlen)) throw std::runtime_error("checkpoint: truncated " + path);
  const nlohmann::json manifest = nlohmann::json::parse(mtext);
  if (manifest.at("version").get<int>() != kCkptVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " +
                             std::to_string(manifest.at("version").get<int>()));
  LoadedCheckpoint ckpt;
  ckpt.kind = model_kind_from(manifest.at("kind").get<std::string>());
  ckpt.cfg.num_classes = manifest.at("num_classes").get<int>();
  ckpt.cfg.components = manifest.at("components").get<int>();
  ckpt.cfg.hidden = manifest.at("hidden").get<int>();
  ckpt.cfg.input_dim = manifest.at("input_dim").get<int>();
  const auto n = manifest.at("params").get<std::size_t>();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t name_len = detail::read_u32(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw std::runtime_error("checkpoint: truncated " + path);
    const std::uint32_t rows = detail::read_u32(in, path);
    const std::uint32_t cols = detail::read_u32(in, path);
    Tensor t(rows, cols);
    if (!in.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double))))
      throw std::runtime_error("checkpoint: truncated array '" + name + "' in " + path);
    ckpt.arrays.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

// Copies stored arrays into an already-shaped parameter set.
inline void restore_parameters(const LoadedCheckpoint& ckpt,
                               const std::vector<ad::Parameter>& params) {
  for (const auto& p : params) {
    const auto it = ckpt.arrays.find(p.name);
    if (it == ckpt.arrays.end())
      throw std::runtime_error("checkpoint: missing array '" + p.name + "'");
    if (!it->second.same_shape(p.node->value))
      throw std::runtime_error("checkpoint: shape mismatch for '" + p.name + "': stored " +
                               it->second.shape_str() + ", model " +
                               p.node->value.shape_str());
    p.node->value = it->second;
  }
}

}  // namespace cgp
