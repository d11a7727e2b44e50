#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgp/data.hpp"
#include "cgp/rng.hpp"

// Synthetic bifurcating-trajectory generator. Classes are polyline templates;
// instances are the template resampled to a fixed length, jittered with
// Gaussian noise, then normalized. Templates that share an initial segment
// give the dataset an inter-class bifurcation whose ground-truth timestep is
// recorded alongside the data.
namespace cgp {

struct SynthClassSpec {
  std::string name;
  std::vector<Point> points;  // template polyline
  int count = 0;              // instances to generate
  double jitter = 0.0;        // per-point Gaussian sigma
};

struct SynthConfig {
  std::vector<SynthClassSpec> classes;
  int length = 50;
};

// References are the zero-jitter instances (template resampled + normalized);
// first_divergence_step is the 0-based index where the closest template pair
// stops coinciding.
struct SynthMeta {
  std::vector<std::string> class_names;
  std::vector<std::vector<Point>> references;
  int first_divergence_step = 0;
  int length = 50;
};

inline SynthConfig load_synth_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_synth_config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  SynthConfig cfg;
  cfg.length = j.value("length", 50);
  for (const auto& c : j.at("classes")) {
    SynthClassSpec spec;
    spec.name = c.at("name").get<std::string>();
    spec.count = c.at("count").get<int>();
    spec.jitter = c.value("jitter", 0.0);
    for (const auto& p : c.at("template"))
      spec.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    cfg.classes.push_back(std::move(spec));
  }
  return cfg;
}

namespace detail {

inline int shared_prefix_len(const std::vector<Point>& a, const std::vector<Point>& b,
                             double eps = 1e-9) {
  int n = 0;
  const std::size_t len = std::min(a.size(), b.size());
  while (static_cast<std::size_t>(n) < len &&
         std::fabs(a[n][0] - b[n][0]) <= eps && std::fabs(a[n][1] - b[n][1]) <= eps)
    ++n;
  return n;
}

}  // namespace detail

// Generates count instances per class. Deterministic under seed; every
// instance draws from a stream derived from (seed, class, instance).
inline std::vector<TrajectorySample> synth_generate(const SynthConfig& cfg, std::uint64_t seed,
                                                    SynthMeta* meta = nullptr) {
  if (cfg.classes.size() < 2)
    throw std::invalid_argument("synth_generate: need at least 2 classes");
  const Rng root(seed);

  std::vector<std::vector<Point>> references;
  for (const auto& spec : cfg.classes) {
    if (spec.points.size() < 2)
      throw std::invalid_argument("synth_generate: template for class '" + spec.name +
                                  "' needs at least 2 points");
    TrajectorySample t;
    t.id = spec.name;
    t.coords = spec.points;
    references.push_back(normalize(resample_time(t, cfg.length)).coords);
  }

  // Bifurcation pair: the pair with the longest shared reference prefix.
  int best_shared = 0;
  for (std::size_t a = 0; a < references.size(); ++a)
    for (std::size_t b = a + 1; b < references.size(); ++b)
      best_shared = std::max(best_shared,
                             detail::shared_prefix_len(references[a], references[b]));
  if (best_shared < 1)
    throw std::invalid_argument("synth_generate: no class pair shares a common prefix");

  if (meta) {
    meta->class_names.clear();
    for (const auto& spec : cfg.classes) meta->class_names.push_back(spec.name);
    meta->references = references;
    meta->first_divergence_step = best_shared;  // 0-based index of first diverged point
    meta->length = cfg.length;
  }

  std::vector<TrajectorySample> samples;
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    const auto& spec = cfg.classes[c];
    TrajectorySample base;
    base.id = spec.name;
    base.coords = spec.points;
    const TrajectorySample resampled = resample_time(base, cfg.length);
    for (int i = 0; i < spec.count; ++i) {
      Rng rng = root.derive(hash_tag("synth"), c, static_cast<std::uint64_t>(i));
      TrajectorySample s;
      s.id = spec.name + "_" + std::to_string(i);
      s.label = static_cast<int>(c);
      s.num_classes = static_cast<int>(cfg.classes.size());
      s.coords = resampled.coords;
      if (spec.jitter > 0.0)
        for (auto& p : s.coords) {
          p[0] += rng.normal(0.0, spec.jitter);
          p[1] += rng.normal(0.0, spec.jitter);
        }
      s = normalize(s);
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

inline void save_synth_meta(const std::string& path, const SynthMeta& meta) {
  nlohmann::json j;
  j["class_names"] = meta.class_names;
  j["first_divergence_step"] = meta.first_divergence_step;
  j["length"] = meta.length;
  nlohmann::json refs = nlohmann::json::object();
  for (std::size_t c = 0; c < meta.references.size(); ++c) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : meta.references[c]) pts.push_back({p[0], p[1]});
    refs[meta.class_names[c]] = pts;
  }
  j["references"] = refs;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_synth_meta: cannot open " + path);
  out << j.dump(2) << '\n';
}

inline SynthMeta load_synth_meta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_synth_meta: cannot open " + path);
  nlohmann::json j;
  in >> j;
  SynthMeta meta;
  meta.class_names = j.at("class_names").get<std::vector<std::string>>();
  meta.first_divergence_step = j.at("first_divergence_step").get<int>();
  meta.length = j.value("length", 50);
  for (const auto& name : meta.class_names) {
    std::vector<Point> pts;
    for (const auto& p : j.at("references").at(name))
      pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    meta.references.push_back(std::move(pts));
  }
  return meta;
}

}  // namespace cgp
