#pragma once

#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgp/rng.hpp"
#include "cgp/util.hpp"

namespace cgp {

using Point = std::array<double, 2>;

// One handwriting sequence. The label is a class index together with the
// class count; one_hot() materializes the indicator vector.
struct TrajectorySample {
  std::string id;
  std::vector<Point> coords;
  int label = 0;
  int num_classes = 0;

  std::size_t length() const { return coords.size(); }
  std::vector<double> one_hot() const {
    std::vector<double> y(num_classes, 0.0);
    y[label] = 1.0;
    return y;
  }
};

// Per-step differences plus the starting point; cumulative summation of the
// deltas onto the origin reconstructs the absolute sequence.
struct RelativeSequence {
  Point origin{0.0, 0.0};
  std::vector<Point> deltas;
};

struct DatasetSplit {
  std::vector<std::size_t> train, validation, test;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// trajectory file io
//
// Line format, one sample per line:
//   id<TAB>class_index<TAB>x1,y1;x2,y2;...
// Coordinates are decimal reals. An optional fourth TAB-separated column of
// ;-separated integers carries per-step sampled classes for rollout dumps.
// ---------------------------------------------------------------------------

namespace detail {

inline double parse_real(const std::string& text, const std::string& where) {
  const char* s = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  if (end == s || *end != '\0' || !std::isfinite(v))
    throw std::runtime_error(where + ": bad number '" + text + "'");
  return v;
}

inline long parse_int(const std::string& text, const std::string& where) {
  const char* s = text.c_str();
  char* end = nullptr;
  const long v = std::strtol(s, &end, 10);
  if (end == s || *end != '\0')
    throw std::runtime_error(where + ": bad integer '" + text + "'");
  return v;
}

}  // namespace detail

// Parses a trajectory file. When num_classes == 0 the class count is inferred
// as max index + 1; otherwise indices outside [0, num_classes) are rejected.
inline std::vector<TrajectorySample> load_trajectories(const std::string& path,
                                                       int num_classes = 0) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_trajectories: cannot open " + path);
  std::vector<TrajectorySample> samples;
  std::string line;
  std::size_t line_no = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const auto fields = split(line, '\t');
    if (fields.size() < 3) throw std::runtime_error(where + ": expected id<TAB>class<TAB>points");
    TrajectorySample s;
    s.id = fields[0];
    const long label = detail::parse_int(fields[1], where);
    if (label < 0 || (num_classes > 0 && label >= num_classes))
      throw std::runtime_error(where + ": class index " + std::to_string(label) +
                               " outside [0, " + std::to_string(num_classes) + ")");
    s.label = static_cast<int>(label);
    max_label = std::max(max_label, s.label);
    for (const auto& pt : split(fields[2], ';')) {
      if (pt.empty()) continue;
      const auto xy = split(pt, ',');
      if (xy.size() != 2) throw std::runtime_error(where + ": bad point '" + pt + "'");
      s.coords.push_back({detail::parse_real(xy[0], where), detail::parse_real(xy[1], where)});
    }
    samples.push_back(std::move(s));
  }
  const int k = num_classes > 0 ? num_classes : max_label + 1;
  for (auto& s : samples) s.num_classes = k;
  return samples;
}

inline std::string format_points(const std::vector<Point>& pts) {
  std::string out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i) out += ';';
    out += fmt_double(pts[i][0]);
    out += ',';
    out += fmt_double(pts[i][1]);
  }
  return out;
}

inline void save_trajectories(const std::string& path,
                              const std::vector<TrajectorySample>& samples) {
  std::ofstream out(path, std::ios::binary);  // binary: no newline translation
  if (!out) throw std::runtime_error("save_trajectories: cannot open " + path);
  for (const auto& s : samples)
    out << s.id << '\t' << s.label << '\t' << format_points(s.coords) << '\n';
  if (!out) throw std::runtime_error("save_trajectories: write failed for " + path);
}

// ---------------------------------------------------------------------------
// preprocessing
// ---------------------------------------------------------------------------

// Per-dimension min-max map onto [0, 127]. A dimension with zero range maps
// to the canvas midpoint 63.5.
inline TrajectorySample normalize(const TrajectorySample& sample) {
  if (sample.length() < 2)
    throw std::invalid_argument("normalize: need at least 2 points, got " +
                                std::to_string(sample.length()));
  TrajectorySample out = sample;
  for (int d = 0; d < 2; ++d) {
    double lo = sample.coords[0][d], hi = sample.coords[0][d];
    for (const auto& p : sample.coords) {
      lo = std::min(lo, p[d]);
      hi = std::max(hi, p[d]);
    }
    const double range = hi - lo;
    for (auto& p : out.coords)
      p[d] = range == 0.0 ? 63.5 : (p[d] - lo) / range * 127.0;
  }
  return out;
}

// Linear interpolation on the time index: output point j samples the input at
// fractional index j*(T_in-1)/(target_len-1). Endpoints are preserved exactly.
inline TrajectorySample resample_time(const TrajectorySample& sample, int target_len = 50) {
  if (sample.length() < 2)
    throw std::invalid_argument("resample_time: need at least 2 points, got " +
                                std::to_string(sample.length()));
  if (target_len < 2)
    throw std::invalid_argument("resample_time: target_len must be >= 2, got " +
                                std::to_string(target_len));
  TrajectorySample out = sample;
  out.coords.assign(static_cast<std::size_t>(target_len), Point{});
  const std::size_t t_in = sample.length();
  for (int j = 0; j < target_len; ++j) {
    if (j == 0) {
      out.coords[0] = sample.coords.front();
      continue;
    }
    if (j == target_len - 1) {
      out.coords[j] = sample.coords.back();
      continue;
    }
    const double pos = static_cast<double>(j) * static_cast<double>(t_in - 1) /
                       static_cast<double>(target_len - 1);
    const std::size_t i0 = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i0);
    for (int d = 0; d < 2; ++d)
      out.coords[j][d] =
          sample.coords[i0][d] + frac * (sample.coords[i0 + 1][d] - sample.coords[i0][d]);
  }
  return out;
}

inline RelativeSequence to_relative(const TrajectorySample& sample) {
  if (sample.length() < 2)
    throw std::invalid_argument("to_relative: need at least 2 points, got " +
                                std::to_string(sample.length()));
  RelativeSequence rel;
  rel.origin = sample.coords[0];
  rel.deltas.reserve(sample.length() - 1);
  for (std::size_t t = 0; t + 1 < sample.length(); ++t)
    rel.deltas.push_back({sample.coords[t + 1][0] - sample.coords[t][0],
                          sample.coords[t + 1][1] - sample.coords[t][1]});
  return rel;
}

inline std::vector<Point> reconstruct_absolute(const RelativeSequence& rel) {
  std::vector<Point> coords;
  coords.reserve(rel.deltas.size() + 1);
  coords.push_back(rel.origin);
  for (const auto& d : rel.deltas)
    coords.push_back({coords.back()[0] + d[0], coords.back()[1] + d[1]});
  return coords;
}

// Full pipeline: fixed length first, then exact [0, 127] range.
inline TrajectorySample preprocess(const TrajectorySample& sample, int target_len = 50) {
  return normalize(resample_time(sample, target_len));
}

inline std::vector<TrajectorySample> preprocess_all(const std::vector<TrajectorySample>& samples,
                                                    int target_len = 50) {
  std::vector<TrajectorySample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(preprocess(s, target_len));
  return out;
}

// ---------------------------------------------------------------------------
// splitting
// ---------------------------------------------------------------------------

// Deterministic 70/10/20 split. Sizes are fixed by rounding (70% and 10%
// rounded to nearest, remainder to test), then indices are dealt from a
// seeded shuffle.
inline DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw std::invalid_argument("split_dataset: need at least 10 samples, got " +
                                          std::to_string(n));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const std::size_t n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
  const std::size_t n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  DatasetSplit split;
  split.seed = seed;
  split.train.assign(idx.begin(), idx.begin() + n_train);
  split.validation.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  split.test.assign(idx.begin() + n_train + n_val, idx.end());
  return split;
}

inline DatasetSplit split_dataset(const std::vector<TrajectorySample>& samples,
                                  std::uint64_t seed) {
  return split_dataset(samples.size(), seed);
}

inline std::vector<TrajectorySample> gather(const std::vector<TrajectorySample>& samples,
                                            const std::vector<std::size_t>& idx) {
  std::vector<TrajectorySample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(samples[i]);
  return out;
}

}  // namespace cgp
