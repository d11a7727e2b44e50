#pragma once

// Independent reference implementations used to check the library. These are
// deliberately naive (direct formulas, brute-force scans) and share no code
// with the paths they verify.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "cgp/data.hpp"
#include "cgp/rng.hpp"
#include "cgp/tensor.hpp"

namespace oracle {

// Triple-loop matrix product.
inline cgp::Tensor matmul_ref(const cgp::Tensor& a, const cgp::Tensor& b) {
  cgp::Tensor c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

// Bivariate normal density in matrix form: explicit 2x2 inverse/determinant
// of the covariance [[s1^2, r*s1*s2], [r*s1*s2, s2^2]].
inline double bivariate_matrix_ref(const cgp::Point& x, const cgp::Point& mu, double s1,
                                   double s2, double rho) {
  const double c11 = s1 * s1;
  const double c12 = rho * s1 * s2;
  const double c22 = s2 * s2;
  const double det = c11 * c22 - c12 * c12;
  const double i11 = c22 / det;
  const double i12 = -c12 / det;
  const double i22 = c11 / det;
  const double d1 = x[0] - mu[0];
  const double d2 = x[1] - mu[1];
  const double quad = d1 * (i11 * d1 + i12 * d2) + d2 * (i12 * d1 + i22 * d2);
  return std::exp(-0.5 * quad) / (2.0 * M_PI * std::sqrt(det));
}

// Fractional-index linear interpolation of a polyline onto target_len points.
inline std::vector<cgp::Point> interp_ref(const std::vector<cgp::Point>& pts, int target_len) {
  std::vector<cgp::Point> out;
  for (int j = 0; j < target_len; ++j) {
    const double pos =
        static_cast<double>(j) * static_cast<double>(pts.size() - 1) / (target_len - 1);
    std::size_t i0 = static_cast<std::size_t>(std::floor(pos));
    if (i0 + 1 >= pts.size()) i0 = pts.size() - 2;
    const double f = pos - static_cast<double>(i0);
    out.push_back({(1.0 - f) * pts[i0][0] + f * pts[i0 + 1][0],
                   (1.0 - f) * pts[i0][1] + f * pts[i0 + 1][1]});
  }
  return out;
}

// Exhaustive prefix scan for the nearest sequence; returns its index.
inline std::size_t nn_scan_ref(const std::vector<std::vector<cgp::Point>>& sequences,
                               const std::vector<cgp::Point>& prefix) {
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < prefix.size(); ++j) {
      const double dx = sequences[i][j][0] - prefix[j][0];
      const double dy = sequences[i][j][1] - prefix[j][1];
      d += dx * dx + dy * dy;
    }
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

// Random preprocessed-looking samples: length `len`, coords in [0, 127].
inline std::vector<cgp::TrajectorySample> random_samples(int n, int len, int num_classes,
                                                         cgp::Rng& rng) {
  std::vector<cgp::TrajectorySample> out;
  for (int i = 0; i < n; ++i) {
    cgp::TrajectorySample s;
    s.id = "r" + std::to_string(i);
    s.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
    s.num_classes = num_classes;
    cgp::Point p{rng.uniform(20.0, 100.0), rng.uniform(20.0, 100.0)};
    for (int t = 0; t < len; ++t) {
      s.coords.push_back(p);
      p[0] += rng.uniform(-4.0, 4.0);
      p[1] += rng.uniform(-4.0, 4.0);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace oracle
