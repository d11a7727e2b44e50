#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cgp/data.hpp"
#include "cgp/network.hpp"
#include "cgp/rng.hpp"

// The probabilistic output layer: per-class bivariate Gaussian mixtures over
// the next coordinate delta, plus a categorical distribution over classes.
// The one-step predictive density is the class-weighted sum of the
// class-conditional mixtures.
namespace cgp {

inline constexpr double kLogTwoPi = 1.8378770664093453;  // log(2*pi)
inline constexpr double kRhoLimit = 0.9999;
inline constexpr double kMinLogSigma = -10.0;

// Mixture parameters for all classes at one timestep. sigma is a standard
// deviation pair, rho the correlation of the implied 2x2 covariance
// [[s1^2, r*s1*s2], [r*s1*s2, s2^2]].
struct GmmParams {
  int num_classes = 0;
  int components = 0;
  std::vector<double> pi;     // K*M, rows sum to 1 per class
  std::vector<double> mu1, mu2;
  std::vector<double> sigma1, sigma2;  // positive
  std::vector<double> rho;             // |rho| < 1

  std::size_t at(int cls, int m) const {
    return static_cast<std::size_t>(cls) * components + static_cast<std::size_t>(m);
  }
};

struct ClassProbs {
  std::vector<double> p;  // sums to 1
  int size() const { return static_cast<int>(p.size()); }
};

// ---------------------------------------------------------------------------
// constrain: raw head outputs -> valid distribution parameters
//
// pi via per-class softmax, sigma via exp (raw log-sigma floored at -10 to
// keep densities finite; pass sigma_floor=false to disable), rho via tanh
// clamped to |rho| <= 0.9999, class probabilities via softmax.
// ---------------------------------------------------------------------------

namespace detail {

inline void softmax_inplace(double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += (x[i] = std::exp(x[i] - mx));
  for (std::size_t i = 0; i < n; ++i) x[i] /= sum;
}

inline void check_finite(const std::vector<double>& raw, int components, const char* what) {
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (std::isfinite(raw[i])) continue;
    std::string where(what);
    if (components > 0) {
      const std::size_t block = 6 * static_cast<std::size_t>(components);
      const std::size_t cls = i / block;
      const std::size_t field = (i % block) / components;
      const std::size_t m = i % static_cast<std::size_t>(components);
      static const char* kFields[6] = {"pi", "mu1", "mu2", "sigma1", "sigma2", "rho"};
      where += "[class=" + std::to_string(cls) + ", m=" + std::to_string(m) + ", " +
               kFields[field] + "]";
    } else {
      where += "[" + std::to_string(i) + "]";
    }
    throw std::invalid_argument("constrain: non-finite raw value at " + where);
  }
}

}  // namespace detail

inline GmmParams constrain_coord(const std::vector<double>& coord_raw, int num_classes,
                                 int components, bool sigma_floor = true) {
  if (coord_raw.size() != static_cast<std::size_t>(num_classes) * components * 6)
    throw std::invalid_argument("constrain: coord raw width " + std::to_string(coord_raw.size()) +
                                " != K*M*6 = " +
                                std::to_string(num_classes * components * 6));
  detail::check_finite(coord_raw, components, "coord");
  GmmParams g;
  g.num_classes = num_classes;
  g.components = components;
  const std::size_t n = static_cast<std::size_t>(num_classes) * components;
  g.pi.resize(n);
  g.mu1.resize(n);
  g.mu2.resize(n);
  g.sigma1.resize(n);
  g.sigma2.resize(n);
  g.rho.resize(n);
  for (int c = 0; c < num_classes; ++c) {
    for (int m = 0; m < components; ++m) {
      const std::size_t i = g.at(c, m);
      g.pi[i] = coord_raw[gmm_offset(components, c, kPi) + m];
      g.mu1[i] = coord_raw[gmm_offset(components, c, kMu1) + m];
      g.mu2[i] = coord_raw[gmm_offset(components, c, kMu2) + m];
      double s1 = coord_raw[gmm_offset(components, c, kSigma1) + m];
      double s2 = coord_raw[gmm_offset(components, c, kSigma2) + m];
      if (sigma_floor) {
        s1 = std::max(s1, kMinLogSigma);
        s2 = std::max(s2, kMinLogSigma);
      }
      g.sigma1[i] = std::exp(s1);
      g.sigma2[i] = std::exp(s2);
      const double r = std::tanh(coord_raw[gmm_offset(components, c, kRho) + m]);
      g.rho[i] = std::min(kRhoLimit, std::max(-kRhoLimit, r));
    }
    detail::softmax_inplace(g.pi.data() + g.at(c, 0), components);
  }
  return g;
}

inline ClassProbs constrain_class(const std::vector<double>& class_raw) {
  detail::check_finite(class_raw, 0, "class");
  ClassProbs probs;
  probs.p = class_raw;
  detail::softmax_inplace(probs.p.data(), probs.p.size());
  return probs;
}

inline std::pair<GmmParams, ClassProbs> constrain(const std::vector<double>& coord_raw,
                                                  const std::vector<double>& class_raw,
                                                  int num_classes, int components,
                                                  bool sigma_floor = true) {
  return {constrain_coord(coord_raw, num_classes, components, sigma_floor),
          constrain_class(class_raw)};
}

// ---------------------------------------------------------------------------
// densities
// ---------------------------------------------------------------------------

inline void check_component(double sigma1, double sigma2, double rho) {
  if (!(sigma1 > 0.0) || !(sigma2 > 0.0))
    throw std::invalid_argument("bivariate_pdf: sigma must be positive, got (" +
                                std::to_string(sigma1) + ", " + std::to_string(sigma2) + ")");
  if (!(std::fabs(rho) < 1.0))
    throw std::invalid_argument("bivariate_pdf: |rho| must be < 1, got " + std::to_string(rho));
}

inline double log_bivariate_pdf(const Point& x, const Point& mu, double sigma1, double sigma2,
                                double rho) {
  check_component(sigma1, sigma2, rho);
  const double z1 = (x[0] - mu[0]) / sigma1;
  const double z2 = (x[1] - mu[1]) / sigma2;
  const double omr = 1.0 - rho * rho;
  const double z = z1 * z1 + z2 * z2 - 2.0 * rho * z1 * z2;
  return -kLogTwoPi - std::log(sigma1) - std::log(sigma2) - 0.5 * std::log(omr) -
         z / (2.0 * omr);
}

inline double bivariate_pdf(const Point& x, const Point& mu, double sigma1, double sigma2,
                            double rho) {
  return std::exp(log_bivariate_pdf(x, mu, sigma1, sigma2, rho));
}

// log sum_m pi[c,m] * N(x | component m of class c), via log-sum-exp.
inline double log_class_gmm_pdf(const Point& x, const GmmParams& g, int cls) {
  if (cls < 0 || cls >= g.num_classes)
    throw std::invalid_argument("class_gmm_pdf: class " + std::to_string(cls) +
                                " outside [0, " + std::to_string(g.num_classes) + ")");
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(g.components);
  for (int m = 0; m < g.components; ++m) {
    const std::size_t i = g.at(cls, m);
    const double lp = g.pi[i] > 0.0 ? std::log(g.pi[i]) : -std::numeric_limits<double>::infinity();
    terms[m] = lp + log_bivariate_pdf(x, {g.mu1[i], g.mu2[i]}, g.sigma1[i], g.sigma2[i], g.rho[i]);
    mx = std::max(mx, terms[m]);
  }
  if (!std::isfinite(mx)) return mx;
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - mx);
  return mx + std::log(sum);
}

inline double class_gmm_pdf(const Point& x, const GmmParams& g, int cls) {
  double sum = 0.0;
  for (int m = 0; m < g.components; ++m) {
    const std::size_t i = g.at(cls, m);
    sum += g.pi[i] * bivariate_pdf(x, {g.mu1[i], g.mu2[i]}, g.sigma1[i], g.sigma2[i], g.rho[i]);
  }
  return sum;
}

// Class-weighted sum of the class-conditional mixtures.
inline double mixture_posterior(const Point& x, const GmmParams& g, const ClassProbs& probs) {
  if (probs.size() != g.num_classes)
    throw std::invalid_argument("mixture_posterior: class count mismatch");
  double sum = 0.0;
  for (int c = 0; c < g.num_classes; ++c) {
    if (probs.p[c] == 0.0) continue;  // exact one-hot reduction
    sum += probs.p[c] * class_gmm_pdf(x, g, c);
  }
  return sum;
}

inline double log_mixture_posterior(const Point& x, const GmmParams& g, const ClassProbs& probs) {
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(g.num_classes);
  for (int c = 0; c < g.num_classes; ++c) {
    if (probs.p[c] == 0.0) continue;
    terms.push_back(std::log(probs.p[c]) + log_class_gmm_pdf(x, g, c));
    mx = std::max(mx, terms.back());
  }
  if (terms.empty() || !std::isfinite(mx)) return -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - mx);
  return mx + std::log(sum);
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

inline int sample_class(const ClassProbs& probs, Rng& rng) { return rng.categorical(probs.p); }

// Draw a component from pi[c], then the coordinate via the Cholesky factor
// [[s1, 0], [r*s2, s2*sqrt(1-r^2)]] of the covariance.
inline Point sample_coord(const GmmParams& g, int cls, Rng& rng) {
  if (cls < 0 || cls >= g.num_classes)
    throw std::invalid_argument("sample_coord: class " + std::to_string(cls) + " outside [0, " +
                                std::to_string(g.num_classes) + ")");
  std::vector<double> weights(g.pi.begin() + g.at(cls, 0),
                              g.pi.begin() + g.at(cls, 0) + g.components);
  const int m = rng.categorical(weights);
  const std::size_t i = g.at(cls, m);
  const double z1 = rng.normal();
  const double z2 = rng.normal();
  return {g.mu1[i] + g.sigma1[i] * z1,
          g.mu2[i] + g.sigma2[i] * (g.rho[i] * z1 + std::sqrt(1.0 - g.rho[i] * g.rho[i]) * z2)};
}

// pi-weighted mean of class c's mixture.
inline Point gmm_mean(const GmmParams& g, int cls) {
  Point mean{0.0, 0.0};
  for (int m = 0; m < g.components; ++m) {
    const std::size_t i = g.at(cls, m);
    mean[0] += g.pi[i] * g.mu1[i];
    mean[1] += g.pi[i] * g.mu2[i];
  }
  return mean;
}

}  // namespace cgp
