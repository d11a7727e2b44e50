#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cgp/data.hpp"
#include "cgp/distribution.hpp"
#include "cgp/network.hpp"
#include "cgp/rng.hpp"

// Stochastic multi-step prediction: at every step a class is sampled from the
// class head, a delta is sampled from that class's mixture, and the sampled
// delta is fed back as the next input. The recurrent state is carried across
// steps, which is equivalent to re-feeding the concatenated sequence.
namespace cgp {

struct RolloutResult {
  std::vector<int> classes;      // sampled class per predicted step
  std::vector<Point> deltas;     // sampled relative coordinates
  std::vector<Point> absolute;   // reconstructed absolute coordinates
  int horizon = 0;

  // Per-step distribution parameters, recorded on request.
  std::vector<GmmParams> step_params;
  std::vector<ClassProbs> step_probs;
};

// Observed prefix fed through the stack: state, features after the last
// input, and the last observed absolute point.
struct FedPrefix {
  ValueState state;
  std::vector<double> features;
  Point last_abs{0.0, 0.0};
};

inline FedPrefix feed_observed(const LstmStack& stack, const RelativeSequence& observed) {
  FedPrefix fed;
  fed.state = initial_value_state(stack);
  fed.features = stack_step_value(stack, {0.0, 0.0}, fed.state);
  fed.last_abs = observed.origin;
  for (const auto& d : observed.deltas) {
    fed.features = stack_step_value(stack, d, fed.state);
    fed.last_abs[0] += d[0];
    fed.last_abs[1] += d[1];
  }
  return fed;
}

// Samples a horizon-step continuation of the observed prefix. When
// forced_class >= 0 every step samples from that class's mixture instead of
// the drawn one; the categorical draw still advances the rng so that forced
// and free rollouts over the same stream share their coordinate noise.
inline RolloutResult rollout(const CgpModel& model, const RelativeSequence& observed, int horizon,
                             Rng& rng, int forced_class = -1, bool record_params = false) {
  if (horizon < 1)
    throw std::invalid_argument("rollout: horizon must be >= 1, got " + std::to_string(horizon));
  if (forced_class >= model.cfg.num_classes)
    throw std::invalid_argument("rollout: forced class " + std::to_string(forced_class) +
                                " outside [0, " + std::to_string(model.cfg.num_classes) + ")");
  FedPrefix fed = feed_observed(model.stack, observed);
  RolloutResult out;
  out.horizon = horizon;
  for (int s = 0; s < horizon; ++s) {
    const auto coord_raw = affine_value(fed.features, model.coord_w, model.coord_b);
    const auto class_raw = affine_value(fed.features, model.class_w, model.class_b);
    auto [params, probs] = constrain(coord_raw, class_raw, model.cfg.num_classes,
                                     model.cfg.components);
    const int drawn = sample_class(probs, rng);
    const int cls = forced_class >= 0 ? forced_class : drawn;
    const Point delta = sample_coord(params, cls, rng);
    out.classes.push_back(cls);
    out.deltas.push_back(delta);
    fed.last_abs[0] += delta[0];
    fed.last_abs[1] += delta[1];
    out.absolute.push_back(fed.last_abs);
    if (record_params) {
      out.step_params.push_back(std::move(params));
      out.step_probs.push_back(std::move(probs));
    }
    if (s + 1 < horizon) fed.features = stack_step_value(model.stack, delta, fed.state);
  }
  return out;
}

// n independent rollouts with per-rollout derived rng streams; deterministic
// under (seed, sample index).
inline std::vector<RolloutResult> rollout_batch(const CgpModel& model,
                                                const RelativeSequence& observed, int horizon,
                                                int n_samples, std::uint64_t seed,
                                                int forced_class = -1) {
  if (n_samples < 1)
    throw std::invalid_argument("rollout_batch: n_samples must be >= 1, got " +
                                std::to_string(n_samples));
  const Rng root(seed);
  std::vector<RolloutResult> out;
  out.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    Rng rng = root.derive(hash_tag("rollout"), static_cast<std::uint64_t>(i));
    out.push_back(rollout(model, observed, horizon, rng, forced_class));
  }
  return out;
}

// Deterministic class-conditional trajectory: the class is fixed and every
// step advances by the pi-weighted mixture mean instead of a draw.
inline std::vector<Point> classwise_mean_rollout(const CgpModel& model,
                                                 const RelativeSequence& observed, int horizon,
                                                 int cls) {
  if (cls < 0 || cls >= model.cfg.num_classes)
    throw std::invalid_argument("classwise_mean_rollout: class " + std::to_string(cls) +
                                " outside [0, " + std::to_string(model.cfg.num_classes) + ")");
  if (horizon < 1)
    throw std::invalid_argument("classwise_mean_rollout: horizon must be >= 1");
  FedPrefix fed = feed_observed(model.stack, observed);
  std::vector<Point> trajectory;
  trajectory.reserve(horizon);
  for (int s = 0; s < horizon; ++s) {
    const auto coord_raw = affine_value(fed.features, model.coord_w, model.coord_b);
    const GmmParams params =
        constrain_coord(coord_raw, model.cfg.num_classes, model.cfg.components);
    const Point delta = gmm_mean(params, cls);
    fed.last_abs[0] += delta[0];
    fed.last_abs[1] += delta[1];
    trajectory.push_back(fed.last_abs);
    if (s + 1 < horizon) fed.features = stack_step_value(model.stack, delta, fed.state);
  }
  return trajectory;
}

// Rollout as a trajectory-file line with the sampled classes as an extra
// TAB-separated column of ;-joined indices.
inline std::string rollout_record(const std::string& id, int label, const RolloutResult& r) {
  std::string classes;
  for (std::size_t i = 0; i < r.classes.size(); ++i) {
    if (i) classes += ';';
    classes += std::to_string(r.classes[i]);
  }
  return id + '\t' + std::to_string(label) + '\t' + format_points(r.absolute) + '\t' + classes;
}

}  // namespace cgp
