#pragma once

#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgp/data.hpp"
#include "cgp/distribution.hpp"
#include "cgp/network.hpp"
#include "cgp/prediction.hpp"
#include "cgp/training.hpp"

// Comparison models sharing the LSTM stack: a flat mixture-density head with
// the same total component budget (MDN), a deterministic point-prediction
// head (D-LSTM), and a prefix nearest-neighbor lookup (1-NN).
namespace cgp {

// ---------------------------------------------------------------------------
// MDN: single class-agnostic mixture over the next delta
// ---------------------------------------------------------------------------

struct MdnModel {
  NetConfig cfg;  // num_classes fixed to 1; components carries the full budget
  LstmStack stack;
  ad::Parameter coord_w, coord_b;

  std::vector<ad::Parameter> parameters() const {
    std::vector<ad::Parameter> out;
    for (const auto& l : stack.layers) {
      out.push_back(l.w_ih);
      out.push_back(l.w_hh);
      out.push_back(l.b);
    }
    out.push_back(coord_w);
    out.push_back(coord_b);
    return out;
  }
};

inline MdnModel init_mdn(int components, int hidden, std::uint64_t seed, int input_dim = 2) {
  if (components < 1 || hidden < 1)
    throw std::invalid_argument("init_mdn: invalid dimensions");
  Rng rng(seed);
  MdnModel m;
  m.cfg.num_classes = 1;
  m.cfg.components = components;
  m.cfg.hidden = hidden;
  m.cfg.input_dim = input_dim;
  m.stack = init_lstm_stack(hidden, input_dim, rng);
  m.coord_w =
      detail::make_param("coord_head.w", detail::uniform_tensor(3 * hidden, components * 6, rng));
  m.coord_b = detail::make_param("coord_head.b", detail::uniform_tensor(1, components * 6, rng));
  return m;
}

inline LossNodes mdn_batch_loss(const MdnModel& model,
                                const std::vector<const TrajectorySample*>& batch,
                                bool sigma_floor = true) {
  const auto arrays = detail::pack_batch(batch, 1, model.cfg.components, /*class_mask=*/false);
  GraphState state = initial_graph_state(model.stack, batch.size());
  LossNodes loss;
  for (std::size_t s = 0; s < arrays.steps; ++s) {
    const ad::NodePtr features = stack_step(model.stack, arrays.inputs[s], state);
    const ad::NodePtr coord_raw = affine(features, model.coord_w, model.coord_b);
    const ad::NodePtr step = detail::coord_step_loss(coord_raw, arrays.targets1[s],
                                                     arrays.targets2[s], arrays.label_mask, 1,
                                                     model.cfg.components, sigma_floor);
    loss.coord = loss.coord ? ad::add(loss.coord, step) : step;
  }
  loss.coord_terms = arrays.steps * batch.size();
  loss.total = loss.coord;
  return loss;
}

inline TrainHistory train_mdn(MdnModel& model, const std::vector<TrajectorySample>& train_set,
                              const std::vector<TrajectorySample>& val_set,
                              const TrainConfig& cfg,
                              const std::function<void(const EpochRecord&)>& on_epoch = {},
                              const std::function<void()>& on_improvement = {}) {
  const BatchLossFn loss = [&model, &cfg](const std::vector<const TrajectorySample*>& batch) {
    return mdn_batch_loss(model, batch, cfg.sigma_floor);
  };
  return train(model, loss, train_set, val_set, cfg, on_epoch, on_improvement);
}

// Component-then-coordinate sampling, iterated with the sampled delta fed
// back; the class-draw step of the two-step procedure is skipped.
inline RolloutResult mdn_rollout(const MdnModel& model, const RelativeSequence& observed,
                                 int horizon, Rng& rng) {
  if (horizon < 1) throw std::invalid_argument("mdn_rollout: horizon must be >= 1");
  FedPrefix fed = feed_observed(model.stack, observed);
  RolloutResult out;
  out.horizon = horizon;
  for (int s = 0; s < horizon; ++s) {
    const auto coord_raw = affine_value(fed.features, model.coord_w, model.coord_b);
    const GmmParams params = constrain_coord(coord_raw, 1, model.cfg.components);
    const Point delta = sample_coord(params, 0, rng);
    out.classes.push_back(0);
    out.deltas.push_back(delta);
    fed.last_abs[0] += delta[0];
    fed.last_abs[1] += delta[1];
    out.absolute.push_back(fed.last_abs);
    if (s + 1 < horizon) fed.features = stack_step_value(model.stack, delta, fed.state);
  }
  return out;
}

// ---------------------------------------------------------------------------
// D-LSTM: deterministic next-delta regression under mean squared error
// ---------------------------------------------------------------------------

struct DlstmModel {
  NetConfig cfg;  // components == 0 marks the point head
  LstmStack stack;
  ad::Parameter out_w, out_b;  // 3H x 2, 1 x 2

  std::vector<ad::Parameter> parameters() const {
    std::vector<ad::Parameter> out;
    for (const auto& l : stack.layers) {
      out.push_back(l.w_ih);
      out.push_back(l.w_hh);
      out.push_back(l.b);
    }
    out.push_back(out_w);
    out.push_back(out_b);
    return out;
  }
};

inline DlstmModel init_dlstm(int hidden, std::uint64_t seed, int input_dim = 2) {
  if (hidden < 1) throw std::invalid_argument("init_dlstm: invalid dimensions");
  Rng rng(seed);
  DlstmModel m;
  m.cfg.num_classes = 0;
  m.cfg.components = 0;
  m.cfg.hidden = hidden;
  m.cfg.input_dim = input_dim;
  m.stack = init_lstm_stack(hidden, input_dim, rng);
  m.out_w = detail::make_param("out_head.w", detail::uniform_tensor(3 * hidden, 2, rng));
  m.out_b = detail::make_param("out_head.b", detail::uniform_tensor(1, 2, rng));
  return m;
}

// Mean squared error over steps and coordinate dimensions, summed over the
// batch's samples.
inline LossNodes dlstm_batch_loss(const DlstmModel& model,
                                  const std::vector<const TrajectorySample*>& batch) {
  const auto arrays = detail::pack_batch(batch, 1, 1, /*class_mask=*/false);
  GraphState state = initial_graph_state(model.stack, batch.size());
  ad::NodePtr sq_sum;
  for (std::size_t s = 0; s < arrays.steps; ++s) {
    const ad::NodePtr features = stack_step(model.stack, arrays.inputs[s], state);
    const ad::NodePtr pred = affine(features, model.out_w, model.out_b);
    const ad::NodePtr diff = ad::sub(pred, arrays.targets_xy[s]);
    const ad::NodePtr step = ad::sum(ad::mul(diff, diff));
    sq_sum = sq_sum ? ad::add(sq_sum, step) : step;
  }
  LossNodes loss;
  loss.coord = ad::scale(sq_sum, 1.0 / (2.0 * static_cast<double>(arrays.steps)));
  loss.coord_terms = arrays.steps * batch.size();
  loss.total = loss.coord;
  return loss;
}

// Per-sequence MSE between predicted and true deltas.
inline double dlstm_loss_value(const std::vector<Point>& predicted,
                               const std::vector<Point>& target) {
  if (predicted.size() != target.size() || predicted.empty())
    throw std::invalid_argument("dlstm_loss: sequence length mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double dx = predicted[i][0] - target[i][0];
    const double dy = predicted[i][1] - target[i][1];
    sq += dx * dx + dy * dy;
  }
  return sq / (2.0 * static_cast<double>(predicted.size()));
}

inline TrainHistory train_dlstm(DlstmModel& model, const std::vector<TrajectorySample>& train_set,
                                const std::vector<TrajectorySample>& val_set,
                                const TrainConfig& cfg,
                                const std::function<void(const EpochRecord&)>& on_epoch = {},
                                const std::function<void()>& on_improvement = {}) {
  const BatchLossFn loss = [&model](const std::vector<const TrajectorySample*>& batch) {
    return dlstm_batch_loss(model, batch);
  };
  return train(model, loss, train_set, val_set, cfg, on_epoch, on_improvement);
}

// Deterministic rollout feeding back the point prediction.
inline RolloutResult dlstm_rollout(const DlstmModel& model, const RelativeSequence& observed,
                                   int horizon) {
  if (horizon < 1) throw std::invalid_argument("dlstm_rollout: horizon must be >= 1");
  FedPrefix fed = feed_observed(model.stack, observed);
  RolloutResult out;
  out.horizon = horizon;
  for (int s = 0; s < horizon; ++s) {
    const auto pred = affine_value(fed.features, model.out_w, model.out_b);
    const Point delta{pred[0], pred[1]};
    out.classes.push_back(0);
    out.deltas.push_back(delta);
    fed.last_abs[0] += delta[0];
    fed.last_abs[1] += delta[1];
    out.absolute.push_back(fed.last_abs);
    if (s + 1 < horizon) fed.features = stack_step_value(model.stack, delta, fed.state);
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1-NN: prefix nearest neighbor over absolute coordinates
// ---------------------------------------------------------------------------

struct NnIndex {
  std::vector<std::vector<Point>> sequences;  // equal length, absolute coords
  std::vector<int> labels;

  std::size_t size() const { return sequences.size(); }
};

inline NnIndex build_nn_index(const std::vector<TrajectorySample>& samples) {
  NnIndex index;
  for (const auto& s : samples) {
    index.sequences.push_back(s.coords);
    index.labels.push_back(s.label);
  }
  return index;
}

// Returns the continuation (points t+1 .. t+dt, 1-based) of the training
// sequence whose first t points are closest to the prefix in summed squared
// distance, translated so its point t coincides with the prefix's last point.
// Ties resolve to the lowest index.
inline std::vector<Point> nn_predict(const NnIndex& index, const std::vector<Point>& prefix,
                                     int dt) {
  if (index.size() == 0) throw std::invalid_argument("nn_predict: empty index");
  if (prefix.empty()) throw std::invalid_argument("nn_predict: empty prefix");
  if (dt < 1) throw std::invalid_argument("nn_predict: dt must be >= 1");
  const std::size_t t = prefix.size();
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto& seq = index.sequences[i];
    if (seq.size() < t + static_cast<std::size_t>(dt))
      throw std::invalid_argument("nn_predict: horizon overruns index sequences");
    double dist = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      const double dx = seq[j][0] - prefix[j][0];
      const double dy = seq[j][1] - prefix[j][1];
      dist += dx * dx + dy * dy;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = i;
    }
  }
  const auto& seq = index.sequences[best];
  const double ox = prefix.back()[0] - seq[t - 1][0];
  const double oy = prefix.back()[1] - seq[t - 1][1];
  std::vector<Point> out;
  out.reserve(dt);
  for (int j = 0; j < dt; ++j)
    out.push_back({seq[t + j][0] + ox, seq[t + j][1] + oy});
  return out;
}

}  // namespace cgp
