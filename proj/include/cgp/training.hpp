#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgp/autodiff.hpp"
#include "cgp/data.hpp"
#include "cgp/distribution.hpp"
#include "cgp/network.hpp"

namespace cgp {

// ---------------------------------------------------------------------------
// value-level losses
// ---------------------------------------------------------------------------

// Cross entropy against a one-hot label: -log p[label].
inline double loss_class_value(const ClassProbs& probs, int label) {
  if (label < 0 || label >= probs.size())
    throw std::invalid_argument("loss_class: label " + std::to_string(label) + " outside [0, " +
                                std::to_string(probs.size()) + ")");
  return -std::log(probs.p[label]);
}

// Same loss from raw logits, via log-softmax.
inline double loss_class_logits(const std::vector<double>& logits, int label) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return -(logits[label] - mx - std::log(sum));
}

// Negative log-likelihood of the target delta under the labeled class's
// mixture, computed in log space.
inline double loss_coord_value(const std::vector<double>& coord_raw, const Point& target,
                               int label, int num_classes, int components,
                               bool sigma_floor = true) {
  const GmmParams g = constrain_coord(coord_raw, num_classes, components, sigma_floor);
  return -log_class_gmm_pdf(target, g, label);
}

// ---------------------------------------------------------------------------
// graph-level losses
// ---------------------------------------------------------------------------

struct LossNodes {
  ad::NodePtr total;       // scalar, sum over samples and steps
  ad::NodePtr coord;       // scalar
  ad::NodePtr cls;         // scalar; null for models without a class head
  std::size_t coord_terms = 0;
  std::size_t class_terms = 0;
};

namespace detail {

// -log sum over the labeled class of the per-class mixture log densities.
// coord_raw is B x K*M*6, targets B x 2 (constants), mask B x K one-hot.
inline ad::NodePtr coord_step_loss(const ad::NodePtr& coord_raw, const ad::NodePtr& x1_tile,
                                   const ad::NodePtr& x2_tile, const ad::NodePtr& mask,
                                   int num_classes, int components, bool sigma_floor) {
  const int m = components;
  std::vector<ad::NodePtr> per_class;
  per_class.reserve(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    ad::NodePtr log_pi = ad::log_softmax(ad::slice(coord_raw, gmm_offset(m, c, kPi), m));
    ad::NodePtr mu1 = ad::slice(coord_raw, gmm_offset(m, c, kMu1), m);
    ad::NodePtr mu2 = ad::slice(coord_raw, gmm_offset(m, c, kMu2), m);
    ad::NodePtr ls1 = ad::slice(coord_raw, gmm_offset(m, c, kSigma1), m);
    ad::NodePtr ls2 = ad::slice(coord_raw, gmm_offset(m, c, kSigma2), m);
    if (sigma_floor) {
      ls1 = ad::clamp(ls1, kMinLogSigma, std::numeric_limits<double>::infinity());
      ls2 = ad::clamp(ls2, kMinLogSigma, std::numeric_limits<double>::infinity());
    }
    ad::NodePtr rho =
        ad::clamp(ad::tanh(ad::slice(coord_raw, gmm_offset(m, c, kRho), m)), -kRhoLimit, kRhoLimit);

    ad::NodePtr e1 = ad::mul(ad::sub(x1_tile, mu1), ad::exp(ad::scale(ls1, -1.0)));
    ad::NodePtr e2 = ad::mul(ad::sub(x2_tile, mu2), ad::exp(ad::scale(ls2, -1.0)));
    ad::NodePtr omr = ad::add_scalar(ad::scale(ad::mul(rho, rho), -1.0), 1.0);  // 1 - rho^2
    ad::NodePtr z = ad::sub(ad::add(ad::mul(e1, e1), ad::mul(e2, e2)),
                            ad::scale(ad::mul(rho, ad::mul(e1, e2)), 2.0));
    ad::NodePtr log_n = ad::add_scalar(
        ad::scale(ad::add(ad::add(ls1, ls2),
                          ad::add(ad::scale(ad::log(omr), 0.5), ad::div(z, ad::scale(omr, 2.0)))),
                  -1.0),
        -kLogTwoPi);
    per_class.push_back(ad::logsumexp(ad::add(log_pi, log_n)));  // B x 1
  }
  ad::NodePtr log_density = per_class.size() == 1 ? per_class[0] : ad::concat(per_class);
  return ad::scale(ad::sum(ad::mul(log_density, mask)), -1.0);
}

inline ad::NodePtr class_step_loss(const ad::NodePtr& class_raw, const ad::NodePtr& mask) {
  return ad::scale(ad::sum(ad::mul(ad::log_softmax(class_raw), mask)), -1.0);
}

struct BatchArrays {
  std::vector<ad::NodePtr> inputs;    // per step, B x 2
  std::vector<ad::NodePtr> targets1;  // per step, B x M tiles of target x1
  std::vector<ad::NodePtr> targets2;
  std::vector<ad::NodePtr> targets_xy;  // per step, B x 2 (point heads)
  ad::NodePtr label_mask;               // B x K
  std::size_t steps = 0;
};

// Packs an equal-length batch into per-step constants. Inputs are a zero
// delta followed by the observed deltas; the target at step s is delta s.
// With class_mask=false the mask is a flat all-ones column (label-free heads).
inline BatchArrays pack_batch(const std::vector<const TrajectorySample*>& batch, int num_classes,
                              int components, bool class_mask = true) {
  if (batch.empty()) throw std::invalid_argument("pack_batch: empty batch");
  const std::size_t len = batch[0]->length();
  for (const auto* s : batch)
    if (s->length() != len)
      throw std::invalid_argument("pack_batch: mixed sequence lengths " + std::to_string(len) +
                                  " vs " + std::to_string(s->length()));
  if (len < 2) throw std::invalid_argument("pack_batch: sequences must have >= 2 points");

  const std::size_t b = batch.size();
  std::vector<RelativeSequence> rels;
  rels.reserve(b);
  for (const auto* s : batch) rels.push_back(to_relative(*s));

  BatchArrays arrays;
  arrays.steps = len - 1;
  Tensor mask(b, num_classes);
  if (class_mask) {
    for (std::size_t i = 0; i < b; ++i) mask(i, batch[i]->label) = 1.0;
  } else {
    mask.fill(1.0);
  }
  arrays.label_mask = ad::constant(std::move(mask));
  for (std::size_t s = 0; s < arrays.steps; ++s) {
    Tensor in(b, 2), t1(b, components), t2(b, components), txy(b, 2);
    for (std::size_t i = 0; i < b; ++i) {
      const Point input = s == 0 ? Point{0.0, 0.0} : rels[i].deltas[s - 1];
      in(i, 0) = input[0];
      in(i, 1) = input[1];
      const Point target = rels[i].deltas[s];
      for (int j = 0; j < components; ++j) {
        t1(i, j) = target[0];
        t2(i, j) = target[1];
      }
      txy(i, 0) = target[0];
      txy(i, 1) = target[1];
    }
    arrays.inputs.push_back(ad::constant(std::move(in)));
    arrays.targets1.push_back(ad::constant(std::move(t1)));
    arrays.targets2.push_back(ad::constant(std::move(t2)));
    arrays.targets_xy.push_back(ad::constant(std::move(txy)));
  }
  return arrays;
}

}  // namespace detail

// Full training loss for a batch: for every step, the coordinate NLL of the
// labeled class plus the class cross entropy, summed over steps and samples.
inline LossNodes cgp_batch_loss(const CgpModel& model,
                                const std::vector<const TrajectorySample*>& batch,
                                bool sigma_floor = true) {
  const auto arrays = detail::pack_batch(batch, model.cfg.num_classes, model.cfg.components);
  const auto raw = forward_sequence(model, arrays.inputs);
  LossNodes loss;
  for (std::size_t s = 0; s < arrays.steps; ++s) {
    ad::NodePtr coord =
        detail::coord_step_loss(raw[s].coord, arrays.targets1[s], arrays.targets2[s],
                                arrays.label_mask, model.cfg.num_classes, model.cfg.components,
                                sigma_floor);
    ad::NodePtr cls = detail::class_step_loss(raw[s].cls, arrays.label_mask);
    loss.coord = loss.coord ? ad::add(loss.coord, coord) : coord;
    loss.cls = loss.cls ? ad::add(loss.cls, cls) : cls;
  }
  loss.coord_terms = arrays.steps * batch.size();
  loss.class_terms = arrays.steps * batch.size();
  loss.total = ad::add(loss.coord, loss.cls);
  return loss;
}

struct TotalLoss {
  double total = 0.0;
  double coord = 0.0;
  double cls = 0.0;
  std::size_t coord_terms = 0;
  std::size_t class_terms = 0;

  double coord_avg() const { return coord_terms ? coord / coord_terms : 0.0; }
  double class_avg() const { return class_terms ? cls / class_terms : 0.0; }
};

// Forward-only evaluation of the training loss (sum over samples and steps).
inline TotalLoss total_loss(const CgpModel& model, const std::vector<TrajectorySample>& samples,
                            bool sigma_floor = true) {
  std::vector<const TrajectorySample*> batch;
  batch.reserve(samples.size());
  for (const auto& s : samples) batch.push_back(&s);
  const LossNodes nodes = cgp_batch_loss(model, batch, sigma_floor);
  TotalLoss out;
  out.total = nodes.total->value.item();
  out.coord = nodes.coord->value.item();
  out.cls = nodes.cls->value.item();
  out.coord_terms = nodes.coord_terms;
  out.class_terms = nodes.class_terms;
  return out;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

inline double global_grad_norm(const std::vector<ad::Parameter>& params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (std::size_t i = 0; i < p.node->grad.size(); ++i) sq += p.node->grad[i] * p.node->grad[i];
  return std::sqrt(sq);
}

inline void clip_gradients(const std::vector<ad::Parameter>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (const auto& p : params)
    for (std::size_t i = 0; i < p.node->grad.size(); ++i) p.node->grad[i] *= s;
}

// Adam with bias correction.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ad::Parameter> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.node->value.rows(), p.node->value.cols());
      v_.emplace_back(p.node->value.rows(), p.node->value.cols());
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& w = params_[k].node->value;
      const Tensor& g = params_[k].node->grad;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
        w[i] -= lr_ * (m_[k][i] / bc1) / (std::sqrt(v_[k][i] / bc2) + eps_);
      }
    }
  }

 private:
  std::vector<ad::Parameter> params_;
  double lr_, beta1_, beta2_, eps_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// early stopping
// ---------------------------------------------------------------------------

// Stops once the validation loss has not decreased for `patience` consecutive
// epochs. Epochs are 1-based; an equal loss does not count as a decrease.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {
    if (patience < 1) throw std::invalid_argument("EarlyStopper: patience must be >= 1");
  }

  // Feed one epoch's validation loss; returns true when training should stop.
  bool observe(double val_loss) {
    ++epoch_;
    improved_ = val_loss < best_;
    if (improved_) {
      best_ = val_loss;
      best_epoch_ = epoch_;
    }
    return epoch_ - best_epoch_ >= patience_;
  }

  bool improved() const { return improved_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  int epoch() const { return epoch_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  bool improved_ = false;
  double best_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int max_epochs = 100;
  int patience = 10;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  bool sigma_floor = true;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;  // per-sample average over the epoch's batches
  double val_loss = 0.0;    // per-sample average on the validation set
  double wall_ms = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
};

using BatchLossFn = std::function<LossNodes(const std::vector<const TrajectorySample*>&)>;

// Mini-batch optimization with validation-based early stopping. The model is
// left holding the weights of the best-validation epoch. `on_epoch` fires
// after each epoch, `on_improvement` whenever the validation loss improves
// (the model then holds the improved weights).
template <class Model>
TrainHistory train(Model& model, const BatchLossFn& batch_loss,
                   const std::vector<TrajectorySample>& train_set,
                   const std::vector<TrajectorySample>& val_set, const TrainConfig& cfg,
                   const std::function<void(const EpochRecord&)>& on_epoch = {},
                   const std::function<void()>& on_improvement = {}) {
  if (train_set.empty() || val_set.empty())
    throw std::invalid_argument("train: train and validation sets must be non-empty");
  if (cfg.batch_size < 1 || cfg.max_epochs < 0 || cfg.patience < 1 ||
      cfg.learning_rate < 0.0)
    throw std::invalid_argument("train: invalid config");

  const std::vector<ad::Parameter> params = model.parameters();
  AdamOptimizer opt(params, cfg.learning_rate);
  EarlyStopper stopper(cfg.patience);
  const Rng root(cfg.seed);

  std::vector<Tensor> best_weights;
  const auto snapshot = [&] {
    best_weights.clear();
    for (const auto& p : params) best_weights.push_back(p.node->value);
  };
  snapshot();  // max_epochs == 0 returns the untrained weights

  const auto eval_set = [&](const std::vector<TrajectorySample>& set) {
    double total = 0.0;
    std::vector<const TrajectorySample*> batch;
    for (std::size_t begin = 0; begin < set.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      batch.clear();
      const std::size_t end =
          std::min(set.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&set[i]);
      total += batch_loss(batch).total->value.item();
    }
    return total / static_cast<double>(set.size());
  };

  TrainHistory history;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng = root.derive(hash_tag("shuffle"), static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);

    double epoch_total = 0.0;
    std::vector<const TrajectorySample*> batch;
    for (std::size_t begin = 0, batch_id = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.batch_size), ++batch_id) {
      batch.clear();
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&train_set[order[i]]);

      const LossNodes loss = batch_loss(batch);
      const double total = loss.total->value.item();
      if (!std::isfinite(total)) {
        const char* term = "total";
        if (loss.coord && !std::isfinite(loss.coord->value.item())) term = "coord";
        else if (loss.cls && !std::isfinite(loss.cls->value.item())) term = "class";
        throw std::runtime_error("train: non-finite " + std::string(term) + " loss in epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(batch_id) +
                                 " (first sample '" + batch.front()->id + "')");
      }
      epoch_total += total;

      // Optimize the per-sample mean; Adam's per-coordinate normalization
      // makes this equivalent to the summed loss up to the clip threshold.
      ad::backward(ad::scale(loss.total, 1.0 / static_cast<double>(batch.size())));
      clip_gradients(params, cfg.clip_norm);
      opt.step();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_total / static_cast<double>(train_set.size());
    rec.val_loss = eval_set(val_set);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    history.epochs.push_back(rec);

    const bool stop = stopper.observe(rec.val_loss);
    if (stopper.improved()) {
      snapshot();
      if (on_improvement) on_improvement();
    }
    if (on_epoch) on_epoch(rec);
    if (stop) break;
  }

  for (std::size_t k = 0; k < params.size(); ++k) params[k].node->value = best_weights[k];
  history.best_epoch = stopper.best_epoch();
  history.best_val = stopper.best();
  return history;
}

// Convenience wrapper with the standard loss.
inline TrainHistory train_cgp(CgpModel& model, const std::vector<TrajectorySample>& train_set,
                              const std::vector<TrajectorySample>& val_set,
                              const TrainConfig& cfg,
                              const std::function<void(const EpochRecord&)>& on_epoch = {},
                              const std::function<void()>& on_improvement = {}) {
  const BatchLossFn loss = [&model, &cfg](const std::vector<const TrajectorySample*>& batch) {
    return cgp_batch_loss(model, batch, cfg.sigma_floor);
  };
  return train(model, loss, train_set, val_set, cfg, on_epoch, on_improvement);
}

// Gradient check of the full training loss against central finite differences.
inline ad::GradCheckReport gradient_check(const CgpModel& model,
                                          const std::vector<TrajectorySample>& batch, double step,
                                          double tol, std::uint64_t seed = 0,
                                          std::size_t per_param = 32) {
  std::vector<const TrajectorySample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  Rng rng(mix_seed(seed, hash_tag("gradcheck")));
  return ad::gradient_check(
      model.parameters(), [&] { return cgp_batch_loss(model, ptrs).total; }, step, tol, rng,
      per_param);
}

}  // namespace cgp
