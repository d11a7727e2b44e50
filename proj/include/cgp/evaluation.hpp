#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cgp/baselines.hpp"
#include "cgp/data.hpp"
#include "cgp/prediction.hpp"
#include "cgp/util.hpp"

// Metrics over a test set: endpoint RMSE of free rollouts (rmse1), of
// rollouts forced to the majority sampled class (rmse2), of rollouts forced
// to the true class (rmse3), and predictive negative log-likelihood (nll),
// plus per-class RMSE curves over the input time and sampled-class frequency
// tables. All rollouts for an (item, sample) pair draw from the same derived
// rng stream, so forced and free variants are directly comparable and every
// metric is a pure function of (model, data, config, seed).
namespace cgp {

struct EvalConfig {
  int n_samples = 20;
  std::vector<int> dts{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<int> ts{15};
  std::uint64_t seed = 0;
};

struct MetricRecord {
  std::string model;
  std::string metric;
  int cls = -1;  // -1 = pooled over classes
  int t = 0;
  int dt = 0;
  double value = 0.0;
};

struct MetricReport {
  std::vector<MetricRecord> records;
  std::vector<std::string> notes;
};

// Non-owning reference to any evaluable model.
struct ModelRef {
  const CgpModel* cgp = nullptr;
  const MdnModel* mdn = nullptr;
  const DlstmModel* dlstm = nullptr;
  const NnIndex* nn = nullptr;

  static ModelRef of(const CgpModel& m) { return {&m, nullptr, nullptr, nullptr}; }
  static ModelRef of(const MdnModel& m) { return {nullptr, &m, nullptr, nullptr}; }
  static ModelRef of(const DlstmModel& m) { return {nullptr, nullptr, &m, nullptr}; }
  static ModelRef of(const NnIndex& m) { return {nullptr, nullptr, nullptr, &m}; }

  const char* name() const {
    if (cgp) return "cgp";
    if (mdn) return "mdn";
    if (dlstm) return "dlstm";
    return "nn";
  }
  bool probabilistic() const { return cgp || mdn; }
  bool has_classes() const { return cgp != nullptr; }
};

// ---------------------------------------------------------------------------
// aggregation primitives
// ---------------------------------------------------------------------------

inline double rmse_from_endpoints(const std::vector<std::pair<Point, Point>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("rmse: no endpoint pairs");
  double sq = 0.0;
  for (const auto& [pred, truth] : pairs) {
    const double dx = pred[0] - truth[0];
    const double dy = pred[1] - truth[1];
    sq += dx * dx + dy * dy;
  }
  return std::sqrt(sq / static_cast<double>(pairs.size()));
}

// Mode with lowest-index tie break.
inline int majority_class(const std::vector<int>& classes, int num_classes) {
  std::vector<int> counts(num_classes, 0);
  for (int c : classes) ++counts[c];
  int best = 0;
  for (int c = 1; c < num_classes; ++c)
    if (counts[c] > counts[best]) best = c;
  return best;
}

namespace detail {

inline void check_horizon(const std::vector<TrajectorySample>& items, int t, int dt) {
  if (t < 1 || dt < 1)
    throw std::invalid_argument("eval: t and dt must be >= 1");
  for (const auto& s : items)
    if (static_cast<std::size_t>(t + dt) > s.length())
      throw std::invalid_argument("eval: horizon t+dt = " + std::to_string(t + dt) +
                                  " overruns sequence of length " + std::to_string(s.length()));
}

inline Rng item_stream(const EvalConfig& cfg, std::size_t item, int sample) {
  return Rng(cfg.seed)
      .derive(hash_tag("eval.rollout"), static_cast<std::uint64_t>(item),
              static_cast<std::uint64_t>(sample));
}

struct ItemErrors {
  int label = 0;
  std::vector<double> sq;          // squared endpoint error per sample
  std::vector<int> first_classes;  // cgp only
};

// Endpoint squared errors per item. forced_mode: -1 free, -2 forced to the
// true label, -3 forced to the majority of the free rollouts' first classes.
inline std::vector<ItemErrors> collect_errors(const ModelRef& ref,
                                              const std::vector<TrajectorySample>& items, int t,
                                              int dt, const EvalConfig& cfg, int forced_mode) {
  check_horizon(items, t, dt);
  std::vector<ItemErrors> out(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    const TrajectorySample& item = items[i];
    ItemErrors& e = out[i];
    e.label = item.label;
    const RelativeSequence full = to_relative(item);
    RelativeSequence prefix{full.origin,
                            {full.deltas.begin(), full.deltas.begin() + (t - 1)}};
    const Point truth = item.coords[static_cast<std::size_t>(t + dt - 1)];
    const auto push = [&](const Point& endpoint) {
      const double dx = endpoint[0] - truth[0];
      const double dy = endpoint[1] - truth[1];
      e.sq.push_back(dx * dx + dy * dy);
    };
    if (ref.dlstm) {
      push(dlstm_rollout(*ref.dlstm, prefix, dt).absolute.back());
      return;
    }
    if (ref.nn) {
      const std::vector<Point> abs_prefix(item.coords.begin(), item.coords.begin() + t);
      push(nn_predict(*ref.nn, abs_prefix, dt).back());
      return;
    }
    if (ref.mdn) {
      for (int s = 0; s < cfg.n_samples; ++s) {
        Rng rng = item_stream(cfg, i, s);
        push(mdn_rollout(*ref.mdn, prefix, dt, rng).absolute.back());
      }
      return;
    }
    int forced = -1;
    if (forced_mode == -2) {
      forced = item.label;
    } else if (forced_mode == -3) {
      std::vector<int> votes;
      for (int s = 0; s < cfg.n_samples; ++s) {
        Rng rng = item_stream(cfg, i, s);
        votes.push_back(rollout(*ref.cgp, prefix, dt, rng).classes.front());
      }
      forced = majority_class(votes, ref.cgp->cfg.num_classes);
    }
    for (int s = 0; s < cfg.n_samples; ++s) {
      Rng rng = item_stream(cfg, i, s);
      const RolloutResult r = rollout(*ref.cgp, prefix, dt, rng, forced);
      e.first_classes.push_back(r.classes.front());
      push(r.absolute.back());
    }
  });
  return out;
}

inline double pooled_rmse(const std::vector<ItemErrors>& errors) {
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& e : errors) {
    for (double v : e.sq) sq += v;
    n += e.sq.size();
  }
  if (n == 0) throw std::invalid_argument("rmse: no samples");
  return std::sqrt(sq / static_cast<double>(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

// Ordinary endpoint RMSE over all (item, sample) pairs.
inline double rmse1(const ModelRef& ref, const std::vector<TrajectorySample>& items, int t, int dt,
                    const EvalConfig& cfg) {
  return detail::pooled_rmse(detail::collect_errors(ref, items, t, dt, cfg, -1));
}

// RMSE of rollouts re-run with the class forced to the per-item majority of
// the free rollouts' first-step sampled classes. For models without a class
// head this coincides with rmse1.
inline double rmse2(const ModelRef& ref, const std::vector<TrajectorySample>& items, int t, int dt,
                    const EvalConfig& cfg) {
  if (!ref.has_classes())
    return rmse1(ref, items, t, dt, cfg);
  return detail::pooled_rmse(detail::collect_errors(ref, items, t, dt, cfg, -3));
}

// RMSE of rollouts with the class forced to the true label.
inline double rmse3(const ModelRef& ref, const std::vector<TrajectorySample>& items, int t, int dt,
                    const EvalConfig& cfg) {
  if (!ref.has_classes())
    throw std::invalid_argument("rmse3: model has no class head");
  return detail::pooled_rmse(detail::collect_errors(ref, items, t, dt, cfg, -2));
}

// Negative log-likelihood of the true delta at t+dt. For dt == 1 this is the
// exact one-step predictive density; for dt > 1 it is a Monte Carlo marginal:
// n_samples rollouts to step dt-1, the final-step predictive density of each
// evaluated at the true delta, combined by log-mean-exp.
inline double nll_eval(const ModelRef& ref, const std::vector<TrajectorySample>& items, int t,
                       int dt, const EvalConfig& cfg) {
  if (!ref.probabilistic())
    throw std::invalid_argument(std::string("nll: ") + ref.name() +
                                " is deterministic and defines no predictive density");
  detail::check_horizon(items, t, dt);
  std::vector<double> item_nll(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    const TrajectorySample& item = items[i];
    const RelativeSequence full = to_relative(item);
    const Point target = full.deltas[static_cast<std::size_t>(t + dt - 2)];
    const auto log_density_after = [&](FedPrefix& fed) {
      if (ref.cgp) {
        const auto coord_raw = affine_value(fed.features, ref.cgp->coord_w, ref.cgp->coord_b);
        const auto class_raw = affine_value(fed.features, ref.cgp->class_w, ref.cgp->class_b);
        const auto [params, probs] = constrain(coord_raw, class_raw, ref.cgp->cfg.num_classes,
                                               ref.cgp->cfg.components);
        return log_mixture_posterior(target, params, probs);
      }
      const auto coord_raw = affine_value(fed.features, ref.mdn->coord_w, ref.mdn->coord_b);
      return log_class_gmm_pdf(target, constrain_coord(coord_raw, 1, ref.mdn->cfg.components), 0);
    };
    const LstmStack& stack = ref.cgp ? ref.cgp->stack : ref.mdn->stack;
    RelativeSequence prefix{full.origin,
                            {full.deltas.begin(), full.deltas.begin() + (t - 1)}};
    if (dt == 1) {
      FedPrefix fed = feed_observed(stack, prefix);
      item_nll[i] = -log_density_after(fed);
      return;
    }
    std::vector<double> logs(cfg.n_samples);
    for (int s = 0; s < cfg.n_samples; ++s) {
      Rng rng = detail::item_stream(cfg, i, s);
      const RolloutResult r = ref.cgp ? rollout(*ref.cgp, prefix, dt - 1, rng)
                                      : mdn_rollout(*ref.mdn, prefix, dt - 1, rng);
      RelativeSequence extended = prefix;
      extended.deltas.insert(extended.deltas.end(), r.deltas.begin(), r.deltas.end());
      FedPrefix fed = feed_observed(stack, extended);
      logs[s] = log_density_after(fed);
    }
    double mx = *std::max_element(logs.begin(), logs.end());
    double sum = 0.0;
    for (double v : logs) sum += std::exp(v - mx);
    item_nll[i] = -(mx + std::log(sum / static_cast<double>(cfg.n_samples)));
  });
  double total = 0.0;
  for (double v : item_nll) total += v;
  return total / static_cast<double>(items.size());
}

// Fraction of items whose class-head argmax at input time t is the true label.
inline double class_head_accuracy(const CgpModel& model,
                                  const std::vector<TrajectorySample>& items, int t) {
  if (t < 1) throw std::invalid_argument("class_head_accuracy: t must be >= 1");
  std::vector<int> hits(items.size(), 0);
  parallel_for(items.size(), [&](std::size_t i) {
    const RelativeSequence full = to_relative(items[i]);
    RelativeSequence prefix{full.origin,
                            {full.deltas.begin(), full.deltas.begin() + (t - 1)}};
    FedPrefix fed = feed_observed(model.stack, prefix);
    const auto class_raw = affine_value(fed.features, model.class_w, model.class_b);
    const ClassProbs probs = constrain_class(class_raw);
    const int pred = static_cast<int>(std::max_element(probs.p.begin(), probs.p.end()) -
                                      probs.p.begin());
    hits[i] = pred == items[i].label ? 1 : 0;
  });
  double acc = 0.0;
  for (int h : hits) acc += h;
  return acc / static_cast<double>(items.size());
}

// Counts of first-step sampled classes per (true class, t). Row c holds, for
// the items labeled c, how often each class was drawn at the first predicted
// step; rows sum to n_items(c) * n_samples. The first-step draw does not
// depend on the horizon.
inline std::map<int, std::vector<long>> class_frequency(const CgpModel& model,
                                                        const std::vector<TrajectorySample>& items,
                                                        int t, const EvalConfig& cfg) {
  detail::check_horizon(items, t, 1);
  const int k = model.cfg.num_classes;
  std::vector<std::vector<long>> per_item(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    const RelativeSequence full = to_relative(items[i]);
    RelativeSequence prefix{full.origin,
                            {full.deltas.begin(), full.deltas.begin() + (t - 1)}};
    std::vector<long> counts(k, 0);
    for (int s = 0; s < cfg.n_samples; ++s) {
      Rng rng = detail::item_stream(cfg, i, s);
      ++counts[rollout(model, prefix, 1, rng).classes.front()];
    }
    per_item[i] = std::move(counts);
  });
  std::map<int, std::vector<long>> by_class;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& row = by_class.try_emplace(items[i].label, std::vector<long>(k, 0)).first->second;
    for (int c = 0; c < k; ++c) row[c] += per_item[i][c];
  }
  return by_class;
}

// ---------------------------------------------------------------------------
// report assembly
// ---------------------------------------------------------------------------

// rmse1 restricted to the items of each true class, swept over input times.
// Cells with t+dt beyond the sequence end are omitted; classes with no test
// items are omitted with a warning note.
inline void per_class_rmse_curves(const ModelRef& ref, const std::vector<TrajectorySample>& items,
                                  const EvalConfig& cfg, MetricReport& report) {
  std::set<int> labels;
  int max_label = 0;
  for (const auto& s : items) {
    labels.insert(s.label);
    max_label = std::max(max_label, s.num_classes - 1);
  }
  for (int c = 0; c <= max_label; ++c)
    if (!labels.count(c))
      report.notes.push_back("class_rmse: class " + std::to_string(c) +
                             " has no test items; omitted");
  const std::size_t seq_len = items.empty() ? 0 : items[0].length();
  for (int dt : cfg.dts) {
    for (int t : cfg.ts) {
      if (static_cast<std::size_t>(t + dt) > seq_len) continue;
      const auto errors = detail::collect_errors(ref, items, t, dt, cfg, -1);
      std::map<int, std::pair<double, std::size_t>> acc;
      for (const auto& e : errors) {
        auto& [sq, n] = acc[e.label];
        for (double v : e.sq) sq += v;
        n += e.sq.size();
      }
      for (const auto& [cls, sn] : acc)
        report.records.push_back({ref.name(), "class_rmse", cls, t, dt,
                                  std::sqrt(sn.first / static_cast<double>(sn.second))});
    }
  }
}

inline void class_frequency_records(const CgpModel& model,
                                    const std::vector<TrajectorySample>& items,
                                    const EvalConfig& cfg, int dt, MetricReport& report) {
  for (int t : cfg.ts) {
    if (static_cast<std::size_t>(t + dt) > items[0].length()) continue;
    const auto by_class = class_frequency(model, items, t, cfg);
    for (const auto& [true_cls, counts] : by_class)
      for (std::size_t c = 0; c < counts.size(); ++c)
        report.records.push_back({"cgp", "freq:" + std::to_string(c), true_cls, t, dt,
                                  static_cast<double>(counts[c])});
  }
}

// Runs the requested metrics over the (t, dt) grid of cfg. Metric names:
// rmse1, rmse2, rmse3, nll, class_rmse, freq.
inline MetricReport evaluate(const ModelRef& ref, const std::vector<TrajectorySample>& items,
                             const std::vector<std::string>& metrics, const EvalConfig& cfg) {
  if (items.empty()) throw std::invalid_argument("evaluate: empty test set");
  MetricReport report;
  const std::size_t seq_len = items[0].length();
  for (const std::string& metric : metrics) {
    if (metric == "class_rmse") {
      per_class_rmse_curves(ref, items, cfg, report);
      continue;
    }
    if (metric == "freq") {
      if (!ref.has_classes()) {
        report.notes.push_back("freq: skipped for " + std::string(ref.name()) +
                               " (no class head)");
        continue;
      }
      class_frequency_records(*ref.cgp, items, cfg, cfg.dts.front(), report);
      continue;
    }
    if (metric == "nll" && !ref.probabilistic()) {
      report.notes.push_back("nll: skipped for " + std::string(ref.name()) +
                             " (deterministic model, no predictive density)");
      continue;
    }
    if (metric == "rmse3" && !ref.has_classes()) {
      report.notes.push_back("rmse3: skipped for " + std::string(ref.name()) +
                             " (no class head)");
      continue;
    }
    if (metric == "rmse2" && !ref.has_classes())
      report.notes.push_back("rmse2: equals rmse1 for " + std::string(ref.name()) +
                             " (no class head)");
    for (int t : cfg.ts) {
      for (int dt : cfg.dts) {
        if (static_cast<std::size_t>(t + dt) > seq_len) continue;
        double value = 0.0;
        if (metric == "rmse1") value = rmse1(ref, items, t, dt, cfg);
        else if (metric == "rmse2") value = rmse2(ref, items, t, dt, cfg);
        else if (metric == "rmse3") value = rmse3(ref, items, t, dt, cfg);
        else if (metric == "nll") value = nll_eval(ref, items, t, dt, cfg);
        else throw std::invalid_argument("evaluate: unknown metric '" + metric + "'");
        report.records.push_back({ref.name(), metric, -1, t, dt, value});
      }
    }
  }
  return report;
}

// Line-delimited records: model<TAB>metric<TAB>class<TAB>t<TAB>dt<TAB>value.
// Pooled records carry "-" in the class column; notes become # comments.
inline void write_report(const std::string& path, const MetricReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_report: cannot open " + path);
  out << "model\tmetric\tclass\tt\tdt\tvalue\n";
  for (const auto& note : report.notes) out << "# " << note << '\n';
  for (const auto& r : report.records) {
    out << r.model << '\t' << r.metric << '\t';
    if (r.cls < 0) out << '-';
    else out << r.cls;
    out << '\t' << r.t << '\t' << r.dt << '\t' << fmt_double(r.value) << '\n';
  }
  if (!out) throw std::runtime_error("write_report: write failed for " + path);
}

// Human-readable summary: one table per metric, t rows by dt columns.
inline std::string summary_table(const MetricReport& report) {
  std::ostringstream os;
  std::vector<std::string> metric_order;
  for (const auto& r : report.records)
    if (r.cls < 0 && std::find(metric_order.begin(), metric_order.end(), r.metric) ==
                         metric_order.end())
      metric_order.push_back(r.metric);
  for (const auto& metric : metric_order) {
    std::set<int> ts, dts;
    std::map<std::pair<int, int>, double> cell;
    for (const auto& r : report.records)
      if (r.metric == metric && r.cls < 0) {
        ts.insert(r.t);
        dts.insert(r.dt);
        cell[{r.t, r.dt}] = r.value;
      }
    os << metric << " (rows t, cols dt)\n";
    os << "     t";
    for (int dt : dts) os << '\t' << "dt=" << dt;
    os << '\n';
    for (int t : ts) {
      os << "    " << t;
      for (int dt : dts) {
        os << '\t';
        const auto it = cell.find({t, dt});
        if (it == cell.end()) {
          os << "-";
        } else {
          char buf[32];
          std::snprintf(buf, sizeof(buf), "%.4f", it->second);
          os << buf;
        }
      }
      os << '\n';
    }
    os << '\n';
  }
  for (const auto& note : report.notes) os << "note: " << note << '\n';
  return os.str();
}

}  // namespace cgp
