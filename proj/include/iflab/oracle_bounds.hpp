#pragma once

// Leave-one-out retraining oracle and the sign-error bound machinery:
// sign partition of the LOO targets, empirical sign error, the
// exp(-2 mu^2 / R^2) bound and its finite-sample corollary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iflab/data.hpp"
#include "iflab/errors.hpp"
#include "iflab/influence.hpp"
#include "iflab/model.hpp"
#include "iflab/optim.hpp"
#include "iflab/parallel.hpp"
#include "iflab/task.hpp"

namespace iflab {

struct LooResult {
  std::uint64_t sample_id = 0;
  double delta_val_risk = 0.0;  // R_val(theta_{-z}) - R_val(theta_full), mean over seeds
  std::size_t seeds_used = 0;
  double std_across_seeds = 0.0;
};

/// Retrains from scratch without one sample, per seed, and compares
/// validation risks against the full retrain under the same seed. Full
/// retrains are cached per seed.
class LooOracle {
 public:
  LooOracle(const Model& model, const Dataset& train_set, const Dataset& val_set, const SgdConfig& cfg,
            std::size_t num_seeds, std::uint64_t base_seed = 0)
      : model_(model), train_(train_set), val_(val_set), cfg_(cfg), base_seed_(base_seed) {
    if (num_seeds < 1) throw UsageError("loo: num_seeds must be >= 1");
    for (std::size_t s = 0; s < num_seeds; ++s) {
      const auto cps = retrain(train_, s);
      full_risk_.push_back(model_.batch_risk(cps.back().params, val_));
    }
  }

  LooResult run(std::uint64_t sample_id) const {
    const Dataset reduced = train_.without(sample_id);
    if (reduced.size() == train_.size()) throw UsageError("loo: id " + std::to_string(sample_id) + " not in training set");
    std::vector<double> deltas;
    for (std::size_t s = 0; s < full_risk_.size(); ++s) {
      std::vector<Checkpoint> cps;
      try {
        cps = retrain(reduced, s);
      } catch (const DivergenceError& e) {
        throw DivergenceError("loo retrain for seed index " + std::to_string(s) + ": " + e.what(), e.last_finite_step());
      }
      deltas.push_back(model_.batch_risk(cps.back().params, val_) - full_risk_[s]);
    }
    LooResult r{sample_id, 0.0, deltas.size(), 0.0};
    for (double d : deltas) r.delta_val_risk += d;
    r.delta_val_risk /= static_cast<double>(deltas.size());
    if (deltas.size() > 1) {
      double ss = 0.0;
      for (double d : deltas) ss += (d - r.delta_val_risk) * (d - r.delta_val_risk);
      r.std_across_seeds = std::sqrt(ss / static_cast<double>(deltas.size() - 1));
    }
    return r;
  }

  std::vector<LooResult> run_all(std::size_t threads = default_threads()) const {
    std::vector<LooResult> out(train_.size());
    parallel_for(train_.size(), threads, [&](std::size_t i) { out[i] = run(train_.samples[i].id); });
    return out;
  }

 private:
  std::vector<Checkpoint> retrain(const Dataset& data, std::size_t seed_index) const {
    return train(model_, data, cfg_, RngState{base_seed_ + seed_index, 0});
  }

  const Model& model_;
  const Dataset& train_;
  const Dataset& val_;
  SgdConfig cfg_;
  std::uint64_t base_seed_;
  std::vector<double> full_risk_;
};

inline LooResult loo_retrain(const Dataset& train_set, std::uint64_t sample_id, const ModelSpec& spec,
                             const SgdConfig& cfg, const Dataset& val_set, std::size_t num_seeds) {
  const Model model(spec);
  return LooOracle(model, train_set, val_set, cfg, num_seeds).run(sample_id);
}

struct SignPartition {
  std::vector<std::uint64_t> positive_ids;
  std::vector<std::uint64_t> negative_ids;
  std::vector<std::uint64_t> zero_ids;
};

inline SignPartition sign_partition(const std::vector<LooResult>& results, double tolerance) {
  if (!(tolerance >= 0.0)) throw UsageError("sign_partition: tolerance must be >= 0");
  SignPartition p;
  for (const auto& r : results) {
    if (r.delta_val_risk > tolerance) p.positive_ids.push_back(r.sample_id);
    else if (r.delta_val_risk < -tolerance) p.negative_ids.push_back(r.sample_id);
    else p.zero_ids.push_back(r.sample_id);
  }
  return p;
}

/// 1e-9 times the largest |delta|.
inline double default_zero_tolerance(const std::vector<LooResult>& results) {
  double m = 0.0;
  for (const auto& r : results) m = std::max(m, std::abs(r.delta_val_risk));
  return 1e-9 * m;
}

enum class Centering { none, median };

inline Centering default_centering(Direction d) {
  return d == Direction::higher_is_noisier ? Centering::median : Centering::none;
}

/// Scores mapped so that positive means "removal raises validation risk".
/// Positive-only estimators (higher_is_noisier) are negated and, with
/// median centering, shifted so that above-median raw scores come out
/// negative.
inline std::map<std::uint64_t, double> normalized_scores(const InfluenceReport& report, Centering centering) {
  std::vector<double> values;
  for (const auto& [id, s] : report.scores) values.push_back(s);
  double center = 0.0;
  if (centering == Centering::median && !values.empty()) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    center = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  }
  const double sign = report.direction == Direction::higher_is_noisier ? -1.0 : 1.0;
  std::map<std::uint64_t, double> out;
  for (const auto& [id, s] : report.scores) out[id] = sign * (s - center);
  return out;
}

/// Fraction of non-zero-target samples whose normalized score sign differs
/// from the LOO sign. A normalized score of exactly 0 counts as an error.
inline double sign_error(const std::map<std::uint64_t, double>& normalized, const SignPartition& partition) {
  std::size_t wrong = 0;
  std::size_t total = 0;
  auto lookup = [&](std::uint64_t id) {
    auto it = normalized.find(id);
    if (it == normalized.end()) throw UsageError("sign_error: no score for id " + std::to_string(id));
    return it->second;
  };
  for (auto id : partition.positive_ids) {
    ++total;
    wrong += lookup(id) > 0.0 ? 0 : 1;
  }
  for (auto id : partition.negative_ids) {
    ++total;
    wrong += lookup(id) < 0.0 ? 0 : 1;
  }
  if (total == 0) throw EmptySetError("sign_error: no samples with a nonzero target sign");
  return static_cast<double>(wrong) / static_cast<double>(total);
}

inline double sign_error(const InfluenceReport& report, const SignPartition& partition) {
  return sign_error(normalized_scores(report, default_centering(report.direction)), partition);
}

struct TheoremResult {
  double bound = 1.0;
  double mu = 0.0;
  double mean_positive = 0.0;
  double mean_negative = 0.0;
  bool assumptions_hold = false;
};

inline TheoremResult theorem_bound_from_means(double mean_positive, double mean_negative, double sharp_risk) {
  if (!(sharp_risk > 0.0)) throw UsageError("theorem_bound: sharpness risk must be > 0");
  TheoremResult r;
  r.mean_positive = mean_positive;
  r.mean_negative = mean_negative;
  r.mu = std::min(std::abs(mean_positive), std::abs(mean_negative));
  r.bound = std::exp(-2.0 * r.mu * r.mu / (sharp_risk * sharp_risk));
  r.assumptions_hold = mean_positive > 0.0 && mean_negative < 0.0;
  return r;
}

inline TheoremResult theorem_bound(const std::map<std::uint64_t, double>& normalized, const SignPartition& partition,
                                   double sharp_risk) {
  if (partition.positive_ids.empty() || partition.negative_ids.empty())
    throw PartitionError("theorem_bound: both sign classes must be nonempty");
  auto mean_of = [&](const std::vector<std::uint64_t>& ids) {
    double s = 0.0;
    for (auto id : ids) {
      auto it = normalized.find(id);
      if (it == normalized.end()) throw UsageError("theorem_bound: no score for id " + std::to_string(id));
      s += it->second;
    }
    return s / static_cast<double>(ids.size());
  };
  return theorem_bound_from_means(mean_of(partition.positive_ids), mean_of(partition.negative_ids), sharp_risk);
}

inline TheoremResult theorem_bound(const InfluenceReport& report, const SignPartition& partition, double sharp_risk) {
  return theorem_bound(normalized_scores(report, default_centering(report.direction)), partition, sharp_risk);
}

inline double corollary_slack(double delta, std::size_t n) {
  if (!(delta > 0.0 && delta < 1.0)) throw UsageError("corollary_bound: delta must be in (0, 1)");
  if (n < 1) throw UsageError("corollary_bound: N must be >= 1");
  return std::sqrt(-std::log(delta) / (2.0 * static_cast<double>(n)));
}

inline double corollary_bound(double theorem_value, double delta, std::size_t n) {
  return theorem_value + corollary_slack(delta, n);
}

inline constexpr std::string_view kBoundVersion = "iflab-bound-1";

struct BoundReport {
  std::string estimator;
  double mu = 0.0;
  double sharp_risk = 0.0;
  double gamma = 0.0;
  double theorem_bound = 1.0;    // raw value (exp of a nonpositive number)
  double delta = 0.05;
  std::size_t n = 0;
  double corollary_bound = 1.0;  // raw; may exceed 1
  double measured_error = 0.0;
  bool assumptions_hold = false;
  double mean_positive = 0.0;
  double mean_negative = 0.0;
  std::string centering;
  std::size_t positive_count = 0;
  std::size_t negative_count = 0;
  std::size_t zero_count = 0;

  double theorem_clamped() const { return std::clamp(theorem_bound, 0.0, 1.0); }
  double corollary_clamped() const { return std::clamp(corollary_bound, 0.0, 1.0); }
  /// Only meaningful when the assumptions hold.
  bool valid() const { return measured_error <= corollary_clamped(); }
};

inline nlohmann::json to_json(const BoundReport& b) {
  return {{"version", kBoundVersion},
          {"estimator", b.estimator},
          {"mu", b.mu},
          {"sharp_risk", b.sharp_risk},
          {"gamma", b.gamma},
          {"theorem_bound", b.theorem_clamped()},
          {"theorem_bound_raw", b.theorem_bound},
          {"delta", b.delta},
          {"n", b.n},
          {"corollary_bound", b.corollary_clamped()},
          {"corollary_bound_raw", b.corollary_bound},
          {"measured_error", b.measured_error},
          {"assumptions_hold", b.assumptions_hold},
          {"mean_positive", b.mean_positive},
          {"mean_negative", b.mean_negative},
          {"centering", b.centering},
          {"partition", {{"positive", b.positive_count}, {"negative", b.negative_count}, {"zero", b.zero_count}}}};
}

inline nlohmann::json to_json(const std::vector<LooResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : results)
    arr.push_back({{"sample_id", r.sample_id},
                   {"delta_val_risk", r.delta_val_risk},
                   {"seeds_used", r.seeds_used},
                   {"std_across_seeds", r.std_across_seeds}});
  return {{"version", kBoundVersion}, {"loo", arr}};
}

/// Assembles a BoundReport from already computed pieces.
inline BoundReport assemble_bound_report(const InfluenceReport& report, const SignPartition& partition,
                                         double sharp_risk, double gamma, double delta) {
  const Centering centering = default_centering(report.direction);
  const auto normalized = normalized_scores(report, centering);
  const TheoremResult t = theorem_bound(normalized, partition, sharp_risk);
  BoundReport b;
  b.estimator = report.estimator.value("variant", std::string("custom"));
  b.mu = t.mu;
  b.sharp_risk = sharp_risk;
  b.gamma = gamma;
  b.theorem_bound = t.bound;
  b.delta = delta;
  b.n = report.scores.size();
  b.corollary_bound = corollary_bound(t.bound, delta, b.n);
  b.measured_error = sign_error(normalized, partition);
  b.assumptions_hold = t.assumptions_hold;
  b.mean_positive = t.mean_positive;
  b.mean_negative = t.mean_negative;
  b.centering = centering == Centering::median ? "median" : "none";
  b.positive_count = partition.positive_ids.size();
  b.negative_count = partition.negative_ids.size();
  b.zero_count = partition.zero_ids.size();
  return b;
}

struct BoundExperimentConfig {
  TaskConfig task;
  std::uint64_t seed = 0;
  std::size_t loo_seeds = 1;
  double delta = 0.05;
  std::size_t sharpness_probes = 16;
  std::size_t max_train = 200;
};

struct BoundExperimentResult {
  BoundReport bound;
  InfluenceReport influence;
  std::vector<LooResult> loo;
};

/// End to end: LOO oracle over every training sample, sign partition,
/// estimator scores, gamma = max over samples of |H^{-1} g| / N, sharpness
/// at the estimator's evaluation point, measured error and both bounds.
inline BoundExperimentResult bound_experiment(const EstimatorConfig& est, const BoundExperimentConfig& cfg,
                                              std::size_t threads = default_threads()) {
  const Task task = prepare_task(cfg.task, cfg.seed);
  if (task.train.size() > cfg.max_train)
    throw SizeError("bound_experiment: LOO over " + std::to_string(task.train.size()) + " samples exceeds cap " +
                    std::to_string(cfg.max_train));
  const Model model(task.spec);
  const auto cps = train_task(task, model);
  const Checkpoint& theta_star = cps.back();

  LooOracle oracle(model, task.train, task.val, task.train_cfg, cfg.loo_seeds, cfg.seed * 7919 + 1);
  BoundExperimentResult out;
  out.loo = oracle.run_all(threads);
  const SignPartition partition = sign_partition(out.loo, default_zero_tolerance(out.loo));

  std::vector<Checkpoint> pool = cps;
  const double eps = 1.0 / static_cast<double>(task.train.size());
  Vector eval_point = theta_star.params;
  double gamma = 0.0;
  if (est.variant == Variant::vm || est.variant == Variant::fvm) {
    const Checkpoint tuned = tune_task(task, model, theta_star, est.variant == Variant::fvm);
    pool.push_back(tuned);
    eval_point = tuned.params;
    const ValidationMinimaContext ctx(model, tuned, task.val, est.backend, est.damping, 0, est.lissa,
                                      RngState{est.seed, 0}, est.auto_damping, threads);
    for (const auto& s : task.train.samples) gamma = std::max(gamma, eps * norm2(ctx.solve(model.grad(tuned.params, s))));
  } else if (est.variant == Variant::tracin) {
    for (const auto& s : task.train.samples)
      gamma = std::max(gamma, eps * theta_star.learning_rate_at_step * norm2(model.grad(theta_star.params, s)));
  } else {
    const ExactIfContext ctx(model, theta_star.params, task.train, task.val, est.damping, est.auto_damping, threads);
    for (const auto& s : task.train.samples) gamma = std::max(gamma, norm2(ctx.parameter_change(s, eps)));
  }
  out.influence = score_dataset(est, model, task.train, task.val, pool, threads);
  const double sharp = gamma > 0.0
                           ? sharpness_risk(model, eval_point, task.val, gamma, cfg.sharpness_probes,
                                            RngState{cfg.seed, 0}.split(31))
                           : model.batch_risk(eval_point, task.val);
  out.bound = assemble_bound_report(out.influence, partition, sharp, gamma, cfg.delta);
  return out;
}

}  // namespace iflab
