#pragma once

// Desk-scale protocols: mislabeled-sample detection, relabeling,
// pseudo-label recall, and the training-epoch and tuning-step sweeps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iflab/data.hpp"
#include "iflab/influence.hpp"
#include "iflab/metrics.hpp"
#include "iflab/model.hpp"
#include "iflab/optim.hpp"
#include "iflab/parallel.hpp"
#include "iflab/task.hpp"

namespace iflab {

/// Noisy nonconvex desk task: 4-class mixture in 20 dimensions, 1000 training
/// points with 40% symmetric noise, 400 clean validation points, one hidden
/// layer of 32 tanh units.
inline TaskConfig desk_task_config() {
  TaskConfig c;
  c.num_classes = 4;
  c.train_n = 1000;
  c.val_n = 400;
  c.dim = 20;
  c.class_sep = 3.0;
  c.noise = {NoiseKind::symmetric, 0.4};
  c.model.kind = ModelKind::mlp;
  c.model.hidden_sizes = {32};
  c.model.activation = Activation::tanh;
  c.model.weight_decay = 5e-4;
  c.train = {0.05, 0.9, 3000, 100, Schedule::cosine, 300, 0.0};
  c.tune.sgd = {0.01, 0.9, 1000, 128, Schedule::cosine, 0, 0.0};
  c.tune.sam_gamma = 0.05;
  return c;
}

/// Convex task: L2-regularized binary logistic regression trained by
/// full-batch gradient descent to a gradient-norm criterion.
inline TaskConfig convex_task_config(double noise_rate = 0.0) {
  TaskConfig c;
  c.num_classes = 2;
  c.train_n = 100;
  c.val_n = 100;
  c.dim = 10;
  c.class_sep = 1.5;
  c.noise = {NoiseKind::symmetric, noise_rate};
  c.model.kind = ModelKind::logistic;
  c.model.weight_decay = 1e-2;
  c.train = {0.5, 0.9, 5000, 100, Schedule::constant, 0, 1e-10};
  c.tune.sgd = {0.1, 0.9, 300, 100, Schedule::cosine, 0, 0.0};
  return c;
}

/// A task with its trained checkpoints and lazily tuned VM/FVM checkpoints.
/// Scorers keep references into it, so it is pinned in memory.
class PreparedRun {
 public:
  PreparedRun(const TaskConfig& cfg, std::uint64_t seed)
      : task_(prepare_task(cfg, seed)), model_(task_.spec), checkpoints_(train_task(task_, model_)) {}

  PreparedRun(Task task) : task_(std::move(task)), model_(task_.spec), checkpoints_(train_task(task_, model_)) {}

  /// From checkpoints produced earlier; the last one is theta*.
  PreparedRun(Task task, std::vector<Checkpoint> checkpoints)
      : task_(std::move(task)), model_(task_.spec), checkpoints_(std::move(checkpoints)) {
    if (checkpoints_.empty()) throw UsageError("prepared run: no checkpoints");
  }

  PreparedRun(const PreparedRun&) = delete;
  PreparedRun& operator=(const PreparedRun&) = delete;

  const Task& task() const noexcept { return task_; }
  const Model& model() const noexcept { return model_; }
  const std::vector<Checkpoint>& checkpoints() const noexcept { return checkpoints_; }
  const Checkpoint& theta_star() const { return checkpoints_.back(); }

  const Checkpoint& tuned(bool flat) const {
    auto& slot = flat ? fvm_ : vm_;
    if (!slot) slot = tune_task(task_, model_, theta_star(), flat);
    return *slot;
  }

  void set_tuned(Checkpoint c) {
    require_tuned(c);
    (c.tag == "fvm" ? fvm_ : vm_) = std::move(c);
  }
  bool has_tuned(bool flat) const { return (flat ? fvm_ : vm_).has_value(); }

  /// Up to `count` evenly spaced training checkpoints after initialization,
  /// always ending with theta*.
  std::vector<Checkpoint> tracin_checkpoints(std::size_t count) const {
    std::vector<Checkpoint> pool;
    for (const auto& c : checkpoints_)
      if (c.tag != "init") pool.push_back(c);
    if (pool.size() <= count) return pool;
    std::vector<Checkpoint> out;
    for (std::size_t i = 1; i <= count; ++i) out.push_back(pool[(i * pool.size()) / count - 1]);
    return out;
  }

  std::vector<Checkpoint> checkpoints_for(Variant v, std::size_t tracin_count = 5) const {
    switch (v) {
      case Variant::exact_if:
      case Variant::lissa_if: return {theta_star()};
      case Variant::tracin: return tracin_checkpoints(tracin_count);
      case Variant::vm: return {tuned(false)};
      case Variant::fvm: return {tuned(true)};
    }
    return {};
  }

 private:
  Task task_;
  Model model_;
  std::vector<Checkpoint> checkpoints_;
  mutable std::optional<Checkpoint> vm_;
  mutable std::optional<Checkpoint> fvm_;
};

struct SeedMetrics {
  std::uint64_t seed = 0;
  double roc_auc = 0.0;
  double average_precision = 0.0;
  std::optional<double> relabel_top1;
  std::optional<double> relabel_top1_noisy;
  std::optional<double> recall_at_s;
  std::optional<double> pseudo_label_auc;
  double wall_time = 0.0;
};

inline constexpr std::string_view kMetricsVersion = "iflab-metrics-1";

struct MetricsReport {
  std::string estimator;
  std::vector<SeedMetrics> per_seed;

  template <typename Get>
  std::vector<double> collect(Get get) const {
    std::vector<double> v;
    for (const auto& s : per_seed)
      if (auto x = get(s)) v.push_back(*x);
    return v;
  }
  std::vector<double> roc_aucs() const {
    return collect([](const SeedMetrics& s) { return std::optional<double>(s.roc_auc); });
  }
  std::vector<double> aps() const {
    return collect([](const SeedMetrics& s) { return std::optional<double>(s.average_precision); });
  }
  std::vector<double> relabels() const {
    return collect([](const SeedMetrics& s) { return s.relabel_top1; });
  }
  std::vector<double> recalls() const {
    return collect([](const SeedMetrics& s) { return s.recall_at_s; });
  }
  double mean_roc_auc() const { return mean_of(roc_aucs()); }
  double mean_ap() const { return mean_of(aps()); }
  double mean_relabel() const { return mean_of(relabels()); }
};

inline nlohmann::json to_json(const MetricsReport& r) {
  auto agg = [](const std::vector<double>& v) -> nlohmann::json {
    if (v.empty()) return nullptr;
    return {{"mean", mean_of(v)}, {"std", std_of(v)}};
  };
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : r.per_seed) {
    nlohmann::json j = {{"seed", s.seed},
                        {"roc_auc", s.roc_auc},
                        {"average_precision", s.average_precision},
                        {"wall_time", s.wall_time}};
    if (s.relabel_top1) j["relabel_top1"] = *s.relabel_top1;
    if (s.relabel_top1_noisy) j["relabel_top1_noisy"] = *s.relabel_top1_noisy;
    if (s.recall_at_s) j["recall_at_s"] = *s.recall_at_s;
    if (s.pseudo_label_auc) j["pseudo_label_roc_auc"] = *s.pseudo_label_auc;
    seeds.push_back(j);
  }
  return {{"version", kMetricsVersion},
          {"estimator", r.estimator},
          {"roc_auc", agg(r.roc_aucs())},
          {"average_precision", agg(r.aps())},
          {"relabel_top1", agg(r.relabels())},
          {"recall_at_s", agg(r.recalls())},
          {"per_seed", seeds}};
}

/// Detection of mislabeled training samples: mislabeled is the positive
/// class; the report's direction orients the ranking.
inline SeedMetrics detect(const PreparedRun& run, const EstimatorConfig& est, std::size_t threads = default_threads()) {
  const auto cps = run.checkpoints_for(est.variant);
  const InfluenceReport report = score_dataset(est, run.model(), run.task().train, run.task().val, cps, threads);
  const auto scores = report.scores_for(run.task().train);
  const auto flags = run.task().train.noisy_flags();
  SeedMetrics m;
  m.seed = run.task().seed;
  m.roc_auc = roc_auc(scores, flags, report.direction);
  m.average_precision = average_precision(scores, flags, report.direction);
  m.wall_time = report.wall_time;
  return m;
}

struct RelabelAccuracy {
  double all = 0.0;    // over every training sample, against the true label
  double noisy = 0.0;  // over mislabeled samples only
  std::size_t ties = 0;
};

/// K set-level scorings per training sample, one per candidate label.
inline RelabelAccuracy relabel_accuracy(const PreparedRun& run, const EstimatorConfig& est,
                                        std::size_t threads = default_threads()) {
  const auto cps = run.checkpoints_for(est.variant);
  const Scorer scorer(est, run.model(), run.task().train, run.task().val, cps, threads);
  const Dataset& train = run.task().train;
  std::vector<int> predicted(train.size());
  std::vector<char> tie(train.size(), 0);
  parallel_for(train.size(), threads, [&](std::size_t i) {
    Sample candidate = train.samples[i];
    const auto r = relabel(
        train.num_classes,
        [&](int k) {
          candidate.label = k;
          return scorer.score(candidate);
        },
        scorer.direction());
    predicted[i] = r.label;
    tie[i] = r.tie ? 1 : 0;
  });
  RelabelAccuracy acc;
  std::size_t hits = 0, noisy = 0, noisy_hits = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& s = train.samples[i];
    const int truth = s.true_label.value_or(s.label);
    const bool ok = predicted[i] == truth;
    hits += ok ? 1 : 0;
    if (s.is_noisy.value_or(false)) {
      ++noisy;
      noisy_hits += ok ? 1 : 0;
    }
    acc.ties += static_cast<std::size_t>(tie[i]);
  }
  acc.all = static_cast<double>(hits) / static_cast<double>(train.size());
  acc.noisy = noisy ? static_cast<double>(noisy_hits) / static_cast<double>(noisy) : 0.0;
  return acc;
}

struct RecallSummary {
  double mean_recall = 0.0;
  double mean_auc = 0.0;
  std::size_t val_used = 0;
};

/// Per-validation-sample scores of every training sample, evaluated against
/// class-match pseudo-labels. Per-sample scores of all estimators are in the
/// removal convention (positive = helpful to that validation sample), so the
/// most influential points are the largest scores unless `extreme` says
/// otherwise. s defaults to the number of training points per class.
inline RecallSummary recall_eval(const PreparedRun& run, const EstimatorConfig& est, std::size_t max_val,
                                 Extreme extreme = Extreme::largest, std::size_t s = 0,
                                 std::size_t threads = default_threads()) {
  const Model& model = run.model();
  const Dataset& train = run.task().train;
  const Dataset& val = run.task().val;
  const std::size_t n = train.size();
  const std::size_t m = std::min(max_val, val.size());
  if (s == 0) s = std::max<std::size_t>(1, n / static_cast<std::size_t>(train.num_classes));
  std::vector<int> labels;
  for (const auto& z : train.samples) labels.push_back(z.label);

  // Per-training-sample vectors u_tr such that score(tr, val) is computed from
  // them and the validation sample.
  const auto cps = run.checkpoints_for(est.variant);
  std::vector<std::vector<double>> score_rows(m, std::vector<double>(n));
  const double eps = est.epsilon > 0.0 ? est.epsilon : 1.0 / static_cast<double>(n);
  if (est.variant == Variant::vm || est.variant == Variant::fvm) {
    const Checkpoint& tuned = cps.front();
    const ValidationMinimaContext ctx(model, tuned, val, est.backend, est.damping, 0, est.lissa,
                                      RngState{est.seed, 0}, est.auto_damping, threads);
    std::vector<Vector> u(n);
    parallel_for(n, threads, [&](std::size_t i) { u[i] = ctx.solve(model.grad(tuned.params, train.samples[i])); });
    parallel_for(m, threads, [&](std::size_t j) {
      for (std::size_t i = 0; i < n; ++i) score_rows[j][i] = ctx.sample_score_from_solution(u[i], val.samples[j], eps);
    });
  } else if (est.variant == Variant::tracin) {
    std::vector<std::vector<Vector>> gtr(cps.size(), std::vector<Vector>(n));
    for (std::size_t c = 0; c < cps.size(); ++c)
      parallel_for(n, threads, [&](std::size_t i) { gtr[c][i] = model.grad(cps[c].params, train.samples[i]); });
    parallel_for(m, threads, [&](std::size_t j) {
      for (std::size_t c = 0; c < cps.size(); ++c) {
        const Vector gv = model.grad(cps[c].params, val.samples[j]);
        for (std::size_t i = 0; i < n; ++i) score_rows[j][i] += cps[c].learning_rate_at_step * dot(gv, gtr[c][i]);
      }
    });
  } else {
    const Checkpoint& c = cps.front();
    double eff = 0.0;
    const Cholesky factor = factor_damped_hessian(model, c.params, train, est.damping, est.auto_damping, eff, threads);
    std::vector<Vector> gtr(n);
    parallel_for(n, threads, [&](std::size_t i) { gtr[i] = model.grad(c.params, train.samples[i]); });
    parallel_for(m, threads, [&](std::size_t j) {
      const Vector sv = factor.solve(model.grad(c.params, val.samples[j]));
      for (std::size_t i = 0; i < n; ++i) score_rows[j][i] = dot(sv, gtr[i]);
    });
  }

  RecallSummary out;
  std::vector<double> recalls, aucs;
  for (std::size_t j = 0; j < m; ++j) {
    const int yv = val.samples[j].label;
    recalls.push_back(recall_at_s(score_rows[j], labels, yv, s, extreme));
    const auto flags = pseudo_label(labels, yv);
    const auto pos = std::count(flags.begin(), flags.end(), true);
    if (pos > 0 && static_cast<std::size_t>(pos) < flags.size()) {
      aucs.push_back(roc_auc(score_rows[j], flags,
                             extreme == Extreme::largest ? Direction::higher_is_noisier : Direction::lower_is_noisier));
    }
  }
  out.mean_recall = mean_of(recalls);
  out.mean_auc = mean_of(aucs);
  out.val_used = m;
  return out;
}

/// Plottable table: named columns, one row per checkpoint or tuning step.
struct SweepTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  nlohmann::json notes = nlohmann::json::object();

  std::string to_tsv() const {
    std::ostringstream os;
    os.precision(10);
    for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "\t" : "") << columns[c];
    os << '\n';
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "\t" : "") << r[c];
      os << '\n';
    }
    return os.str();
  }

  std::vector<double> column(const std::string& name) const {
    const auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw UsageError("sweep: no column " + name);
    const auto c = static_cast<std::size_t>(it - columns.begin());
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
};

inline nlohmann::json to_json(const SweepTable& t) {
  return {{"version", "iflab-sweep-1"}, {"columns", t.columns}, {"rows", t.rows}, {"notes", t.notes}};
}

struct SweepOptions {
  double gamma = 0.05;
  std::size_t sharpness_probes = 8;
  double damping = 0.01;
  bool auto_damping = true;
  std::size_t tracin_window = 5;
  std::size_t record_every = 100;  // tuning sweep granularity, in steps
};

/// Training sweep: one row per training checkpoint with validation accuracy
/// and risk, sharpness, and detection ROC AUC of standard IF evaluated at the
/// checkpoint and of TracIn over the checkpoints seen so far.
inline SweepTable epoch_sweep(const PreparedRun& run, const SweepOptions& opt, std::size_t threads = default_threads()) {
  const Model& model = run.model();
  const Task& task = run.task();
  const auto flags = task.train.noisy_flags();
  SweepTable t;
  t.columns = {"step", "val_accuracy", "val_risk", "sharpness_risk", "exact_if_auc", "tracin_auc"};
  const auto& cps = run.checkpoints();
  std::vector<Checkpoint> seen;
  for (std::size_t c = 0; c < cps.size(); ++c) {
    const auto& cp = cps[c];
    if (cp.tag != "init") seen.push_back(cp);
    Checkpoint as_star = cp;
    as_star.tag = "theta_star";
    EstimatorConfig ifc;
    ifc.variant = Variant::exact_if;
    ifc.damping = opt.damping;
    ifc.auto_damping = opt.auto_damping;
    const auto rep = score_dataset(ifc, model, task.train, task.val, std::vector<Checkpoint>{as_star}, threads);
    double tracin_auc = 0.5;
    if (!seen.empty()) {
      EstimatorConfig tc;
      tc.variant = Variant::tracin;
      std::vector<Checkpoint> window(seen.end() - static_cast<std::ptrdiff_t>(std::min(seen.size(), opt.tracin_window)),
                                     seen.end());
      const auto trep = score_dataset(tc, model, task.train, task.val, window, threads);
      tracin_auc = roc_auc(trep.scores_for(task.train), flags, trep.direction);
    }
    t.rows.push_back({static_cast<double>(cp.step), model.accuracy(cp.params, task.val),
                      model.batch_risk(cp.params, task.val),
                      sharpness_risk(model, cp.params, task.val, opt.gamma, opt.sharpness_probes,
                                     RngState{task.seed, c}.split(40)),
                      roc_auc(rep.scores_for(task.train), flags, rep.direction), tracin_auc});
  }
  const auto acc = t.column("val_accuracy");
  t.notes["pearson_val_accuracy_vs_exact_if_auc"] = pearson(acc, t.column("exact_if_auc"));
  t.notes["pearson_val_accuracy_vs_tracin_auc"] = pearson(acc, t.column("tracin_auc"));
  return t;
}

/// Median |standard IF score| over clean training samples at `params`.
inline double median_abs_clean_if(const PreparedRun& run, std::span<const double> params, double damping,
                                  bool auto_damping, std::size_t threads = default_threads()) {
  const Task& task = run.task();
  const ExactIfContext ctx(run.model(), params, task.train, task.val, damping, auto_damping, threads);
  std::vector<double> values(task.train.size(), -1.0);
  parallel_for(task.train.size(), threads, [&](std::size_t i) {
    const auto& s = task.train.samples[i];
    if (!s.is_noisy.value_or(false)) values[i] = std::abs(ctx.score(s));
  });
  std::vector<double> clean;
  for (double v : values)
    if (v >= 0.0) clean.push_back(v);
  if (clean.empty()) throw EmptySetError("median_abs_clean_if: no clean samples");
  std::sort(clean.begin(), clean.end());
  const std::size_t k = clean.size();
  return k % 2 ? clean[k / 2] : 0.5 * (clean[k / 2 - 1] + clean[k / 2]);
}

/// Tuning sweep from theta*: every record_every steps, validation accuracy,
/// risk and sharpness, standard-IF detection AUC at the current parameters,
/// the validation-minima quadratic-form AUC (diagonal Fisher), and the
/// median |standard IF| over clean training samples.
inline SweepTable tuning_sweep(const PreparedRun& run, bool flat, const SweepOptions& opt,
                               std::size_t threads = default_threads()) {
  const Model& model = run.model();
  const Task& task = run.task();
  const auto flags = task.train.noisy_flags();
  SweepTable t;
  t.columns = {"step", "val_accuracy", "val_risk", "sharpness_risk", "exact_if_auc", "vm_quadratic_auc",
               "median_abs_clean_if"};
  auto record = [&](std::size_t step, const Vector& params) {
    Checkpoint as_star{params, step, 0.0, "theta_star"};
    Checkpoint as_tuned{params, step, 0.0, flat ? "fvm" : "vm"};
    EstimatorConfig ifc;
    ifc.variant = Variant::exact_if;
    ifc.damping = opt.damping;
    ifc.auto_damping = opt.auto_damping;
    const auto rep = score_dataset(ifc, model, task.train, task.val, std::vector<Checkpoint>{as_star}, threads);
    EstimatorConfig vmc;
    vmc.variant = flat ? Variant::fvm : Variant::vm;
    vmc.backend = HessianBackend::diag_fisher;
    vmc.damping = opt.damping;
    const auto vrep = score_dataset(vmc, model, task.train, task.val, std::vector<Checkpoint>{as_tuned}, threads);
    t.rows.push_back({static_cast<double>(step), model.accuracy(params, task.val), model.batch_risk(params, task.val),
                      sharpness_risk(model, params, task.val, opt.gamma, opt.sharpness_probes,
                                     RngState{task.seed, step}.split(41)),
                      roc_auc(rep.scores_for(task.train), flags, rep.direction),
                      roc_auc(vrep.scores_for(task.train), flags, vrep.direction),
                      median_abs_clean_if(run, params, opt.damping, opt.auto_damping, threads)});
  };
  const Checkpoint& start = run.theta_star();
  record(start.step, start.params);
  std::vector<std::pair<std::size_t, Vector>> snapshots;
  const std::size_t every = std::max<std::size_t>(1, opt.record_every);
  tune_task(task, model, start, flat, [&](std::size_t step, const Vector& params) {
    if ((step - start.step) % every == 0) snapshots.emplace_back(step, params);
  });
  for (const auto& [step, params] : snapshots) record(step, params);
  return t;
}

}  // namespace iflab
