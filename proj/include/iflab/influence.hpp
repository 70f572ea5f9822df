#pragma once

// Influence estimators: standard influence functions (explicit inverse and
// LiSSA), TracIn, and the validation-minima estimators (VM on a plainly
// tuned checkpoint, FVM on a SAM-tuned one) with explicit, LiSSA and
// diagonal-Fisher inverse-Hessian backends.
//
// Sign conventions. Standard IF and TracIn are signed: a positive score
// means removing the sample raises validation risk (the sample helps), so
// mislabeled samples sit at the low end (lower_is_noisier). VM/FVM scores
// are quadratic forms g^T H^{-1} g >= 0 and large values flag mislabeled
// samples (higher_is_noisier).

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iflab/data.hpp"
#include "iflab/errors.hpp"
#include "iflab/model.hpp"
#include "iflab/numerics.hpp"
#include "iflab/parallel.hpp"

namespace iflab {

enum class Variant { exact_if, lissa_if, tracin, vm, fvm };
enum class HessianBackend { explicit_inverse, lissa, diag_fisher };
enum class Direction { higher_is_noisier, lower_is_noisier };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::exact_if: return "exact_if";
    case Variant::lissa_if: return "lissa_if";
    case Variant::tracin: return "tracin";
    case Variant::vm: return "vm";
    case Variant::fvm: return "fvm";
  }
  return "?";
}

inline std::string_view to_string(HessianBackend b) {
  switch (b) {
    case HessianBackend::explicit_inverse: return "explicit";
    case HessianBackend::lissa: return "lissa";
    case HessianBackend::diag_fisher: return "diag_fisher";
  }
  return "?";
}

inline std::string_view to_string(Direction d) {
  return d == Direction::higher_is_noisier ? "higher_is_noisier" : "lower_is_noisier";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "exact_if" || s == "exact-if" || s == "if") return Variant::exact_if;
  if (s == "lissa_if" || s == "lissa-if" || s == "lissa") return Variant::lissa_if;
  if (s == "tracin") return Variant::tracin;
  if (s == "vm") return Variant::vm;
  if (s == "fvm") return Variant::fvm;
  throw UsageError("unknown estimator '" + std::string(s) + "'");
}

inline HessianBackend parse_backend(std::string_view s) {
  if (s == "explicit") return HessianBackend::explicit_inverse;
  if (s == "lissa") return HessianBackend::lissa;
  if (s == "diag_fisher" || s == "diag-fisher") return HessianBackend::diag_fisher;
  throw UsageError("unknown hessian backend '" + std::string(s) + "'");
}

inline Direction direction_of(Variant v) {
  return (v == Variant::vm || v == Variant::fvm) ? Direction::higher_is_noisier : Direction::lower_is_noisier;
}

struct LissaConfig {
  std::size_t depth = 500;
  std::size_t repeats = 4;
  double scale = 0.0;           // 0: 1.5x a power-iteration estimate of |H + damping I|
  std::size_t batch_size = 0;   // 0: full-batch HVPs (then repeats are identical)
};

struct EstimatorConfig {
  Variant variant = Variant::fvm;
  double damping = 0.01;
  double epsilon = 0.0;  // second-order weight of the per-sample score; 0: 1/N
  LissaConfig lissa;
  HessianBackend backend = HessianBackend::diag_fisher;
  std::size_t probes = 0;  // >0: randomized quadratic form with the lissa backend
  bool auto_damping = false;  // escalate damping x10 until the Hessian factorizes
  std::uint64_t seed = 0;

  void validate() const {
    if (!(damping >= 0.0)) throw UsageError("estimator: damping must be >= 0");
    if (!(epsilon >= 0.0)) throw UsageError("estimator: epsilon must be > 0 (or 0 for 1/N)");
    if (!(lissa.scale >= 0.0)) throw UsageError("estimator: lissa.scale must be > 0 (or 0 for auto)");
  }
};

inline nlohmann::json summary(const EstimatorConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"damping", c.damping},
          {"epsilon", c.epsilon},
          {"backend", to_string(c.backend)},
          {"probes", c.probes},
          {"auto_damping", c.auto_damping},
          {"seed", c.seed},
          {"lissa",
           {{"depth", c.lissa.depth},
            {"repeats", c.lissa.repeats},
            {"scale", c.lissa.scale},
            {"batch_size", c.lissa.batch_size}}}};
}

/// Hessian-vector product callback: (v, repeat, iteration) -> H v.
using HvpOperator = std::function<Vector(std::span<const double>, std::size_t, std::size_t)>;

/// Largest eigenvalue magnitude of a symmetric operator by power iteration.
inline double power_iteration_norm(const HvpOperator& op, std::size_t dim, RngState rng,
                                   std::size_t iterations = 50) {
  Vector v = rand_gaussian(rng, dim);
  double lambda = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    const double n = norm2(v);
    if (n == 0.0) return 0.0;
    for (double& x : v) x /= n;
    Vector w = op(v, 0, it);
    lambda = norm2(w);
    v = std::move(w);
  }
  return lambda;
}

/// Truncated Neumann series r <- v + (I - (H + damping I)/scale) r, run for
/// `depth` iterations from r = v, averaged over repeats and divided by scale.
/// Approximates (H + damping I)^{-1} v when |H + damping I| < scale.
inline Vector lissa_ihvp(const HvpOperator& hvp_op, std::span<const double> v, std::size_t depth,
                         std::size_t repeats, double scale, double damping) {
  if (!(scale > 0.0)) throw UsageError("lissa: scale must be > 0");
  if (repeats < 1) throw UsageError("lissa: repeats must be >= 1");
  const double vnorm = std::max(norm2(v), 1e-300);
  Vector total(v.size(), 0.0);
  for (std::size_t rep = 0; rep < repeats; ++rep) {
    Vector r(v.begin(), v.end());
    for (std::size_t t = 0; t < depth; ++t) {
      const Vector hr = hvp_op(r, rep, t);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = v[i] + r[i] - (hr[i] + damping * r[i]) / scale;
      const double rn = norm2(r);
      if (!std::isfinite(rn) || rn > 1e6 * vnorm) {
        throw DivergenceError("lissa: iterate norm grew past 1e6 |v| at iteration " + std::to_string(t) +
                                  "; use a larger scale",
                              t);
      }
    }
    axpy(1.0, r, total);
  }
  for (double& x : total) x /= (static_cast<double>(repeats) * scale);
  return total;
}

/// Model-backed HVP operator; minibatches are drawn per (repeat, iteration)
/// from a stream derived from `rng`.
inline HvpOperator model_hvp_operator(const Model& model, std::span<const double> theta, const Dataset& data,
                                      std::size_t batch_size, RngState rng) {
  Vector params(theta.begin(), theta.end());
  if (batch_size == 0 || batch_size >= data.size()) {
    return [&model, &data, params](std::span<const double> v, std::size_t, std::size_t) {
      return model.hvp(params, data, v);
    };
  }
  return [&model, &data, params, batch_size, rng](std::span<const double> v, std::size_t rep, std::size_t t) {
    RngState stream = rng.split(rep * 1000003ULL + t);
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = stream.uniform_index(data.size());
    return model.hvp(params, data, idx, v);
  };
}

inline double lissa_auto_scale(const HvpOperator& op, std::size_t dim, double damping, RngState rng) {
  return 1.5 * (power_iteration_norm(op, dim, rng) + damping);
}

/// LiSSA against a model's batch Hessian at theta.
inline Vector lissa_ihvp(std::span<const double> v, const Dataset& data, const Model& model,
                         std::span<const double> theta, const LissaConfig& cfg, double damping,
                         RngState rng = {}) {
  const HvpOperator op = model_hvp_operator(model, theta, data, cfg.batch_size, rng.split(1));
  const double scale = cfg.scale > 0.0 ? cfg.scale : lissa_auto_scale(op, v.size(), damping, rng.split(2));
  return lissa_ihvp(op, v, cfg.depth, cfg.repeats, scale, damping);
}

/// Diagonal of the empirical Fisher of a set, plus damping.
struct DiagonalPreconditioner {
  Vector diag;

  Vector apply_inverse(std::span<const double> g) const {
    detail::require_same_size(g.size(), diag.size(), "DiagonalPreconditioner");
    Vector out(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!(diag[j] > 0.0))
        throw DefinitenessError("diagonal preconditioner entry " + std::to_string(j) + " is not positive", j);
      out[j] = g[j] / diag[j];
    }
    return out;
  }

  double quadratic_form(std::span<const double> g) const { return dot(g, apply_inverse(g)); }
};

inline DiagonalPreconditioner diag_from_gradients(std::span<const Vector> grads, double damping) {
  if (grads.empty()) throw EmptySetError("build_diag_fisher: empty set");
  DiagonalPreconditioner p{Vector(grads.front().size(), 0.0)};
  for (const auto& g : grads)
    for (std::size_t j = 0; j < g.size(); ++j) p.diag[j] += g[j] * g[j];
  for (double& d : p.diag) d = d / static_cast<double>(grads.size()) + damping;
  return p;
}

inline DiagonalPreconditioner build_diag_fisher(const Dataset& val_set, const Model& model,
                                                std::span<const double> theta, double damping) {
  if (val_set.empty()) throw EmptySetError("build_diag_fisher: empty set");
  std::vector<Vector> grads;
  grads.reserve(val_set.size());
  for (const auto& s : val_set.samples) grads.push_back(model.grad(theta, s));
  return diag_from_gradients(grads, damping);
}

/// Mean over probes of (g^T A^{-1} V)(V^T g) with V ~ N(0, I), given
/// precomputed pairs (V, A^{-1} V). Unbiased for g^T A^{-1} g.
struct ProbeSet {
  std::vector<Vector> probes;
  std::vector<Vector> solved;

  double quadratic_form(std::span<const double> g) const {
    double s = 0.0;
    for (std::size_t k = 0; k < probes.size(); ++k) s += dot(g, solved[k]) * dot(probes[k], g);
    return s / static_cast<double>(probes.size());
  }
};

template <typename InverseApply>
ProbeSet make_probe_set(InverseApply&& inverse_apply, std::size_t dim, std::size_t count, RngState rng) {
  if (count < 1) throw UsageError("probe estimator needs at least one probe");
  ProbeSet set;
  for (std::size_t k = 0; k < count; ++k) {
    set.probes.push_back(rand_gaussian(rng, dim));
    set.solved.push_back(inverse_apply(set.probes.back()));
  }
  return set;
}

/// Cholesky of (H + damping I), escalating damping by 10x on failure when
/// allowed. Reports the damping actually used.
inline Cholesky factor_damped_hessian(const Model& model, std::span<const double> theta, const Dataset& data,
                                      double damping, bool auto_damping, double& effective_damping,
                                      std::size_t threads = 1) {
  Matrix h = model.explicit_hessian(theta, data, 0.0, Model::kDefaultHessianCap, threads);
  double lambda = damping;
  for (int attempt = 0;; ++attempt) {
    Matrix damped = h;
    damped.add_to_diagonal(lambda);
    try {
      Cholesky c(damped);
      effective_damping = lambda;
      return c;
    } catch (const DefinitenessError&) {
      if (!auto_damping || attempt >= 12) throw;
      lambda = std::max(lambda * 10.0, 1e-6);
    }
  }
}

/// Set-level standard influence: mean validation gradient times
/// (H_train + damping I)^{-1} g_tr, factorized once and reused.
class ExactIfContext {
 public:
  ExactIfContext(const Model& model, std::span<const double> theta, const Dataset& train_set,
                 const Dataset& val_set, double damping, bool auto_damping = false, std::size_t threads = 1)
      : model_(model),
        theta_(theta.begin(), theta.end()),
        factor_(factor_damped_hessian(model, theta, train_set, damping, auto_damping, effective_damping_, threads)),
        mean_val_grad_(model.batch_grad(theta, val_set)) {}

  double score(const Sample& z) const { return score_gradient(model_.grad(theta_, z)); }

  double score_gradient(std::span<const double> g_tr) const { return dot(mean_val_grad_, factor_.solve(g_tr)); }

  /// Removal-direction parameter change eps * H^{-1} g.
  Vector parameter_change(const Sample& z, double eps) const { return scaled(factor_.solve(model_.grad(theta_, z)), eps); }

  double effective_damping() const noexcept { return effective_damping_; }
  std::span<const double> mean_val_grad() const noexcept { return mean_val_grad_; }

 private:
  const Model& model_;
  Vector theta_;
  double effective_damping_ = 0.0;
  Cholesky factor_;
  Vector mean_val_grad_;
};

inline double exact_if_set(const Model& model, const Sample& z_tr, const Dataset& train_set, const Dataset& val_set,
                           std::span<const double> theta_star, double damping) {
  return ExactIfContext(model, theta_star, train_set, val_set, damping).score(z_tr);
}

/// Standard influence with LiSSA: s = (H + damping I)^{-1} mean_val_grad is
/// solved once; the score of z is <s, g_z>.
class LissaIfContext {
 public:
  LissaIfContext(const Model& model, std::span<const double> theta, const Dataset& train_set,
                 const Dataset& val_set, const LissaConfig& cfg, double damping, RngState rng)
      : model_(model), theta_(theta.begin(), theta.end()) {
    const Vector gval = model.batch_grad(theta, val_set);
    s_val_ = lissa_ihvp(gval, train_set, model, theta, cfg, damping, rng);
  }

  double score(const Sample& z) const { return dot(s_val_, model_.grad(theta_, z)); }

 private:
  const Model& model_;
  Vector theta_;
  Vector s_val_;
};

/// Sum over checkpoints of lr_c * <mean validation gradient, g_tr>.
class TracInContext {
 public:
  TracInContext(const Model& model, std::span<const Checkpoint> checkpoints, std::span<const double> learning_rates,
                const Dataset& val_set)
      : model_(model) {
    if (checkpoints.empty()) throw UsageError("tracin: no checkpoints");
    if (checkpoints.size() != learning_rates.size())
      throw DimensionError("tracin: one learning rate per checkpoint required");
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
      params_.push_back(checkpoints[c].params);
      mean_val_grads_.push_back(model.batch_grad(checkpoints[c].params, val_set));
      lrs_.push_back(learning_rates[c]);
    }
  }

  double score(const Sample& z) const {
    double s = 0.0;
    for (std::size_t c = 0; c < params_.size(); ++c) s += lrs_[c] * dot(mean_val_grads_[c], model_.grad(params_[c], z));
    return s;
  }

 private:
  const Model& model_;
  std::vector<Vector> params_;
  std::vector<Vector> mean_val_grads_;
  std::vector<double> lrs_;
};

inline double tracin_score(const Model& model, const Sample& z_tr, const Dataset& val_set,
                           std::span<const Checkpoint> checkpoints, std::span<const double> learning_rates) {
  return TracInContext(model, checkpoints, learning_rates, val_set).score(z_tr);
}

inline void require_tuned(const Checkpoint& c) {
  if (c.tag != "vm" && c.tag != "fvm")
    throw UsageError("validation-minima influence needs a checkpoint tagged vm or fvm, got '" + c.tag + "'");
}

/// Inverse of the damped validation Hessian at a tuned checkpoint, behind
/// one of three backends, plus the quadratic-form scores built on it.
class ValidationMinimaContext {
 public:
  ValidationMinimaContext(const Model& model, const Checkpoint& tuned, const Dataset& val_set,
                          HessianBackend backend, double damping, std::size_t probes = 0,
                          const LissaConfig& lissa = {}, RngState rng = {}, bool auto_damping = false,
                          std::size_t threads = 1)
      : model_(model), theta_(tuned.params), val_(val_set), backend_(backend), damping_(damping),
        effective_damping_(damping), lissa_(lissa), rng_(rng) {
    require_tuned(tuned);
    if (val_set.empty()) throw EmptySetError("validation set is empty");
    switch (backend) {
      case HessianBackend::explicit_inverse:
        factor_.emplace(factor_damped_hessian(model, theta_, val_set, damping, auto_damping, effective_damping_, threads));
        break;
      case HessianBackend::diag_fisher:
        diag_ = build_diag_fisher(val_set, model, theta_, damping);
        break;
      case HessianBackend::lissa: {
        op_ = model_hvp_operator(model_, theta_, val_, lissa_.batch_size, rng_.split(1));
        scale_ = lissa_.scale > 0.0 ? lissa_.scale : lissa_auto_scale(op_, theta_.size(), damping_, rng_.split(2));
        if (probes > 0) {
          probe_set_ = make_probe_set([this](std::span<const double> v) { return solve(v); }, theta_.size(), probes,
                                      rng_.split(3));
        }
        break;
      }
    }
  }

  /// (H~ + damping I)^{-1} g, or P~^{-1} g for the diagonal backend.
  Vector solve(std::span<const double> g) const {
    switch (backend_) {
      case HessianBackend::explicit_inverse: return factor_->solve(g);
      case HessianBackend::diag_fisher: return diag_.apply_inverse(g);
      case HessianBackend::lissa: return lissa_ihvp(op_, g, lissa_.depth, lissa_.repeats, scale_, damping_);
    }
    return {};
  }

  double set_score_gradient(std::span<const double> g) const {
    if (backend_ == HessianBackend::lissa && probe_set_) return probe_set_->quadratic_form(g);
    if (backend_ == HessianBackend::diag_fisher) return diag_.quadratic_form(g);
    return dot(g, solve(g));
  }

  /// g~^T (H~_val)^{-1} g~ for the training sample.
  double set_score(const Sample& z_tr) const { return set_score_gradient(model_.grad(theta_, z_tr)); }

  /// Per-validation-sample score with the second-order loss change:
  /// <g~_val, u> + eps/2 * u^T Hess(l(z_val)) u, u = H~^{-1} g~_tr.
  double sample_score(const Sample& z_tr, const Sample& z_val, double eps) const {
    if (!(eps > 0.0)) throw UsageError("sample score: epsilon must be > 0");
    const Vector u = solve(model_.grad(theta_, z_tr));
    return sample_score_from_solution(u, z_val, eps);
  }

  double sample_score_from_solution(std::span<const double> u, const Sample& z_val, double eps) const {
    const double first = dot(model_.grad(theta_, z_val), u);
    const double second = dot(u, model_.hvp_sample(theta_, z_val, u));
    return first + 0.5 * eps * second;
  }

  const DiagonalPreconditioner& preconditioner() const noexcept { return diag_; }
  std::span<const double> params() const noexcept { return theta_; }
  double effective_damping() const noexcept { return effective_damping_; }

 private:
  const Model& model_;
  Vector theta_;
  const Dataset& val_;
  HessianBackend backend_;
  double damping_;
  double effective_damping_;
  LissaConfig lissa_;
  RngState rng_;
  std::optional<Cholesky> factor_;
  DiagonalPreconditioner diag_;
  HvpOperator op_;
  double scale_ = 0.0;
  std::optional<ProbeSet> probe_set_;
};

inline double vmfvm_set_score(const Model& model, const Sample& z_tr, const Dataset& val_set, const Checkpoint& tuned,
                              HessianBackend backend, double damping, std::size_t probes = 0,
                              const LissaConfig& lissa = {}) {
  return ValidationMinimaContext(model, tuned, val_set, backend, damping, probes, lissa).set_score(z_tr);
}

inline double vmfvm_sample_score(const Model& model, const Sample& z_tr, const Sample& z_val, const Dataset& val_set,
                                 const Checkpoint& tuned, double eps, double damping, HessianBackend backend,
                                 const LissaConfig& lissa = {}) {
  return ValidationMinimaContext(model, tuned, val_set, backend, damping, 0, lissa).sample_score(z_tr, z_val, eps);
}

inline constexpr std::string_view kInfluenceVersion = "iflab-inf-1";

struct InfluenceReport {
  nlohmann::json estimator;
  std::string checkpoint_tag;
  std::map<std::uint64_t, double> scores;
  Direction direction = Direction::lower_is_noisier;
  double wall_time = 0.0;

  /// Scores in the order of a dataset's samples.
  std::vector<double> scores_for(const Dataset& ds) const {
    std::vector<double> out;
    out.reserve(ds.size());
    for (const auto& s : ds.samples) {
      auto it = scores.find(s.id);
      if (it == scores.end()) throw UsageError("report has no score for id " + std::to_string(s.id));
      out.push_back(it->second);
    }
    return out;
  }
};

inline nlohmann::json to_json(const InfluenceReport& r) {
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& [id, s] : r.scores) scores.push_back({id, s});
  return {{"version", kInfluenceVersion}, {"estimator", r.estimator},  {"checkpoint_tag", r.checkpoint_tag},
          {"direction", to_string(r.direction)}, {"scores", scores}, {"wall_time", r.wall_time}};
}

inline InfluenceReport influence_report_from_json(const nlohmann::json& j) {
  if (j.value("version", std::string{}) != kInfluenceVersion)
    throw ParseError("not an " + std::string(kInfluenceVersion) + " report", 1);
  InfluenceReport r;
  r.estimator = j.at("estimator");
  r.checkpoint_tag = j.at("checkpoint_tag").get<std::string>();
  const std::string dir = j.at("direction").get<std::string>();
  r.direction = dir == "higher_is_noisier" ? Direction::higher_is_noisier : Direction::lower_is_noisier;
  for (const auto& pair : j.at("scores")) r.scores[pair.at(0).get<std::uint64_t>()] = pair.at(1).get<double>();
  r.wall_time = j.value("wall_time", 0.0);
  return r;
}

namespace detail {

inline const Checkpoint& find_checkpoint(std::span<const Checkpoint> cps, std::initializer_list<std::string_view> tags) {
  if (cps.empty()) throw UsageError("no checkpoints supplied");
  for (auto tag : tags)
    for (const auto& c : cps)
      if (c.tag == tag) return c;
  return cps.back();
}

}  // namespace detail

/// Per-sample scorer for any estimator variant; built once, read-only.
class Scorer {
 public:
  Scorer(const EstimatorConfig& cfg, const Model& model, const Dataset& train_set, const Dataset& val_set,
         std::span<const Checkpoint> checkpoints, std::size_t threads = 1)
      : cfg_(cfg) {
    cfg.validate();
    const RngState rng{cfg.seed, 0};
    switch (cfg.variant) {
      case Variant::exact_if: {
        const auto& c = detail::find_checkpoint(checkpoints, {"theta_star"});
        tag_ = c.tag;
        exact_.emplace(model, c.params, train_set, val_set, cfg.damping, cfg.auto_damping, threads);
        effective_damping_ = exact_->effective_damping();
        break;
      }
      case Variant::lissa_if: {
        const auto& c = detail::find_checkpoint(checkpoints, {"theta_star"});
        tag_ = c.tag;
        lissa_.emplace(model, c.params, train_set, val_set, cfg.lissa, cfg.damping, rng);
        break;
      }
      case Variant::tracin: {
        std::vector<double> lrs;
        for (const auto& c : checkpoints) lrs.push_back(c.learning_rate_at_step);
        tracin_.emplace(model, checkpoints, lrs, val_set);
        tag_ = "tracin:" + std::to_string(checkpoints.size());
        break;
      }
      case Variant::vm:
      case Variant::fvm: {
        const std::string_view want = cfg.variant == Variant::vm ? "vm" : "fvm";
        const Checkpoint* chosen = nullptr;
        for (const auto& c : checkpoints)
          if (c.tag == want) chosen = &c;
        if (!chosen) throw UsageError("estimator " + std::string(want) + " needs a checkpoint tagged " + std::string(want));
        tag_ = chosen->tag;
        vm_.emplace(model, *chosen, val_set, cfg.backend, cfg.damping, cfg.probes, cfg.lissa, rng, cfg.auto_damping,
                    threads);
        effective_damping_ = vm_->effective_damping();
        break;
      }
    }
  }

  double score(const Sample& z) const {
    if (exact_) return exact_->score(z);
    if (lissa_) return lissa_->score(z);
    if (tracin_) return tracin_->score(z);
    return vm_->set_score(z);
  }

  Direction direction() const noexcept { return direction_of(cfg_.variant); }
  const std::string& checkpoint_tag() const noexcept { return tag_; }
  double effective_damping() const noexcept { return effective_damping_; }

 private:
  EstimatorConfig cfg_;
  std::string tag_;
  double effective_damping_ = 0.0;
  std::optional<ExactIfContext> exact_;
  std::optional<LissaIfContext> lissa_;
  std::optional<TracInContext> tracin_;
  std::optional<ValidationMinimaContext> vm_;
};

/// Scores every training sample. Results depend only on the configuration,
/// never on the worker count.
inline InfluenceReport score_dataset(const EstimatorConfig& cfg, const Model& model, const Dataset& train_set,
                                     const Dataset& val_set, std::span<const Checkpoint> checkpoints,
                                     std::size_t threads = default_threads()) {
  const auto t0 = std::chrono::steady_clock::now();
  const Scorer scorer(cfg, model, train_set, val_set, checkpoints, threads);
  std::vector<double> values(train_set.size());
  parallel_for(train_set.size(), threads, [&](std::size_t i) { values[i] = scorer.score(train_set.samples[i]); });
  InfluenceReport r;
  r.estimator = summary(cfg);
  r.estimator["effective_damping"] = scorer.effective_damping();
  r.checkpoint_tag = scorer.checkpoint_tag();
  r.direction = scorer.direction();
  for (std::size_t i = 0; i < values.size(); ++i) r.scores[train_set.samples[i].id] = values[i];
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace iflab
