#pragma once

// SGD with momentum and cosine decay, SAM, training and validation tuning
// loops, the sharpness estimate of the gamma-ball worst-case risk, and the
// checkpoint file format.

#include <cmath>
#include <concepts>
#include <cstdio>
#include <cstddef>
#include <fstream>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iflab/data.hpp"
#include "iflab/errors.hpp"
#include "iflab/model.hpp"
#include "iflab/numerics.hpp"

namespace iflab {

/// Anything with a scalar value and a gradient at a flat parameter vector.
template <typename F>
concept Objective = requires(const F& f, std::span<const double> theta) {
  { f.value(theta) } -> std::convertible_to<double>;
  { f.gradient(theta) } -> std::convertible_to<Vector>;
};

/// Mean risk of a model over a full dataset.
struct DatasetObjective {
  const Model& model;
  const Dataset& data;

  double value(std::span<const double> theta) const { return model.batch_risk(theta, data); }
  Vector gradient(std::span<const double> theta) const { return model.batch_grad(theta, data); }
};

/// Mean risk of a model over a minibatch of a dataset.
struct MinibatchObjective {
  const Model& model;
  const Dataset& data;
  std::span<const std::size_t> batch;

  double value(std::span<const double> theta) const { return model.batch_risk(theta, data, batch); }
  Vector gradient(std::span<const double> theta) const { return model.batch_grad(theta, data, batch); }
};

enum class Schedule { constant, cosine };

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.0;
  std::size_t steps = 100;
  std::size_t batch_size = 32;  // >= dataset size means full batch
  Schedule schedule = Schedule::constant;
  std::size_t checkpoint_every = 0;  // 0: only the initial and final checkpoints
  // Full-batch runs stop early once |grad| <= gradient_tolerance (0 disables).
  double gradient_tolerance = 0.0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw UsageError("sgd: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("sgd: momentum must be in [0, 1)");
    if (batch_size < 1) throw UsageError("sgd: batch_size must be >= 1");
    if (!(gradient_tolerance >= 0.0)) throw UsageError("sgd: gradient_tolerance must be >= 0");
  }
};

struct SamConfig {
  double gamma = 0.05;
  SgdConfig base;
};

struct TuneConfig {
  bool flat = false;
  SgdConfig sgd;
  double sam_gamma = 0.05;

  void validate() const {
    sgd.validate();
    if (flat && !(sam_gamma > 0.0)) throw UsageError("tune: sam_gamma must be > 0 when flat");
  }
};

inline double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (step > total_steps) throw UsageError("cosine_lr: step out of range");
  if (total_steps == 0) return base_lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

inline double scheduled_lr(const SgdConfig& cfg, std::size_t step) {
  return cfg.schedule == Schedule::cosine ? cosine_lr(cfg.learning_rate, step, cfg.steps) : cfg.learning_rate;
}

/// theta - lr * v with v <- momentum * v + grad. `velocity` may start empty.
inline Vector descend(std::span<const double> theta, std::span<const double> g, double lr, double momentum,
                      Vector& velocity) {
  if (!(lr > 0.0)) throw UsageError("step: learning rate must be > 0");
  if (velocity.empty()) velocity.assign(theta.size(), 0.0);
  Vector next(theta.begin(), theta.end());
  for (std::size_t i = 0; i < next.size(); ++i) {
    velocity[i] = momentum * velocity[i] + g[i];
    next[i] -= lr * velocity[i];
  }
  return next;
}

template <Objective F>
Vector sgd_step(const F& objective, std::span<const double> theta, double lr, double momentum, Vector& velocity) {
  const Vector g = objective.gradient(theta);
  return descend(theta, g, lr, momentum, velocity);
}

template <Objective F>
Vector sgd_step(const F& objective, std::span<const double> theta, double lr) {
  Vector velocity;
  return sgd_step(objective, theta, lr, 0.0, velocity);
}

/// Ascent offset gamma * g / |g|.
inline Vector sam_ascent_offset(std::span<const double> g, double gamma) {
  const double n = norm2(g);
  return n < 1e-12 ? Vector(g.size(), 0.0) : scaled(g, gamma / n);
}

/// Gradient at theta + gamma * g/|g| followed by a descent step from theta.
/// Falls back to plain SGD when |g| < 1e-12.
template <Objective F>
Vector sam_step(const F& objective, std::span<const double> theta, double lr, double gamma, double momentum,
                Vector& velocity) {
  if (!(gamma > 0.0)) throw UsageError("sam_step: gamma must be > 0");
  const Vector g = objective.gradient(theta);
  if (norm2(g) < 1e-12) return descend(theta, g, lr, momentum, velocity);
  const Vector perturbed = add(theta, sam_ascent_offset(g, gamma));
  const Vector g_sharp = objective.gradient(perturbed);
  return descend(theta, g_sharp, lr, momentum, velocity);
}

template <Objective F>
Vector sam_step(const F& objective, std::span<const double> theta, double lr, double gamma) {
  Vector velocity;
  return sam_step(objective, theta, lr, gamma, 0.0, velocity);
}

/// Without-replacement minibatches, reshuffled each epoch from a seeded
/// stream. Batches never straddle an epoch boundary; full-batch requests
/// return all indices in order.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::size_t batch_size, RngState rng)
      : n_(n), batch_(batch_size), rng_(rng) {}

  std::vector<std::size_t> next() {
    if (batch_ >= n_) {
      std::vector<std::size_t> all(n_);
      for (std::size_t i = 0; i < n_; ++i) all[i] = i;
      return all;
    }
    if (cursor_ >= order_.size()) {
      order_ = permutation(rng_, n_);
      cursor_ = 0;
    }
    const std::size_t end = std::min(order_.size(), cursor_ + batch_);
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return out;
  }

 private:
  std::size_t n_;
  std::size_t batch_;
  RngState rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Called with (step, params) after each optimizer step.
using StepObserver = std::function<void(std::size_t, const Vector&)>;

namespace detail {

/// Shared loop for training and tuning: plain SGD or SAM over minibatches.
inline Vector run_descent(const Model& model, const Dataset& data, Vector theta, const SgdConfig& cfg,
                          double sam_gamma, RngState rng, std::size_t& steps_done,
                          std::vector<Checkpoint>* checkpoints, std::size_t step_offset,
                          const StepObserver& observer) {
  cfg.validate();
  if (data.empty()) throw EmptySetError("optimizer: empty dataset");
  EpochSampler sampler(data.size(), cfg.batch_size, rng);
  const bool full_batch = cfg.batch_size >= data.size();
  Vector velocity;
  steps_done = 0;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const double lr = scheduled_lr(cfg, t);
    const auto batch = sampler.next();
    const MinibatchObjective objective{model, data, batch};
    Vector next;
    try {
      if (full_batch && cfg.gradient_tolerance > 0.0) {
        const Vector g = objective.gradient(theta);
        if (norm2(g) <= cfg.gradient_tolerance) break;
        if (sam_gamma > 0.0) {
          const Vector perturbed = add(theta, sam_ascent_offset(g, sam_gamma));
          next = descend(theta, objective.gradient(perturbed), lr, cfg.momentum, velocity);
        } else {
          next = descend(theta, g, lr, cfg.momentum, velocity);
        }
      } else if (sam_gamma > 0.0) {
        next = sam_step(objective, theta, lr, sam_gamma, cfg.momentum, velocity);
      } else {
        next = sgd_step(objective, theta, lr, cfg.momentum, velocity);
      }
    } catch (const NumericError& e) {
      throw DivergenceError(std::string("optimizer diverged: ") + e.what(), step_offset + t);
    }
    if (!all_finite(next)) throw DivergenceError("optimizer diverged: non-finite parameters", step_offset + t);
    theta = std::move(next);
    steps_done = t + 1;
    if (observer) observer(step_offset + steps_done, theta);
    if (checkpoints && cfg.checkpoint_every > 0 && steps_done % cfg.checkpoint_every == 0 &&
        steps_done < cfg.steps) {
      checkpoints->push_back(Checkpoint{theta, step_offset + steps_done, scheduled_lr(cfg, steps_done - 1),
                                        "step_" + std::to_string(step_offset + steps_done)});
    }
  }
  return theta;
}

}  // namespace detail

/// Trains from a seeded initialization. Emits the initial checkpoint, one
/// every checkpoint_every steps, and the final one tagged "theta_star".
inline std::vector<Checkpoint> train(const Model& model, const Dataset& train_set, const SgdConfig& cfg,
                                     RngState rng, const StepObserver& observer = {}) {
  if (train_set.empty()) throw EmptySetError("train: empty training set");
  cfg.validate();
  RngState init_rng = rng.split(0);
  Vector theta = model.init_params(init_rng);
  std::vector<Checkpoint> out;
  if (cfg.steps == 0) {
    out.push_back(Checkpoint{theta, 0, scheduled_lr(cfg, 0), "theta_star"});
    return out;
  }
  out.push_back(Checkpoint{theta, 0, scheduled_lr(cfg, 0), "init"});
  std::size_t done = 0;
  theta = detail::run_descent(model, train_set, std::move(theta), cfg, 0.0, rng.split(1), done, &out, 0, observer);
  out.push_back(Checkpoint{std::move(theta), done, scheduled_lr(cfg, done == 0 ? 0 : done - 1), "theta_star"});
  return out;
}

inline std::vector<Checkpoint> train(const ModelSpec& spec, const Dataset& train_set, const SgdConfig& cfg,
                                     RngState rng) {
  return train(Model(spec), train_set, cfg, rng);
}

/// Fine-tunes a trained checkpoint on the validation set: SAM when cfg.flat
/// (tag "fvm"), plain SGD otherwise (tag "vm").
inline Checkpoint tune_on_validation(const Model& model, const Checkpoint& start, const Dataset& val_set,
                                     const TuneConfig& cfg, RngState rng, const StepObserver& observer = {}) {
  cfg.validate();
  if (start.params.size() != model.num_params())
    throw DimensionError("tune_on_validation: checkpoint does not match model");
  std::size_t done = 0;
  Vector theta = detail::run_descent(model, val_set, start.params, cfg.sgd, cfg.flat ? cfg.sam_gamma : 0.0,
                                     rng, done, nullptr, start.step, observer);
  return Checkpoint{std::move(theta), start.step + done,
                    done == 0 ? start.learning_rate_at_step : scheduled_lr(cfg.sgd, done - 1),
                    cfg.flat ? "fvm" : "vm"};
}

/// Lower-bound estimate of max_{|d| <= gamma} risk(theta + d): the best of
/// the SAM ascent point and num_probes random directions scaled to norm
/// gamma, floored at risk(theta). Probes are drawn sequentially, so a larger
/// num_probes with the same stream evaluates a superset of candidates.
template <Objective F>
double sharpness_risk(const F& objective, std::span<const double> theta, double gamma, std::size_t num_probes,
                      RngState rng) {
  if (!(gamma > 0.0)) throw UsageError("sharpness_risk: gamma must be > 0");
  if (num_probes < 1) throw UsageError("sharpness_risk: num_probes must be >= 1");
  double best = objective.value(theta);
  const Vector g = objective.gradient(theta);
  if (norm2(g) > 0.0) best = std::max(best, objective.value(add(theta, sam_ascent_offset(g, gamma))));
  for (std::size_t k = 0; k < num_probes; ++k) {
    Vector d = rand_gaussian(rng, theta.size());
    const double n = norm2(d);
    for (double& v : d) v *= gamma / n;
    best = std::max(best, objective.value(add(theta, d)));
  }
  return best;
}

inline double sharpness_risk(const Model& model, std::span<const double> theta, const Dataset& data, double gamma,
                             std::size_t num_probes, RngState rng) {
  if (data.empty()) throw EmptySetError("sharpness_risk: empty dataset");
  return sharpness_risk(DatasetObjective{model, data}, theta, gamma, num_probes, rng);
}

// Checkpoint files: JSON with a leading magic field.

inline constexpr std::string_view kCheckpointMagic = "IFLAB-CKPT-1";

inline nlohmann::json spec_to_json(const ModelSpec& spec) {
  return {{"kind", to_string(spec.kind)},
          {"input_dim", spec.input_dim},
          {"num_classes", spec.num_classes},
          {"hidden_sizes", spec.hidden_sizes},
          {"activation", to_string(spec.activation)},
          {"weight_decay", spec.weight_decay}};
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  const std::string kind = j.value("kind", std::string("logistic"));
  if (kind == "logistic") s.kind = ModelKind::logistic;
  else if (kind == "mlp") s.kind = ModelKind::mlp;
  else throw UsageError("model kind must be logistic or mlp");
  s.input_dim = j.value("input_dim", std::size_t{1});
  s.num_classes = j.value("num_classes", 2);
  s.hidden_sizes = j.value("hidden_sizes", std::vector<std::size_t>{});
  const std::string act = j.value("activation", std::string("tanh"));
  if (act == "tanh") s.activation = Activation::tanh;
  else if (act == "relu") s.activation = Activation::relu;
  else throw UsageError("activation must be tanh or relu");
  s.weight_decay = j.value("weight_decay", 0.0);
  s.validate();
  return s;
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& c, const ModelSpec& spec) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(spec.hash()));
  return {{"magic", kCheckpointMagic}, {"spec_hash", hash},        {"model", spec_to_json(spec)},
          {"step", c.step},            {"learning_rate", c.learning_rate_at_step}, {"tag", c.tag},
          {"params", c.params}};
}

struct LoadedCheckpoint {
  Checkpoint checkpoint;
  ModelSpec spec;
};

inline LoadedCheckpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("magic", std::string{}) != kCheckpointMagic)
    throw ParseError("not an " + std::string(kCheckpointMagic) + " checkpoint", 1);
  LoadedCheckpoint out;
  try {
    out.spec = spec_from_json(j.at("model"));
    out.checkpoint.step = j.at("step").get<std::size_t>();
    out.checkpoint.learning_rate_at_step = j.at("learning_rate").get<double>();
    out.checkpoint.tag = j.at("tag").get<std::string>();
    out.checkpoint.params = j.at("params").get<Vector>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint field: ") + e.what(), 1);
  }
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(out.spec.hash()));
  if (j.value("spec_hash", std::string{}) != hash) throw ParseError("checkpoint spec_hash mismatch", 1);
  if (out.checkpoint.params.size() != make_layout(out.spec).total)
    throw ParseError("checkpoint parameter count does not match its model", 1);
  return out;
}

inline void save_checkpoint(const Checkpoint& c, const ModelSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << kCheckpointMagic << '\n' << checkpoint_to_json(c, spec).dump() << '\n';
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) throw ParseError("missing " + std::string(kCheckpointMagic) + " header", 1);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.what(), 1);
  }
  return checkpoint_from_json(j);
}

}  // namespace iflab
