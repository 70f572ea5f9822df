#pragma once

// A desk-scale noisy-label task: Gaussian-mixture data split into a noisy
// training set and a clean validation set, a model, and the optimizer
// settings that produce theta* and the tuned checkpoints.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "iflab/data.hpp"
#include "iflab/model.hpp"
#include "iflab/optim.hpp"

namespace iflab {

struct TaskConfig {
  int num_classes = 2;
  std::size_t train_n = 100;
  std::size_t val_n = 100;
  std::size_t dim = 5;
  double class_sep = 2.0;
  NoiseSpec noise;
  ModelSpec model;  // input_dim and num_classes are filled from the data
  SgdConfig train;
  TuneConfig tune;  // the flat flag is set per estimator
};

struct Task {
  Dataset train;
  Dataset val;
  ModelSpec spec;
  SgdConfig train_cfg;
  TuneConfig tune_cfg;
  std::uint64_t seed = 0;
};

inline Task prepare_task(const TaskConfig& cfg, std::uint64_t seed) {
  RngState root{seed, 0};
  const std::size_t total = cfg.train_n + cfg.val_n;
  const auto k = static_cast<std::size_t>(cfg.num_classes);
  const std::size_t per_class = (total + k - 1) / k;
  RngState gen = root.split(10);
  Dataset all = gen_gaussian_mixture(cfg.num_classes, per_class, cfg.dim, cfg.class_sep, gen);
  // Trim to exactly train_n + val_n, dropping from the end.
  all.samples.resize(total);
  const double f_train = static_cast<double>(cfg.train_n) / static_cast<double>(total);
  RngState split_rng = root.split(11);
  auto parts = split(all, {f_train, 1.0 - f_train}, split_rng);
  RngState noise_rng = root.split(12);
  Task task;
  task.train = inject_label_noise(parts[0], cfg.noise, noise_rng).dataset;
  task.val = std::move(parts[1]);
  task.spec = cfg.model;
  task.spec.input_dim = cfg.dim;
  task.spec.num_classes = cfg.num_classes;
  task.spec.validate();
  task.train_cfg = cfg.train;
  task.tune_cfg = cfg.tune;
  task.seed = seed;
  return task;
}

inline std::vector<Checkpoint> train_task(const Task& task, const Model& model) {
  return train(model, task.train, task.train_cfg, RngState{task.seed, 0}.split(20));
}

inline Checkpoint tune_task(const Task& task, const Model& model, const Checkpoint& theta_star, bool flat,
                            const StepObserver& observer = {}) {
  TuneConfig cfg = task.tune_cfg;
  cfg.flat = flat;
  return tune_on_validation(model, theta_star, task.val, cfg, RngState{task.seed, 0}.split(21), observer);
}

}  // namespace iflab
