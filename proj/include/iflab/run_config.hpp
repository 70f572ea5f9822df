#pragma once

// Run configuration files and the on-disk layout of a run's artifacts.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iflab/data.hpp"
#include "iflab/errors.hpp"
#include "iflab/experiments.hpp"
#include "iflab/influence.hpp"
#include "iflab/optim.hpp"
#include "iflab/task.hpp"

namespace iflab {

inline constexpr std::string_view kRunVersion = "iflab-run-1";

struct RunConfig {
  TaskConfig task;
  // Either both dataset files or neither; without them the task is generated.
  std::optional<std::string> train_data;
  std::optional<std::string> val_data;
  std::vector<EstimatorConfig> estimators;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "iflab-out";
  SweepOptions sweep;
  std::size_t recall_val = 50;  // validation points scored in the recall protocol

  void validate() const {
    if (seeds.empty()) throw UsageError("run config: at least one seed is required");
    if (train_data.has_value() != val_data.has_value())
      throw UsageError("run config: train_data and val_data must be given together");
    for (const auto* p : {&train_data, &val_data})
      if (*p && !std::filesystem::exists(**p)) throw UsageError("run config: file '" + **p + "' does not exist");
    for (const auto& e : estimators) e.validate();
  }
};

namespace detail {

inline nlohmann::json sgd_to_json(const SgdConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"schedule", c.schedule == Schedule::cosine ? "cosine" : "constant"},
          {"checkpoint_every", c.checkpoint_every},
          {"gradient_tolerance", c.gradient_tolerance}};
}

inline SgdConfig sgd_from_json(const nlohmann::json& j, SgdConfig c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("schedule")) {
    const auto s = j.at("schedule").get<std::string>();
    if (s == "cosine") c.schedule = Schedule::cosine;
    else if (s == "constant") c.schedule = Schedule::constant;
    else throw UsageError("schedule must be constant or cosine");
  }
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.gradient_tolerance = j.value("gradient_tolerance", c.gradient_tolerance);
  c.validate();
  return c;
}

}  // namespace detail

inline nlohmann::json estimator_to_json(const EstimatorConfig& c) { return summary(c); }

inline EstimatorConfig estimator_from_json(const nlohmann::json& j) {
  EstimatorConfig c;
  if (j.is_string()) {
    c.variant = parse_variant(j.get<std::string>());
    return c;
  }
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.damping = j.value("damping", c.damping);
  c.epsilon = j.value("epsilon", c.epsilon);
  if (j.contains("backend")) c.backend = parse_backend(j.at("backend").get<std::string>());
  c.probes = j.value("probes", c.probes);
  c.auto_damping = j.value("auto_damping", c.auto_damping);
  c.seed = j.value("seed", c.seed);
  if (j.contains("lissa")) {
    const auto& l = j.at("lissa");
    c.lissa.depth = l.value("depth", c.lissa.depth);
    c.lissa.repeats = l.value("repeats", c.lissa.repeats);
    c.lissa.scale = l.value("scale", c.lissa.scale);
    c.lissa.batch_size = l.value("batch_size", c.lissa.batch_size);
  }
  c.validate();
  return c;
}

inline nlohmann::json run_config_to_json(const RunConfig& r) {
  const auto& t = r.task;
  // The model's dims always follow the task's.
  ModelSpec model = t.model;
  model.input_dim = t.dim;
  model.num_classes = t.num_classes;
  nlohmann::json task = {{"num_classes", t.num_classes},
                         {"train_n", t.train_n},
                         {"val_n", t.val_n},
                         {"dim", t.dim},
                         {"class_sep", t.class_sep},
                         {"noise",
                          {{"kind", t.noise.kind == NoiseKind::symmetric ? "symmetric" : "pairflip"},
                           {"rate", t.noise.rate}}},
                         {"model", spec_to_json(model)},
                         {"train", detail::sgd_to_json(t.train)},
                         {"tune", detail::sgd_to_json(t.tune.sgd)},
                         {"sam_gamma", t.tune.sam_gamma}};
  nlohmann::json est = nlohmann::json::array();
  for (const auto& e : r.estimators) est.push_back(estimator_to_json(e));
  nlohmann::json j = {{"version", kRunVersion},
                      {"task", task},
                      {"estimators", est},
                      {"seeds", r.seeds},
                      {"output_dir", r.output_dir},
                      {"recall_val", r.recall_val},
                      {"sweep",
                       {{"gamma", r.sweep.gamma},
                        {"sharpness_probes", r.sweep.sharpness_probes},
                        {"damping", r.sweep.damping},
                        {"record_every", r.sweep.record_every}}}};
  if (r.train_data) j["train_data"] = *r.train_data;
  if (r.val_data) j["val_data"] = *r.val_data;
  return j;
}

/// Relative dataset paths resolve against base_dir (the config's directory).
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  if (j.value("version", std::string{}) != kRunVersion)
    throw ParseError("run config: version must be " + std::string(kRunVersion), 1);
  RunConfig r;
  try {
    if (j.contains("task")) {
      const auto& t = j.at("task");
      auto& c = r.task;
      c.num_classes = t.value("num_classes", c.num_classes);
      c.train_n = t.value("train_n", c.train_n);
      c.val_n = t.value("val_n", c.val_n);
      c.dim = t.value("dim", c.dim);
      c.class_sep = t.value("class_sep", c.class_sep);
      if (t.contains("noise")) {
        const auto& n = t.at("noise");
        if (n.is_string()) {
          c.noise = noise_preset(n.get<std::string>());
        } else {
          const auto kind = n.value("kind", std::string("symmetric"));
          if (kind == "symmetric") c.noise.kind = NoiseKind::symmetric;
          else if (kind == "pairflip") c.noise.kind = NoiseKind::asymmetric_pairflip;
          else throw UsageError("noise kind must be symmetric or pairflip");
          c.noise.rate = n.value("rate", 0.0);
        }
      }
      if (t.contains("model")) {
        nlohmann::json m = t.at("model");
        m["input_dim"] = c.dim;
        m["num_classes"] = c.num_classes;
        c.model = spec_from_json(m);
      }
      if (t.contains("train")) c.train = detail::sgd_from_json(t.at("train"), c.train);
      if (t.contains("tune")) c.tune.sgd = detail::sgd_from_json(t.at("tune"), c.tune.sgd);
      c.tune.sam_gamma = t.value("sam_gamma", c.tune.sam_gamma);
    }
    if (j.contains("estimators"))
      for (const auto& e : j.at("estimators")) r.estimators.push_back(estimator_from_json(e));
    if (j.contains("seeds")) r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.output_dir = j.value("output_dir", r.output_dir);
    r.recall_val = j.value("recall_val", r.recall_val);
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      r.sweep.gamma = s.value("gamma", r.sweep.gamma);
      r.sweep.sharpness_probes = s.value("sharpness_probes", r.sweep.sharpness_probes);
      r.sweep.damping = s.value("damping", r.sweep.damping);
      r.sweep.record_every = s.value("record_every", r.sweep.record_every);
    }
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path path(p);
      return (path.is_absolute() || base_dir.empty() ? path : base_dir / path).string();
    };
    if (j.contains("train_data")) r.train_data = resolve(j.at("train_data").get<std::string>());
    if (j.contains("val_data")) r.val_data = resolve(j.at("val_data").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("run config: ") + e.what(), 1);
  }
  r.validate();
  return r;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open run config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("run config: ") + e.what(), 1);
  }
  return run_config_from_json(j, std::filesystem::path(path).parent_path());
}

/// The task for one seed: generated, or loaded from the configured files.
inline Task make_task(const RunConfig& cfg, std::uint64_t seed) {
  if (!cfg.train_data) return prepare_task(cfg.task, seed);
  Task t;
  t.train = load_dataset(*cfg.train_data);
  t.val = load_dataset(*cfg.val_data);
  if (t.train.empty() || t.val.empty()) throw EmptySetError("run config: dataset files must not be empty");
  if (t.train.dim != t.val.dim || t.train.num_classes != t.val.num_classes)
    throw DimensionError("run config: train and validation files disagree on dim or K");
  t.spec = cfg.task.model;
  t.spec.input_dim = t.train.dim;
  t.spec.num_classes = t.train.num_classes;
  t.spec.validate();
  t.train_cfg = cfg.task.train;
  t.tune_cfg = cfg.task.tune;
  t.seed = seed;
  return t;
}

// Artifacts of one seed live in <output_dir>/seed_<s>/.

inline std::filesystem::path seed_dir(const RunConfig& cfg, std::uint64_t seed) {
  return std::filesystem::path(cfg.output_dir) / ("seed_" + std::to_string(seed));
}

inline std::filesystem::path checkpoint_path(const RunConfig& cfg, std::uint64_t seed, const std::string& tag) {
  return seed_dir(cfg, seed) / ("ckpt_" + tag + ".json");
}

inline void save_training_run(const RunConfig& cfg, std::uint64_t seed, const ModelSpec& spec,
                              const std::vector<Checkpoint>& cps) {
  std::filesystem::create_directories(seed_dir(cfg, seed));
  nlohmann::json index = nlohmann::json::array();
  for (const auto& c : cps) {
    save_checkpoint(c, spec, checkpoint_path(cfg, seed, c.tag).string());
    index.push_back(c.tag);
  }
  std::ofstream(seed_dir(cfg, seed) / "checkpoints.json") << index.dump() << '\n';
}

inline std::optional<std::vector<Checkpoint>> load_training_run(const RunConfig& cfg, std::uint64_t seed,
                                                                const ModelSpec& spec) {
  const auto index_path = seed_dir(cfg, seed) / "checkpoints.json";
  if (!std::filesystem::exists(index_path)) return std::nullopt;
  std::ifstream in(index_path);
  const auto tags = nlohmann::json::parse(in).get<std::vector<std::string>>();
  std::vector<Checkpoint> cps;
  for (const auto& tag : tags) {
    auto loaded = load_checkpoint(checkpoint_path(cfg, seed, tag).string());
    if (loaded.spec.hash() != spec.hash())
      throw UsageError("checkpoint '" + tag + "' was trained with a different model spec");
    cps.push_back(std::move(loaded.checkpoint));
  }
  return cps;
}

/// Loads a seed's saved training run and tuned checkpoints when present,
/// otherwise trains (and saves when persist is set).
inline std::unique_ptr<PreparedRun> open_run(const RunConfig& cfg, std::uint64_t seed, bool persist) {
  Task task = make_task(cfg, seed);
  const ModelSpec spec = task.spec;
  std::unique_ptr<PreparedRun> run;
  if (auto cps = load_training_run(cfg, seed, spec)) {
    run = std::make_unique<PreparedRun>(std::move(task), std::move(*cps));
  } else {
    run = std::make_unique<PreparedRun>(std::move(task));
    if (persist) save_training_run(cfg, seed, spec, run->checkpoints());
  }
  for (const char* tag : {"vm", "fvm"}) {
    const auto p = checkpoint_path(cfg, seed, tag);
    if (std::filesystem::exists(p)) run->set_tuned(load_checkpoint(p.string()).checkpoint);
  }
  return run;
}

}  // namespace iflab
