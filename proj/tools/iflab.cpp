// iflab: command-line driver for the influence-estimation pipeline.
//
// Exit codes: 0 success, 1 usage error (message on stderr), 2 runtime error.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "iflab/experiments.hpp"
#include "iflab/oracle_bounds.hpp"
#include "iflab/run_config.hpp"

namespace fs = std::filesystem;
using namespace iflab;

namespace {

struct Common {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> estimators;
  std::string output_dir;
  std::size_t threads = 0;
};

void add_common(CLI::App* app, Common& c, bool with_estimator) {
  app->add_option("--config", c.config, "RunConfig JSON file")->required()->check(CLI::ExistingFile);
  app->add_option("--seed", c.seeds, "Override the config's seeds");
  app->add_option("--out", c.output_dir, "Override the output directory");
  app->add_option("--threads", c.threads, "Worker count (default: IFLAB_THREADS or hardware)");
  if (with_estimator) app->add_option("--estimator", c.estimators, "exact_if, lissa_if, tracin, vm or fvm");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = load_run_config(c.config);
  if (!c.seeds.empty()) cfg.seeds = c.seeds;
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  if (!c.estimators.empty()) {
    std::vector<EstimatorConfig> chosen;
    for (const auto& name : c.estimators) {
      const Variant v = parse_variant(name);
      auto it = std::find_if(cfg.estimators.begin(), cfg.estimators.end(),
                             [&](const EstimatorConfig& e) { return e.variant == v; });
      EstimatorConfig e;
      if (it != cfg.estimators.end()) e = *it;
      e.variant = v;
      chosen.push_back(e);
    }
    cfg.estimators = chosen;
  }
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  return cfg;
}

std::size_t threads_of(const Common& c) { return c.threads ? c.threads : default_threads(); }

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& s) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << s;
}

/// Tuned checkpoints needed by an estimator are saved once computed.
void persist_tuned(const RunConfig& cfg, const PreparedRun& run, Variant v) {
  if (v != Variant::vm && v != Variant::fvm) return;
  const bool flat = v == Variant::fvm;
  const auto path = checkpoint_path(cfg, run.task().seed, flat ? "fvm" : "vm");
  if (fs::exists(path)) return;
  fs::create_directories(path.parent_path());
  save_checkpoint(run.tuned(flat), run.task().spec, path.string());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_summary(const std::string& what, const MetricsReport& r, const std::vector<double>& values) {
  std::cout << what << " " << r.estimator << ": mean " << fmt(mean_of(values)) << " std " << fmt(std_of(values))
            << " over " << values.size() << " seed(s)\n";
}

int cmd_gen_data(int k, std::size_t n, std::size_t dim, const std::string& noise, double noise_rate,
                 double class_sep, std::uint64_t seed, const std::string& out, std::size_t val_n,
                 const std::string& val_out) {
  TaskConfig t;
  t.num_classes = k;
  t.train_n = n;
  t.val_n = val_n;
  t.dim = dim;
  t.class_sep = class_sep;
  t.noise = noise_preset(noise);
  if (noise_rate >= 0.0) t.noise.rate = noise_rate;
  if (val_n > 0 && val_out.empty()) throw UsageError("--val-n needs --val-out");
  Dataset train_set, val_set;
  bool too_few = false;
  if (val_n > 0) {
    Task task = prepare_task([&] {
      TaskConfig c = t;
      c.model.input_dim = dim;
      c.model.num_classes = k;
      return c;
    }(), seed);
    train_set = std::move(task.train);
    val_set = std::move(task.val);
  } else {
    RngState root{seed, 0};
    RngState gen = root.split(10);
    const auto kk = static_cast<std::size_t>(k);
    Dataset all = gen_gaussian_mixture(k, (n + kk - 1) / kk, dim, class_sep, gen);
    all.samples.resize(n);
    RngState noise_rng = root.split(12);
    auto res = inject_label_noise(all, t.noise, noise_rng);
    train_set = std::move(res.dataset);
    too_few = res.warning && t.noise.rate > 0.0;
  }
  save_dataset(train_set, out);
  std::map<int, std::size_t> per_class;
  std::size_t flipped = 0;
  for (const auto& s : train_set.samples) {
    ++per_class[s.label];
    flipped += s.is_noisy.value_or(false) ? 1 : 0;
  }
  std::cout << "wrote " << train_set.size() << " samples (K=" << k << ", dim=" << dim << ") to " << out << "\n";
  std::cout << "mislabeled: " << flipped << "\n";
  for (const auto& [label, count] : per_class) std::cout << "  class " << label << ": " << count << "\n";
  if (too_few) std::cerr << "warning: noise rate * n < 1, no labels were flipped\n";
  if (val_n > 0) {
    save_dataset(val_set, val_out);
    std::cout << "wrote " << val_set.size() << " clean validation samples to " << val_out << "\n";
  }
  return 0;
}

int cmd_train(const Common& c) {
  const RunConfig cfg = resolve(c);
  for (auto seed : cfg.seeds) {
    fs::remove_all(seed_dir(cfg, seed));
    const auto run = open_run(cfg, seed, true);
    const auto& th = run->theta_star();
    std::cout << "seed " << seed << ": " << run->checkpoints().size() << " checkpoints, theta* at step " << th.step
              << ", train accuracy " << fmt(run->model().accuracy(th.params, run->task().train))
              << ", val accuracy " << fmt(run->model().accuracy(th.params, run->task().val)) << "\n";
  }
  return 0;
}

int cmd_tune(const Common& c, const std::string& which) {
  const RunConfig cfg = resolve(c);
  std::vector<bool> flats;
  if (which == "vm" || which == "both") flats.push_back(false);
  if (which == "fvm" || which == "both") flats.push_back(true);
  if (flats.empty()) throw UsageError("--kind must be vm, fvm or both");
  for (auto seed : cfg.seeds) {
    auto run = open_run(cfg, seed, true);
    for (bool flat : flats) {
      const auto path = checkpoint_path(cfg, seed, flat ? "fvm" : "vm");
      fs::remove(path);
      const Checkpoint tuned = tune_task(run->task(), run->model(), run->theta_star(), flat);
      save_checkpoint(tuned, run->task().spec, path.string());
      std::cout << "seed " << seed << " " << tuned.tag << ": step " << tuned.step << ", val accuracy "
                << fmt(run->model().accuracy(tuned.params, run->task().val)) << ", val risk "
                << fmt(run->model().batch_risk(tuned.params, run->task().val)) << "\n";
    }
  }
  return 0;
}

std::vector<EstimatorConfig> require_estimators(const RunConfig& cfg) {
  if (cfg.estimators.empty()) throw UsageError("no estimators: set them in the config or pass --estimator");
  return cfg.estimators;
}

int cmd_influence(const Common& c) {
  const RunConfig cfg = resolve(c);
  for (auto seed : cfg.seeds) {
    auto run = open_run(cfg, seed, true);
    for (const auto& est : require_estimators(cfg)) {
      const auto cps = run->checkpoints_for(est.variant);
      persist_tuned(cfg, *run, est.variant);
      const auto rep = score_dataset(est, run->model(), run->task().train, run->task().val, cps, threads_of(c));
      const auto path = seed_dir(cfg, seed) / ("influence_" + std::string(to_string(est.variant)) + ".json");
      write_json(path, to_json(rep));
      std::cout << "seed " << seed << " " << to_string(est.variant) << ": " << rep.scores.size() << " scores ("
                << to_string(rep.direction) << ") in " << fmt(rep.wall_time) << " s -> " << path.string() << "\n";
    }
  }
  return 0;
}

int cmd_detect(const Common& c) {
  const RunConfig cfg = resolve(c);
  for (const auto& est : require_estimators(cfg)) {
    MetricsReport report;
    report.estimator = std::string(to_string(est.variant));
    for (auto seed : cfg.seeds) {
      auto run = open_run(cfg, seed, true);
      report.per_seed.push_back(detect(*run, est, threads_of(c)));
      persist_tuned(cfg, *run, est.variant);
    }
    write_json(fs::path(cfg.output_dir) / ("detect_" + report.estimator + ".json"), to_json(report));
    print_summary("detect roc_auc", report, report.roc_aucs());
    print_summary("detect average_precision", report, report.aps());
  }
  return 0;
}

int cmd_relabel(const Common& c) {
  const RunConfig cfg = resolve(c);
  for (const auto& est : require_estimators(cfg)) {
    MetricsReport report;
    report.estimator = std::string(to_string(est.variant));
    for (auto seed : cfg.seeds) {
      auto run = open_run(cfg, seed, true);
      SeedMetrics m = detect(*run, est, threads_of(c));
      const auto acc = relabel_accuracy(*run, est, threads_of(c));
      m.relabel_top1 = acc.all;
      m.relabel_top1_noisy = acc.noisy;
      if (acc.ties) std::cerr << "seed " << seed << ": " << acc.ties << " relabel tie(s) broken by smallest class\n";
      report.per_seed.push_back(m);
      persist_tuned(cfg, *run, est.variant);
    }
    write_json(fs::path(cfg.output_dir) / ("relabel_" + report.estimator + ".json"), to_json(report));
    print_summary("relabel top1", report, report.relabels());
  }
  return 0;
}

int cmd_recall(const Common& c, const std::string& extreme_name, std::size_t s) {
  const RunConfig cfg = resolve(c);
  Extreme extreme;
  if (extreme_name == "largest") extreme = Extreme::largest;
  else if (extreme_name == "smallest") extreme = Extreme::smallest;
  else throw UsageError("--extreme must be largest or smallest");
  for (const auto& est : require_estimators(cfg)) {
    MetricsReport report;
    report.estimator = std::string(to_string(est.variant));
    for (auto seed : cfg.seeds) {
      auto run = open_run(cfg, seed, true);
      SeedMetrics m = detect(*run, est, threads_of(c));
      const auto r = recall_eval(*run, est, cfg.recall_val, extreme, s, threads_of(c));
      m.recall_at_s = r.mean_recall;
      m.pseudo_label_auc = r.mean_auc;
      report.per_seed.push_back(m);
      persist_tuned(cfg, *run, est.variant);
    }
    auto j = to_json(report);
    j["extreme"] = extreme_name;
    write_json(fs::path(cfg.output_dir) / ("recall_" + report.estimator + ".json"), j);
    print_summary("recall@s", report, report.recalls());
  }
  return 0;
}

int cmd_bound(const Common& c, double delta, std::size_t loo_seeds, std::size_t max_train) {
  const RunConfig cfg = resolve(c);
  if (cfg.train_data) throw UsageError("bound runs on generated tasks only");
  for (const auto& est : require_estimators(cfg)) {
    nlohmann::json all = nlohmann::json::array();
    for (auto seed : cfg.seeds) {
      BoundExperimentConfig bc;
      bc.task = cfg.task;
      bc.seed = seed;
      bc.delta = delta;
      bc.loo_seeds = loo_seeds;
      bc.max_train = max_train;
      const auto r = bound_experiment(est, bc, threads_of(c));
      auto j = to_json(r.bound);
      j["seed"] = seed;
      all.push_back(j);
      std::cout << "seed " << seed << " " << to_string(est.variant) << ": sign error " << fmt(r.bound.measured_error)
                << ", corollary bound " << fmt(r.bound.corollary_clamped()) << ", assumptions "
                << (r.bound.assumptions_hold ? "hold" : "fail") << "\n";
    }
    write_json(fs::path(cfg.output_dir) / ("bound_" + std::string(to_string(est.variant)) + ".json"), all);
  }
  return 0;
}

int cmd_loo(const Common& c, std::size_t loo_seeds) {
  const RunConfig cfg = resolve(c);
  for (auto seed : cfg.seeds) {
    const Task task = make_task(cfg, seed);
    const Model model(task.spec);
    const LooOracle oracle(model, task.train, task.val, task.train_cfg, loo_seeds, seed * 7919 + 1);
    const auto results = oracle.run_all(threads_of(c));
    fs::create_directories(seed_dir(cfg, seed));
    write_json(seed_dir(cfg, seed) / "loo.json", to_json(results));
    const auto part = sign_partition(results, default_zero_tolerance(results));
    std::cout << "seed " << seed << ": " << results.size() << " retrains, " << part.positive_ids.size()
              << " positive, " << part.negative_ids.size() << " negative, " << part.zero_ids.size() << " zero\n";
  }
  return 0;
}

int cmd_sweep(const Common& c, const std::string& kind) {
  const RunConfig cfg = resolve(c);
  if (kind != "epoch" && kind != "tune" && kind != "tune-flat") throw UsageError("--kind must be epoch, tune or tune-flat");
  for (auto seed : cfg.seeds) {
    auto run = open_run(cfg, seed, true);
    const SweepTable t = kind == "epoch" ? epoch_sweep(*run, cfg.sweep, threads_of(c))
                                         : tuning_sweep(*run, kind == "tune-flat", cfg.sweep, threads_of(c));
    const auto base = seed_dir(cfg, seed) / ("sweep_" + kind);
    write_text(base.string() + ".tsv", t.to_tsv());
    write_json(base.string() + ".json", to_json(t));
    std::cout << "seed " << seed << ": " << t.rows.size() << " rows -> " << base.string() << ".tsv\n";
    if (!t.notes.empty()) std::cout << "  " << t.notes.dump() << "\n";
  }
  return 0;
}

int cmd_report(const Common& c) {
  const RunConfig cfg = resolve(c);
  nlohmann::json summary = nlohmann::json::object();
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(cfg.output_dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::printf("%-24s %-8s %-20s %s\n", "file", "est", "metric", "mean (std)");
  for (const auto& f : files) {
    std::ifstream in(f);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error&) {
      continue;
    }
    if (!j.is_object() || j.value("version", std::string{}) != kMetricsVersion) continue;
    for (const char* metric : {"roc_auc", "average_precision", "relabel_top1", "recall_at_s"}) {
      if (!j.contains(metric) || j.at(metric).is_null()) continue;
      const auto& m = j.at(metric);
      std::printf("%-24s %-8s %-20s %.4f (%.4f)\n", f.filename().string().c_str(),
                  j.value("estimator", std::string("?")).c_str(), metric, m.at("mean").get<double>(),
                  m.at("std").get<double>());
      summary[f.stem().string()][metric] = m;
    }
  }
  write_json(fs::path(cfg.output_dir) / "report.json", {{"version", kMetricsVersion}, {"summary", summary}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"iflab: influence estimation at validation minima"};
  app.require_subcommand(1);

  int k = 2;
  std::size_t n = 100, dim = 2, val_n = 0;
  std::string noise = "none", out, val_out;
  double noise_rate = -1.0, class_sep = 2.0;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a noisy Gaussian-mixture dataset");
  gen->add_option("--k", k, "Number of classes")->check(CLI::Range(2, 1000));
  gen->add_option("--n", n, "Number of samples")->required();
  gen->add_option("--dim", dim, "Input dimension")->check(CLI::PositiveNumber);
  gen->add_option("--noise", noise, "none, aggre-like, random-like or worst-like");
  gen->add_option("--noise-rate", noise_rate, "Override the preset's flip rate");
  gen->add_option("--class-sep", class_sep, "Distance of class means from the origin");
  gen->add_option("--seed", seed, "Seed");
  gen->add_option("--out", out, "Output dataset file")->required();
  gen->add_option("--val-n", val_n, "Also write this many clean validation samples");
  gen->add_option("--val-out", val_out, "Validation output file");

  Common common;
  auto* train_cmd = app.add_subcommand("train", "Train theta* and its checkpoints");
  add_common(train_cmd, common, false);

  std::string tune_kind = "both";
  auto* tune_cmd = app.add_subcommand("tune", "Tune theta* on the validation set (vm: SGD, fvm: SAM)");
  add_common(tune_cmd, common, false);
  tune_cmd->add_option("--kind", tune_kind, "vm, fvm or both");

  auto* infl = app.add_subcommand("influence", "Score every training sample");
  add_common(infl, common, true);
  auto* det = app.add_subcommand("detect", "Mislabeled-sample detection: ROC AUC and AP");
  add_common(det, common, true);
  auto* rel = app.add_subcommand("relabel", "Relabeling top-1 accuracy");
  add_common(rel, common, true);

  std::string extreme = "largest";
  std::size_t recall_s = 0;
  auto* rec = app.add_subcommand("recall", "Pseudo-label recall@s over validation samples");
  add_common(rec, common, true);
  rec->add_option("--extreme", extreme, "largest or smallest scores count as most influential");
  rec->add_option("--s", recall_s, "Points counted (default: training points per class)");

  double delta = 0.05;
  std::size_t loo_seeds = 1, max_train = 200;
  auto* bnd = app.add_subcommand("bound", "Measured sign error against the theorem and corollary bounds");
  add_common(bnd, common, true);
  bnd->add_option("--delta", delta, "Confidence parameter")->check(CLI::Range(1e-12, 1.0));
  bnd->add_option("--loo-seeds", loo_seeds, "Retraining seeds per sample");
  bnd->add_option("--max-train", max_train, "Refuse LOO over more training samples than this");

  auto* loo = app.add_subcommand("loo", "Leave-one-out retraining oracle");
  add_common(loo, common, false);
  loo->add_option("--loo-seeds", loo_seeds, "Retraining seeds per sample");

  std::string sweep_kind = "epoch";
  auto* swp = app.add_subcommand("sweep", "Per-checkpoint or per-tuning-step table");
  add_common(swp, common, false);
  swp->add_option("--kind", sweep_kind, "epoch, tune or tune-flat");

  auto* rep = app.add_subcommand("report", "Summarize metrics files in the output directory");
  add_common(rep, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*gen) return cmd_gen_data(k, n, dim, noise, noise_rate, class_sep, seed, out, val_n, val_out);
    if (*train_cmd) return cmd_train(common);
    if (*tune_cmd) return cmd_tune(common, tune_kind);
    if (*infl) return cmd_influence(common);
    if (*det) return cmd_detect(common);
    if (*rel) return cmd_relabel(common);
    if (*rec) return cmd_recall(common, extreme, recall_s);
    if (*bnd) return cmd_bound(common, delta, loo_seeds, max_train);
    if (*loo) return cmd_loo(common, loo_seeds);
    if (*swp) return cmd_sweep(common, sweep_kind);
    if (*rep) return cmd_report(common);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
