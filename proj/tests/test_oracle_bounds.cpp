#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <optional>

#include "iflab/experiments.hpp"
#include "iflab/oracle_bounds.hpp"
#include "test_util.hpp"

using namespace iflab;
using namespace iflab::testing;

namespace {

SgdConfig exact_gd() { return {0.5, 0.9, 5000, 1u << 20, Schedule::constant, 0, 1e-10}; }

std::vector<LooResult> deltas(std::initializer_list<double> values) {
  std::vector<LooResult> out;
  std::uint64_t id = 0;
  for (double d : values) out.push_back({id++, d, 1, 0.0});
  return out;
}

InfluenceReport report_from(const std::vector<LooResult>& loo, double sign, Direction dir = Direction::lower_is_noisier) {
  InfluenceReport r;
  r.estimator = {{"variant", "oracle"}};
  r.direction = dir;
  for (const auto& l : loo) r.scores[l.sample_id] = sign * l.delta_val_risk;
  return r;
}

// A few well separated samples; extra points are added per test.
Dataset separated_base() {
  Dataset ds = random_dataset(6, 2, 2, 4, 0.5);
  for (auto& s : ds.samples) {
    s.x[0] += s.label == 0 ? -2.0 : 2.0;
  }
  return ds;
}

}  // namespace

TEST(Loo, SingleSeedFullBatchHasZeroSpread) {
  const Model m(logistic_spec(2, 2, 0.01));
  const Dataset tr = random_dataset(20, 2, 2, 1), val = random_dataset(20, 2, 2, 2);
  const LooResult r = loo_retrain(tr, 3, m.spec(), exact_gd(), val, 1);
  EXPECT_EQ(r.seeds_used, 1u);
  EXPECT_EQ(r.std_across_seeds, 0.0);
  // Convex and converged: different initializations reach the same optimum.
  const LooResult r3 = loo_retrain(tr, 3, m.spec(), exact_gd(), val, 3);
  EXPECT_EQ(r3.seeds_used, 3u);
  EXPECT_LE(r3.std_across_seeds, 1e-8);
  EXPECT_NEAR(r3.delta_val_risk, r.delta_val_risk, 1e-8);
}

TEST(Loo, UnknownIdAndSeedCount) {
  const Model m(logistic_spec(2, 2, 0.01));
  const Dataset tr = random_dataset(5, 2, 2, 1), val = random_dataset(5, 2, 2, 2);
  EXPECT_THROW(loo_retrain(tr, 99, m.spec(), exact_gd(), val, 1), UsageError);
  EXPECT_THROW(loo_retrain(tr, 0, m.spec(), exact_gd(), val, 0), UsageError);
}

TEST(Loo, DuplicatedSampleMattersLessThanUnique) {
  const ModelSpec spec = logistic_spec(2, 2, 0.01);
  const Dataset val = [] {
    Dataset v = random_dataset(40, 2, 2, 9, 0.5);
    for (auto& s : v.samples) s.x[0] += s.label == 0 ? -2.0 : 2.0;
    return v;
  }();
  // A correctly labeled, helpful point in a data-starved problem: the
  // second copy adds less than the first. (For harmful points the
  // opposite can happen since validation risk is convex in the shift.)
  Dataset unique = separated_base();
  const Sample a{1000, {2.0, 0.0}, 1, 1, false};
  unique.samples.push_back(a);
  Dataset twice = unique;
  Sample copy = a;
  copy.id = 1001;
  twice.samples.push_back(copy);
  const double d_unique = loo_retrain(unique, 1000, spec, exact_gd(), val, 1).delta_val_risk;
  const double d_dup = loo_retrain(twice, 1000, spec, exact_gd(), val, 1).delta_val_risk;
  EXPECT_GT(d_unique, 0.0);
  EXPECT_LT(std::abs(d_dup), std::abs(d_unique));
}

TEST(Loo, SoleMemberOfClassIsHelpful) {
  const ModelSpec spec = logistic_spec(2, 3, 0.01);
  RngState rng{3, 0};
  Dataset tr = gen_gaussian_mixture(3, 10, 2, 3.0, rng);
  Dataset val{{}, 3, 2};
  // Keep one class-2 training sample; class-2 validation points come from the dropped ones.
  Dataset kept{{}, 3, 2};
  std::optional<std::uint64_t> sole;
  for (const auto& s : tr.samples) {
    if (s.label != 2) kept.samples.push_back(s);
    else if (!sole) {
      kept.samples.push_back(s);
      sole = s.id;
    } else {
      val.samples.push_back(s);
    }
  }
  ASSERT_TRUE(sole);
  EXPECT_GT(loo_retrain(kept, *sole, spec, exact_gd(), val, 1).delta_val_risk, 0.0);
}

TEST(Loo, ExactIfSignsMatchOnConvexToy) {
  const Task task = prepare_task(convex_task_config(0.0), 3);
  ASSERT_LE(Model(task.spec).num_params(), 22u);
  Dataset train = task.train;
  train.samples.resize(50);
  const Model model(task.spec);
  const auto theta = iflab::train(model, train, task.train_cfg, RngState{3, 0}).back();
  const LooOracle oracle(model, train, task.val, task.train_cfg, 1, 3);
  const auto loo = oracle.run_all(1);
  const ExactIfContext ctx(model, theta.params, train, task.val, 0.0);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < train.size(); ++i)
    agree += (ctx.score(train.samples[i]) > 0.0) == (loo[i].delta_val_risk > 0.0);
  EXPECT_GE(agree, 45u) << agree << " of 50";
}

TEST(SignPartition, Examples) {
  auto p = sign_partition(deltas({0.0, 0.0, 0.0}), 0.0);
  EXPECT_EQ(p.zero_ids.size(), 3u);
  p = sign_partition(deltas({1.0, -1.0}), 0.0);
  EXPECT_EQ(p.positive_ids, (std::vector<std::uint64_t>{0}));
  EXPECT_EQ(p.negative_ids, (std::vector<std::uint64_t>{1}));
  p = sign_partition(deltas({0.3, -0.2, 0.1}), 0.5);
  EXPECT_EQ(p.zero_ids.size(), 3u);
  EXPECT_THROW(sign_partition(deltas({1.0}), -1.0), UsageError);
  EXPECT_DOUBLE_EQ(default_zero_tolerance(deltas({0.5, -2.0})), 2e-9);
}

TEST(SignError, SelfNegationAndZeroExclusion) {
  const auto loo = deltas({0.5, -0.1, 0.0, 2.0, -3.0});
  const auto p = sign_partition(loo, 0.0);
  EXPECT_EQ(sign_error(report_from(loo, 1.0), p), 0.0);
  EXPECT_EQ(sign_error(report_from(loo, -1.0), p), 1.0);
  EXPECT_THROW(sign_error(report_from(loo, 1.0), sign_partition(deltas({0.0}), 0.0)), EmptySetError);
}

TEST(SignError, RandomScoresNearHalf) {
  RngState rng{17, 0};
  std::vector<LooResult> loo;
  InfluenceReport r;
  r.direction = Direction::lower_is_noisier;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    loo.push_back({i, rng.uniform() - 0.5, 1, 0.0});
    r.scores[i] = rng.uniform() < 0.5 ? 1.0 : -1.0;
  }
  const double e = sign_error(r, sign_partition(loo, 0.0));
  EXPECT_GT(e, 0.44);
  EXPECT_LT(e, 0.56);
}

TEST(SignError, PositiveOnlyScoresAreMedianCentered) {
  // Higher-is-noisier scores: above the median maps to negative influence.
  InfluenceReport r;
  r.direction = Direction::higher_is_noisier;
  r.scores = {{0, 1.0}, {1, 2.0}, {2, 3.0}, {3, 4.0}};
  const auto n = normalized_scores(r, Centering::median);
  EXPECT_DOUBLE_EQ(n.at(0), 1.5);
  EXPECT_DOUBLE_EQ(n.at(3), -1.5);
  const auto p = sign_partition(deltas({0.2, 0.1, -0.1, -0.2}), 0.0);
  EXPECT_EQ(sign_error(r, p), 0.0);
  EXPECT_EQ(default_centering(Direction::lower_is_noisier), Centering::none);
}

TEST(Theorem, ClosedForms) {
  EXPECT_DOUBLE_EQ(theorem_bound_from_means(0.0, -1.0, 0.7).bound, 1.0);
  EXPECT_NEAR(theorem_bound_from_means(0.7, -0.9, 0.7).bound, std::exp(-2.0), 1e-15);
  EXPECT_NEAR(std::exp(-2.0), 0.1353, 1e-4);
  EXPECT_LT(theorem_bound_from_means(1e3, -1e3, 1.0).bound, 1e-300);
  const auto t = theorem_bound_from_means(0.2, -0.5, 1.0);
  EXPECT_DOUBLE_EQ(t.mu, 0.2);
  EXPECT_TRUE(t.assumptions_hold);
  EXPECT_FALSE(theorem_bound_from_means(-0.2, 0.5, 1.0).assumptions_hold);
  EXPECT_THROW(theorem_bound_from_means(0.1, -0.1, 0.0), UsageError);
}

TEST(Theorem, EmptySideIsPartitionError) {
  const auto loo = deltas({0.5, 0.3});
  EXPECT_THROW(theorem_bound(report_from(loo, 1.0), sign_partition(loo, 0.0), 1.0), PartitionError);
}

TEST(Corollary, ClosedForms) {
  EXPECT_NEAR(corollary_slack(1.0 / std::numbers::e, 2), 0.5, 1e-15);
  EXPECT_NEAR(corollary_slack(0.05, 200), std::sqrt(std::log(20.0) / 400.0), 1e-15);
  EXPECT_NEAR(corollary_slack(0.05, 200), 0.0866, 1e-4);
  EXPECT_LT(corollary_slack(0.05, 10000000000ULL), 1e-4);
  EXPECT_DOUBLE_EQ(corollary_bound(0.25, 0.05, 200) - 0.25, corollary_slack(0.05, 200));
  EXPECT_THROW(corollary_slack(0.0, 10), UsageError);
  EXPECT_THROW(corollary_slack(1.0, 10), UsageError);
  EXPECT_THROW(corollary_slack(0.5, 0), UsageError);
}

TEST(BoundReport, SelfConsistencyAndFlippedGating) {
  const auto loo = deltas({0.5, -0.1, 0.3, -0.7, 0.2, -0.4});
  const auto p = sign_partition(loo, 0.0);
  const BoundReport self = assemble_bound_report(report_from(loo, 1.0), p, 0.5, 0.1, 0.05);
  EXPECT_EQ(self.measured_error, 0.0);
  EXPECT_TRUE(self.assumptions_hold);
  EXPECT_TRUE(self.valid());
  EXPECT_DOUBLE_EQ(self.corollary_bound - self.theorem_bound, corollary_slack(0.05, 6));
  EXPECT_EQ(self.positive_count, 3u);
  const BoundReport flipped = assemble_bound_report(report_from(loo, -1.0), p, 50.0, 0.1, 0.05);
  EXPECT_FALSE(flipped.assumptions_hold);
  EXPECT_EQ(flipped.measured_error, 1.0);
  const auto j = to_json(flipped);
  EXPECT_EQ(j.at("version"), "iflab-bound-1");
  EXPECT_LE(j.at("corollary_bound").get<double>(), 1.0);
  EXPECT_GT(j.at("corollary_bound_raw").get<double>(), 1.0);
}

TEST(BoundExperiment, ValidWheneverAssumptionsHold) {
  for (double rate : {0.0, 0.2}) {
    EstimatorConfig est;
    est.variant = Variant::exact_if;
    est.damping = 0.0;
    BoundExperimentConfig cfg;
    cfg.task = convex_task_config(rate);
    cfg.seed = 3;
    const auto r = bound_experiment(est, cfg, 1);
    EXPECT_EQ(r.loo.size(), 100u);
    EXPECT_EQ(r.bound.n, 100u);
    EXPECT_GT(r.bound.gamma, 0.0);
    EXPECT_GE(r.bound.sharp_risk, 0.0);
    if (r.bound.assumptions_hold) {
      EXPECT_TRUE(r.bound.valid()) << "rate " << rate;
    }
    EXPECT_LE(r.bound.measured_error, 0.2);
  }
}

TEST(BoundExperiment, SizeCap) {
  EstimatorConfig est;
  est.variant = Variant::exact_if;
  BoundExperimentConfig cfg;
  cfg.task = convex_task_config(0.0);
  cfg.max_train = 50;
  EXPECT_THROW(bound_experiment(est, cfg, 1), SizeError);
}
