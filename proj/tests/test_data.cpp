#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "iflab/data.hpp"
#include "iflab/optim.hpp"
#include "iflab/task.hpp"
#include "test_util.hpp"

using namespace iflab;
using namespace iflab::testing;

namespace {

Dataset mixture(int k, std::size_t per, std::size_t dim, double sep, std::uint64_t seed) {
  RngState rng{seed, 0};
  return gen_gaussian_mixture(k, per, dim, sep, rng);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in);
}

}  // namespace

TEST(Mixture, WellSeparatedIsLinearlyLearnable) {
  const Dataset ds = mixture(2, 100, 2, 6.0, 1);
  const Model m(logistic_spec(2, 2, 0.0));
  SgdConfig cfg{0.5, 0.9, 300, 1000, Schedule::constant, 0, 0.0};
  const auto cps = train(m, ds, cfg, RngState{1, 0});
  std::size_t correct = 0;
  for (const auto& s : ds.samples) correct += m.predict(cps.back().params, s.x) == s.label;
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(ds.size()), 0.99);
}

TEST(Mixture, ShapeCleanLabelsAndDeterminism) {
  const Dataset one = mixture(4, 1, 3, 2.0, 2);
  EXPECT_EQ(one.size(), 4u);
  const Dataset a = mixture(3, 20, 5, 2.0, 7), b = mixture(3, 20, 5, 2.0, 7);
  EXPECT_EQ(a, b);
  EXPECT_NO_THROW(a.validate());
  for (const auto& s : a.samples) {
    EXPECT_EQ(s.true_label, s.label);
    EXPECT_EQ(s.is_noisy, false);
  }
  EXPECT_NE(a, mixture(3, 20, 5, 2.0, 8));
}

TEST(Mixture, Preconditions) {
  RngState rng{0, 0};
  EXPECT_THROW(gen_gaussian_mixture(2, 1, 0, 1.0, rng), DimensionError);
  EXPECT_THROW(gen_gaussian_mixture(1, 1, 2, 1.0, rng), UsageError);
  EXPECT_THROW(gen_gaussian_mixture(2, 0, 2, 1.0, rng), UsageError);
  EXPECT_THROW(gen_gaussian_mixture(2, 1, 2, 0.0, rng), UsageError);
}

TEST(Noise, RateZeroUnchanged) {
  const Dataset ds = mixture(3, 10, 2, 2.0, 1);
  RngState rng{1, 0};
  const auto r = inject_label_noise(ds, {NoiseKind::symmetric, 0.0}, rng);
  EXPECT_EQ(r.dataset, ds);
  EXPECT_EQ(r.flipped, 0u);
}

TEST(Noise, TooFewSamplesWarns) {
  const Dataset ds = mixture(2, 2, 2, 2.0, 1);
  RngState rng{1, 0};
  const auto r = inject_label_noise(ds, {NoiseKind::symmetric, 0.2}, rng);  // 0.8 < 1
  EXPECT_TRUE(r.warning);
  EXPECT_EQ(r.dataset, ds);
}

TEST(Noise, ExactCountAndNeverTrueLabel) {
  for (auto kind : {NoiseKind::symmetric, NoiseKind::asymmetric_pairflip}) {
    for (double rate : {0.1, 0.18, 0.4, 0.55}) {
      const Dataset ds = mixture(5, 100, 2, 2.0, 3);
      RngState rng{static_cast<std::uint64_t>(rate * 100), 0};
      const auto r = inject_label_noise(ds, {kind, rate}, rng);
      std::size_t noisy = 0;
      for (const auto& s : r.dataset.samples) {
        const bool changed = s.label != *s.true_label;
        EXPECT_EQ(changed, *s.is_noisy);
        noisy += changed;
      }
      EXPECT_EQ(noisy, static_cast<std::size_t>(std::llround(rate * 500)));
      EXPECT_EQ(r.flipped, noisy);
    }
  }
}

TEST(Noise, WorstLikePresetOnFiveHundred) {
  const Dataset ds = mixture(2, 250, 2, 2.0, 7);
  RngState rng{7, 0};
  const auto r = inject_label_noise(ds, noise_preset("worst-like"), rng);
  std::size_t flagged = 0;
  for (const auto& s : r.dataset.samples) flagged += *s.is_noisy;
  EXPECT_EQ(flagged, 200u);
}

TEST(Noise, BinarySymmetricIsTheOtherClass) {
  const Dataset ds = mixture(2, 50, 2, 2.0, 1);
  RngState rng{2, 0};
  const auto r = inject_label_noise(ds, {NoiseKind::symmetric, 0.3}, rng);
  for (const auto& s : r.dataset.samples)
    if (*s.is_noisy) { EXPECT_EQ(s.label, 1 - *s.true_label); }
}

TEST(Noise, PairflipShiftsByOne) {
  const Dataset ds = mixture(4, 50, 2, 2.0, 1);
  RngState rng{2, 0};
  const auto r = inject_label_noise(ds, {NoiseKind::asymmetric_pairflip, 0.3}, rng);
  for (const auto& s : r.dataset.samples)
    if (*s.is_noisy) { EXPECT_EQ(s.label, (*s.true_label + 1) % 4); }
}

TEST(Noise, SymmetricCoversAllOtherClasses) {
  const Dataset ds = mixture(4, 250, 2, 2.0, 1);
  RngState rng{5, 0};
  const auto r = inject_label_noise(ds, {NoiseKind::symmetric, 0.5}, rng);
  std::set<int> offsets;
  for (const auto& s : r.dataset.samples)
    if (*s.is_noisy) offsets.insert((s.label - *s.true_label + 4) % 4);
  EXPECT_EQ(offsets, (std::set<int>{1, 2, 3}));
}

TEST(Noise, PresetsAndBadRate) {
  EXPECT_DOUBLE_EQ(noise_preset("aggre-like").rate, 0.10);
  EXPECT_DOUBLE_EQ(noise_preset("random-like").rate, 0.18);
  EXPECT_DOUBLE_EQ(noise_preset("worst-like").rate, 0.40);
  EXPECT_THROW(noise_preset("cifar"), UsageError);
  const Dataset ds = mixture(2, 5, 2, 2.0, 1);
  RngState rng{1, 0};
  EXPECT_THROW(inject_label_noise(ds, {NoiseKind::symmetric, 1.0}, rng), UsageError);
}

TEST(Split, IdentityAndSizes) {
  const Dataset ds = random_dataset(100, 2, 2, 1);
  RngState rng{1, 0};
  const auto whole = split(ds, {1.0}, rng);
  ASSERT_EQ(whole.size(), 1u);
  EXPECT_EQ(whole[0].size(), 100u);
  const auto parts = split(ds, {0.8, 0.2}, rng);
  EXPECT_EQ(parts[0].size(), 80u);
  EXPECT_EQ(parts[1].size(), 20u);
}

TEST(Split, PartitionAndLargestRemainder) {
  const Dataset ds = random_dataset(10, 2, 2, 1);
  RngState rng{3, 0};
  // floor sizes 3, 3, 3 with remainders .33 each; the earliest part gets the leftover.
  const auto parts = split(ds, {1.0 / 3, 1.0 / 3, 1.0 / 3}, rng);
  EXPECT_EQ(parts[0].size(), 4u);
  EXPECT_EQ(parts[1].size(), 3u);
  EXPECT_EQ(parts[2].size(), 3u);
  std::multiset<std::uint64_t> ids;
  for (const auto& p : parts)
    for (const auto& s : p.samples) ids.insert(s.id);
  std::multiset<std::uint64_t> expect;
  for (const auto& s : ds.samples) expect.insert(s.id);
  EXPECT_EQ(ids, expect);
}

TEST(Split, BadFractions) {
  const Dataset ds = random_dataset(10, 2, 2, 1);
  RngState rng{1, 0};
  EXPECT_THROW(split(ds, {}, rng), UsageError);
  EXPECT_THROW(split(ds, {0.5, 0.4}, rng), UsageError);
  EXPECT_THROW(split(ds, {1.2, -0.2}, rng), UsageError);
}

TEST(Split, SeedReproducible) {
  const Dataset ds = random_dataset(30, 2, 2, 1);
  RngState a{4, 0}, b{4, 0};
  EXPECT_EQ(split(ds, {0.5, 0.5}, a), split(ds, {0.5, 0.5}, b));
}

TEST(DatasetFile, RoundTripWithOptionalFields) {
  Dataset ds = mixture(3, 5, 4, 2.0, 1);
  RngState rng{1, 0};
  ds = inject_label_noise(ds, {NoiseKind::symmetric, 0.4}, rng).dataset;
  ds.samples[2].true_label.reset();
  ds.samples[2].is_noisy.reset();
  const auto path = temp_path("iflab_ds_roundtrip.jsonl");
  save_dataset(ds, path);
  EXPECT_EQ(load_dataset(path), ds);
  std::filesystem::remove(path);
}

TEST(DatasetFile, EmptyListIsValid) {
  const Dataset ds = parse("{\"version\":\"iflab-ds-1\",\"K\":3,\"dim\":2}\n");
  EXPECT_TRUE(ds.empty());
  EXPECT_EQ(ds.num_classes, 3);
  EXPECT_EQ(ds.dim, 2u);
}

TEST(DatasetFile, ParseErrorsCarryLine) {
  const std::string header = "{\"version\":\"iflab-ds-1\",\"K\":2,\"dim\":2}\n";
  const auto line_of = [&](const std::string& body) -> std::size_t {
    try {
      parse(header + body);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("{\"id\":0,\"x\":[1,2],\"y\":2}\n"), 2u);                          // label >= K
  EXPECT_EQ(line_of("{\"id\":0,\"x\":[1,2],\"y\":0}\n{\"id\":1,\"x\":[1],\"y\":0}\n"), 3u);  // dim
  EXPECT_EQ(line_of("{\"id\":0,\"x\":[1,2],\"y\":0}\n{\"id\":0,\"x\":[1,2],\"y\":1}\n"), 3u);  // dup id
  EXPECT_EQ(line_of("{\"id\":0,\"x\":[1,2]}\n"), 2u);                                   // missing y
  EXPECT_EQ(line_of("not json\n"), 2u);
  EXPECT_THROW(parse("{\"version\":\"iflab-ds-0\",\"K\":2,\"dim\":2}\n"), ParseError);
  EXPECT_THROW(parse(""), ParseError);
  EXPECT_THROW(load_dataset(temp_path("iflab_no_such_file.jsonl")), Error);
}

TEST(Task, PreparedSplitSizesAndCleanValidation) {
  TaskConfig cfg;
  cfg.num_classes = 3;
  cfg.train_n = 70;
  cfg.val_n = 31;
  cfg.noise = {NoiseKind::symmetric, 0.2};
  cfg.model = logistic_spec(1, 2, 0.0);
  const Task t = prepare_task(cfg, 5);
  EXPECT_EQ(t.train.size(), 70u);
  EXPECT_EQ(t.val.size(), 31u);
  std::size_t noisy = 0;
  for (const auto& s : t.train.samples) noisy += *s.is_noisy;
  EXPECT_EQ(noisy, 14u);
  for (const auto& s : t.val.samples) EXPECT_FALSE(*s.is_noisy);
  EXPECT_EQ(t.spec.input_dim, cfg.dim);
  EXPECT_EQ(t.spec.num_classes, 3);
  EXPECT_EQ(prepare_task(cfg, 5).train, t.train);
}
