#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "iflab/model.hpp"
#include "test_util.hpp"

using namespace iflab;
using namespace iflab::testing;

namespace {

std::vector<ModelSpec> smooth_specs() {
  return {logistic_spec(3, 2, 0.0), logistic_spec(4, 5, 0.1), mlp_spec(3, {5}, 3, 0.01),
          mlp_spec(4, {6, 4}, 4, 0.0)};
}

Vector random_params(const Model& m, std::uint64_t seed) {
  RngState rng{seed, 77};
  return scaled(rand_gaussian(rng, m.num_params()), 0.7);
}

}  // namespace

TEST(Init, LogisticLayout) {
  const Model m(logistic_spec(2, 2, 0.0));
  RngState rng{1, 0};
  const Vector t = m.init_params(rng);
  ASSERT_EQ(t.size(), 6u);
  const auto& L = m.layout().layers.at(0);
  for (std::size_t i = 0; i < L.out; ++i) EXPECT_EQ(t[L.bias_offset + i], 0.0);
}

TEST(Init, MlpLayoutAndDeterminism) {
  const Model m(mlp_spec(4, {8}, 3, 0.0));
  EXPECT_EQ(m.num_params(), 67u);
  RngState a{3, 0}, b{3, 0};
  EXPECT_EQ(m.init_params(a), m.init_params(b));
}

TEST(Init, WeightScaleIsFanIn) {
  const Model m(mlp_spec(400, {300}, 2, 0.0));
  RngState rng{5, 0};
  const Vector t = m.init_params(rng);
  const auto& L = m.layout().layers.at(0);
  double ss = 0.0;
  for (std::size_t i = 0; i < L.in * L.out; ++i) ss += t[L.weight_offset + i] * t[L.weight_offset + i];
  EXPECT_NEAR(ss / static_cast<double>(L.in * L.out), 1.0 / 400.0, 0.05 / 400.0);
}

TEST(Spec, Validation) {
  auto s = logistic_spec(2, 1, 0.0);
  EXPECT_THROW(s.validate(), UsageError);
  s = logistic_spec(2, 2, -1.0);
  EXPECT_THROW(s.validate(), UsageError);
  s = mlp_spec(2, {}, 2, 0.0);
  EXPECT_THROW(s.validate(), UsageError);
  s = logistic_spec(2, 2, 0.0);
  s.hidden_sizes = {3};
  EXPECT_THROW(s.validate(), UsageError);
  EXPECT_TRUE(mlp_spec(2, {3}, 2, 0.0, Activation::relu).generalized_hessian());
  EXPECT_FALSE(mlp_spec(2, {3}, 2, 0.0).generalized_hessian());
}

TEST(Loss, ZeroParamsGiveLogK) {
  Sample s{0, {1.0, -2.0}, 1, 1, false};
  const Model m2(logistic_spec(2, 2, 0.3));
  EXPECT_NEAR(m2.loss(Vector(m2.num_params(), 0.0), s), std::log(2.0), 1e-15);
  const Model m10(logistic_spec(2, 10, 0.0));
  s.label = 7;
  EXPECT_NEAR(m10.loss(Vector(m10.num_params(), 0.0), s), std::log(10.0), 1e-14);
}

TEST(Loss, HandComputedSoftmaxChain) {
  // One input, two classes: logits z0 = 0.5 x + 0.1, z1 = -0.3 x + 0.2.
  const Model m(logistic_spec(1, 2, 0.2));
  const Vector theta{0.5, -0.3, 0.1, 0.2};
  const Sample s{0, {2.0}, 0, 0, false};
  const double z0 = 1.1, z1 = -0.4;
  const double nll = -(z0 - std::log(std::exp(z0) + std::exp(z1)));
  const double reg = 0.5 * 0.2 * (0.25 + 0.09 + 0.01 + 0.04);
  EXPECT_NEAR(m.loss(theta, s), nll + reg, 1e-14);
  EXPECT_NEAR(m.data_loss(theta, s), nll, 1e-14);
}

TEST(Loss, LabelOutOfRange) {
  const Model m(logistic_spec(2, 3, 0.0));
  EXPECT_THROW(m.loss(Vector(m.num_params(), 0.0), Sample{0, {1, 1}, 3, 3, false}), LabelError);
  EXPECT_THROW(m.grad(Vector(m.num_params(), 0.0), Sample{0, {1, 1}, -1, 0, false}), LabelError);
}

TEST(Loss, WrongFeatureLengthIsDimensionError) {
  const Model m(logistic_spec(2, 3, 0.0));
  EXPECT_THROW(m.loss(Vector(m.num_params(), 0.0), Sample{0, {1, 1, 1}, 0, 0, false}), DimensionError);
  EXPECT_THROW(m.loss(Vector(m.num_params() + 1, 0.0), Sample{0, {1, 1}, 0, 0, false}), DimensionError);
}

TEST(Grad, MatchesFiniteDifferences) {
  std::uint64_t seed = 0;
  for (const auto& spec : smooth_specs()) {
    const Model m(spec);
    const Dataset ds = random_dataset(5, spec.input_dim, spec.num_classes, 40 + seed);
    for (int rep = 0; rep < 5; ++rep, ++seed) {
      const Vector theta = random_params(m, seed);
      const Sample& s = ds.samples[static_cast<std::size_t>(rep)];
      const Vector fd = fd_gradient([&](const Vector& t) { return m.loss(t, s); }, theta, 1e-5);
      EXPECT_LE(rel_error(m.grad(theta, s), fd), 1e-5) << to_string(spec.kind) << " rep " << rep;
    }
  }
}

TEST(Grad, ReluAwayFromKinks) {
  const ModelSpec spec = mlp_spec(3, {4}, 2, 0.05, Activation::relu);
  const Model m(spec);
  const Dataset ds = random_dataset(4, 3, 2, 8);
  const Vector theta = random_params(m, 9);
  const Vector fd = fd_gradient([&](const Vector& t) { return m.loss(t, ds.samples[0]); }, theta, 1e-6);
  EXPECT_LE(rel_error(m.grad(theta, ds.samples[0]), fd), 1e-5);
}

TEST(Grad, ZeroParamLogisticBiasIsSoftmaxError) {
  const Model m(logistic_spec(2, 2, 0.0));
  Dataset ds = random_dataset(10, 2, 2, 3);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.samples[i].label = static_cast<int>(i % 2);
  const Vector g = m.batch_grad(Vector(m.num_params(), 0.0), ds);
  const auto& L = m.layout().layers[0];
  // p = (1/2, 1/2) everywhere and the labels are balanced: mean (p - onehot) = 0.
  EXPECT_NEAR(g[L.bias_offset], 0.0, 1e-15);
  EXPECT_NEAR(g[L.bias_offset + 1], 0.0, 1e-15);
  ds.samples[0].label = 1;  // now 4 of class 0, 6 of class 1
  const Vector g2 = m.batch_grad(Vector(m.num_params(), 0.0), ds);
  EXPECT_NEAR(g2[L.bias_offset], 0.5 - 0.4, 1e-15);
  EXPECT_NEAR(g2[L.bias_offset + 1], 0.5 - 0.6, 1e-15);
}

TEST(Grad, DuplicatedSampleSameGradient) {
  const Model m(mlp_spec(3, {4}, 3, 0.0));
  const Dataset one = random_dataset(1, 3, 3, 2);
  Dataset two = one;
  two.samples.push_back(one.samples[0]);
  two.samples[1].id = 1;
  const Vector theta = random_params(m, 4);
  EXPECT_LE(max_abs(sub(m.batch_grad(theta, two), m.grad(theta, one.samples[0]))), 1e-15);
}

TEST(BatchRisk, SingleAndPairMeans) {
  const Model m(mlp_spec(2, {3}, 2, 0.1));
  const Dataset ds = random_dataset(2, 2, 2, 6);
  const Vector theta = random_params(m, 1);
  Dataset first = ds;
  first.samples.resize(1);
  EXPECT_NEAR(m.batch_risk(theta, first), m.loss(theta, ds.samples[0]), 1e-15);
  EXPECT_NEAR(m.batch_risk(theta, ds), 0.5 * (m.loss(theta, ds.samples[0]) + m.loss(theta, ds.samples[1])), 1e-15);
}

TEST(BatchRisk, SummationOrderOracleAndRegularizerOnce) {
  const Model m(logistic_spec(5, 3, 0.2));
  const Dataset ds = random_dataset(100, 5, 3, 12);
  const Vector theta = random_params(m, 2);
  double streaming = 0.0;
  for (const auto& s : ds.samples) streaming += m.data_loss(theta, s);
  streaming /= 100.0;
  std::vector<double> losses;
  for (const auto& s : ds.samples) losses.push_back(m.data_loss(theta, s));
  const double two_pass = kahan_dot(losses, Vector(100, 0.01));
  const double reg = m.regularizer(theta);
  EXPECT_NEAR(m.batch_risk(theta, ds), streaming + reg, 1e-12);
  EXPECT_NEAR(m.batch_risk(theta, ds), two_pass + reg, 1e-12);
  EXPECT_NEAR(reg, 0.1 * dot(theta, theta), 1e-15);
}

TEST(BatchRisk, EmptyDataset) {
  const Model m(logistic_spec(2, 2, 0.0));
  Dataset empty;
  empty.num_classes = 2;
  empty.dim = 2;
  EXPECT_THROW(m.batch_risk(Vector(6, 0.0), empty), EmptySetError);
  EXPECT_THROW(m.batch_grad(Vector(6, 0.0), empty), EmptySetError);
}

TEST(BatchGrad, SingleSampleFiniteDifferenceAndLinearity) {
  const Model m(mlp_spec(3, {4}, 3, 0.0));
  const Dataset ds = random_dataset(20, 3, 3, 21);
  const Vector theta = random_params(m, 7);
  Dataset first = ds;
  first.samples.resize(1);
  EXPECT_LE(max_abs(sub(m.batch_grad(theta, first), m.grad(theta, ds.samples[0]))), 1e-15);
  const Vector fd = fd_gradient([&](const Vector& t) { return m.batch_risk(t, ds); }, theta, 1e-5);
  EXPECT_LE(rel_error(m.batch_grad(theta, ds), fd), 1e-5);
  Vector mean(m.num_params(), 0.0);
  for (const auto& s : ds.samples) axpy(1.0 / 20.0, m.grad(theta, s), mean);
  EXPECT_LE(max_abs(sub(mean, m.batch_grad(theta, ds))), 1e-12);
}

TEST(Hvp, ZeroDirection) {
  const Model m(mlp_spec(3, {4}, 2, 0.1));
  const Dataset ds = random_dataset(5, 3, 2, 1);
  const Vector h = m.hvp(random_params(m, 1), ds, Vector(m.num_params(), 0.0));
  EXPECT_EQ(max_abs(h), 0.0);
}

TEST(Hvp, MatchesGradientDifferences) {
  std::uint64_t seed = 100;
  for (const auto& spec : smooth_specs()) {
    const Model m(spec);
    const Dataset ds = random_dataset(6, spec.input_dim, spec.num_classes, seed);
    for (int rep = 0; rep < 5; ++rep, ++seed) {
      const Vector theta = random_params(m, seed);
      RngState rng{seed, 5};
      const Vector v = rand_gaussian(rng, m.num_params());
      const double h = 1e-4;
      const Vector gp = m.batch_grad(add(theta, scaled(v, h)), ds);
      const Vector gm = m.batch_grad(sub(theta, scaled(v, h)), ds);
      const Vector fd = scaled(sub(gp, gm), 0.5 / h);
      EXPECT_LE(rel_error(m.hvp(theta, ds, v), fd), 1e-4) << to_string(spec.kind) << " rep " << rep;
    }
  }
}

TEST(Hvp, DimensionMismatch) {
  const Model m(logistic_spec(2, 2, 0.0));
  const Dataset ds = random_dataset(3, 2, 2, 1);
  EXPECT_THROW(m.hvp(Vector(6, 0.0), ds, Vector(5, 1.0)), DimensionError);
}

TEST(Hvp, LogisticOrthogonalDirectionSeesOnlyWeightDecay) {
  // Features live in the first 3 coordinates of a 10-dim space; a weight
  // direction supported on the remaining coordinates (bias part zero)
  // leaves every logit unchanged, so only the L2 term curves along it.
  const double wd = 0.3;
  const Model m(logistic_spec(10, 3, wd));
  Dataset ds = random_dataset(8, 10, 3, 4);
  for (auto& s : ds.samples)
    for (std::size_t j = 3; j < 10; ++j) s.x[j] = 0.0;
  const auto& L = m.layout().layers[0];
  RngState rng{6, 0};
  Vector v(m.num_params(), 0.0);
  for (std::size_t k = 0; k < L.out; ++k)
    for (std::size_t j = 3; j < 10; ++j) v[L.weight_offset + k * L.in + j] = rng.uniform() - 0.5;
  const Vector hv = m.hvp(random_params(m, 3), ds, v);
  EXPECT_LE(max_abs(sub(hv, scaled(v, wd))), 1e-12);
}

TEST(ExplicitHessian, ColumnsSymmetryAndAgreementWithHvp) {
  const Model m(mlp_spec(4, {5}, 3, 0.01));
  ASSERT_LE(m.num_params(), 200u);
  const Dataset ds = random_dataset(10, 4, 3, 2);
  const Vector theta = random_params(m, 5);
  const Matrix h = m.explicit_hessian(theta, ds, 0.0);
  EXPECT_LE(h.asymmetry(), 1e-8);
  for (std::size_t j = 0; j < m.num_params(); j += 7) {
    Vector e(m.num_params(), 0.0);
    e[j] = 1.0;
    const Vector col = m.hvp(theta, ds, e);
    for (std::size_t i = 0; i < m.num_params(); ++i) EXPECT_NEAR(h(i, j), col[i], 1e-10);
  }
  RngState rng{8, 0};
  const Vector v = rand_gaussian(rng, m.num_params());
  EXPECT_LE(max_abs(sub(h.multiply(v), m.hvp(theta, ds, v))), 1e-10);
}

TEST(ExplicitHessian, DampedSpectrumOnConvexLogistic) {
  const double damping = 0.05;
  const Model m(logistic_spec(5, 3, 0.0));
  const Dataset ds = random_dataset(30, 5, 3, 9);
  const Matrix h = m.explicit_hessian(random_params(m, 1), ds, damping);
  const auto p = static_cast<Eigen::Index>(m.num_params());
  Eigen::MatrixXd e(p, p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j) e(i, j) = h(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(e);
  EXPECT_GE(es.eigenvalues().minCoeff(), damping - 1e-8);
}

TEST(ExplicitHessian, WeightDecayMakesLogisticPd) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Model m(logistic_spec(6, 4, 0.01));
    const Dataset ds = random_dataset(3, 6, 4, seed);  // fewer samples than parameters
    const Matrix h = m.explicit_hessian(random_params(m, seed), ds, 0.0);
    const auto p = static_cast<Eigen::Index>(m.num_params());
    Eigen::MatrixXd e(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = 0; j < p; ++j) e(i, j) = h(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(e).eigenvalues().minCoeff(), 0.0);
  }
}

TEST(ExplicitHessian, CapRaisesSizeError) {
  const Model m(mlp_spec(50, {50}, 10, 0.0));
  ASSERT_GT(m.num_params(), 2000u);
  const Dataset ds = random_dataset(2, 50, 10, 1);
  EXPECT_THROW(m.explicit_hessian(Vector(m.num_params(), 0.0), ds, 0.0), SizeError);
}

TEST(ExplicitHessian, WorkerCountDoesNotChangeResult) {
  const Model m(mlp_spec(3, {4}, 2, 0.0));
  const Dataset ds = random_dataset(7, 3, 2, 3);
  const Vector theta = random_params(m, 3);
  const Matrix a = m.explicit_hessian(theta, ds, 0.1, Model::kDefaultHessianCap, 1);
  const Matrix b = m.explicit_hessian(theta, ds, 0.1, Model::kDefaultHessianCap, 4);
  for (std::size_t i = 0; i < a.entries().size(); ++i) EXPECT_EQ(a.entries()[i], b.entries()[i]);
}

TEST(FreeFunctions, AgreeWithModel) {
  const ModelSpec spec = mlp_spec(2, {3}, 2, 0.1);
  const Model m(spec);
  const Dataset ds = random_dataset(4, 2, 2, 5);
  const Vector theta = random_params(m, 2);
  EXPECT_EQ(loss(spec, theta, ds.samples[0]), m.loss(theta, ds.samples[0]));
  EXPECT_EQ(grad(spec, theta, ds.samples[0]), m.grad(theta, ds.samples[0]));
  EXPECT_EQ(batch_risk(spec, theta, ds), m.batch_risk(theta, ds));
}
