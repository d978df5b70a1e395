#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "seamforge/data.hpp"
#include "seamforge/nn.hpp"

using namespace seamforge;

namespace {

Matrix<double> random_batch(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix<double> x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

std::vector<int> random_labels(int n, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = u(rng);
  return y;
}

Network<double> identity_net() {
  layer::Dense<double> d{2, 2, Matrix<double>::Identity(2, 2), Vector<double>::Zero(2)};
  return Network<double>(Shape::features(2), {d, layer::Softmax{}}, 2);
}

}  // namespace

TEST(Forward, ZeroWeightsGiveUniformSoftmax) {
  auto net = build_network<double>(Shape::features(5), mlp_specs({7}, 10), 10, 1);
  net.unflatten_weights(Vector<double>::Zero(static_cast<Eigen::Index>(net.param_count())));
  const auto p = forward(net, random_batch(4, 5, 2));
  ASSERT_EQ(p.rows(), 4);
  for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_DOUBLE_EQ(p.data()[i], 0.1);
}

TEST(Forward, IdentityDenseHandSoftmax) {
  Matrix<double> x(1, 2);
  x << 3.0, 0.0;
  const auto p = forward(identity_net(), x);
  const double e3 = std::exp(3.0);
  EXPECT_NEAR(p(0, 0), e3 / (e3 + 1), 1e-15);
  EXPECT_NEAR(p(0, 1), 1 / (e3 + 1), 1e-15);
  EXPECT_NEAR(p(0, 0), 0.9526, 1e-4);
}

TEST(Forward, PreservesBatchRowsAndRowsSumToOne) {
  auto net = build_network<float>({6, 6, 1}, small_cnn_specs(3, 3, 4), 4, 9);
  const Matrix<float> x = random_batch(13, 36, 3).cast<float>();
  const auto p = forward(net, x);
  ASSERT_EQ(p.rows(), 13);
  ASSERT_EQ(p.cols(), 4);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    EXPECT_NEAR(p.row(i).sum(), 1.0f, 1e-6f);
    EXPECT_GE(p.row(i).minCoeff(), 0.0f);
    EXPECT_LE(p.row(i).maxCoeff(), 1.0f);
  }
}

TEST(Forward, RejectsWrongWidth) {
  auto net = build_network<double>(Shape::features(5), mlp_specs({3}, 2), 2, 1);
  EXPECT_THROW(forward(net, random_batch(2, 4, 0)), ShapeError);
}

TEST(Network, RejectsIncompatibleLayers) {
  layer::Dense<double> a{3, 4, Matrix<double>::Zero(4, 3), Vector<double>::Zero(4)};
  layer::Dense<double> b{5, 2, Matrix<double>::Zero(2, 5), Vector<double>::Zero(2)};
  EXPECT_THROW(Network<double>(Shape::features(3), {a, b, layer::Softmax{}}, 2), ShapeError);
  // dense straight after a spatial input without flatten
  layer::Dense<double> c{4, 2, Matrix<double>::Zero(2, 4), Vector<double>::Zero(2)};
  EXPECT_THROW(Network<double>({2, 2, 1}, {c, layer::Softmax{}}, 2), ShapeError);
  // missing softmax head
  EXPECT_THROW(Network<double>(Shape::features(3), {a}, 4), ShapeError);
  // kernel larger than input
  EXPECT_THROW(build_network<double>({2, 2, 1}, small_cnn_specs(2, 3, 2), 2, 0), ShapeError);
}

TEST(Network, FlattenUnflattenIsExact) {
  auto net = build_network<float>({7, 7, 2}, small_cnn_specs(4, 3, 5), 5, 11);
  const auto w = net.flatten_weights();
  ASSERT_EQ(static_cast<std::size_t>(w.size()), net.param_count());
  auto other = build_network<float>({7, 7, 2}, small_cnn_specs(4, 3, 5), 5, 12);
  other.unflatten_weights(w);
  EXPECT_EQ(other.flatten_weights(), w);
  const Matrix<float> x = random_batch(3, 98, 1).cast<float>();
  EXPECT_EQ(forward(other, x), forward(net, x));
}

// Gradient check over all layer kinds in 64-bit.
struct GradCase {
  Shape input;
  std::vector<LayerSpec> specs;
  int classes;
};

class GradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheck, AnalyticMatchesCentralDifferences) {
  const int i = GetParam();
  const std::vector<GradCase> cases = {
      {Shape::features(6), mlp_specs({5}, 3), 3},
      {Shape::features(4), mlp_specs({6, 5}, 4), 4},
      {{5, 5, 1}, small_cnn_specs(3, 3, 3), 3},
      {{6, 5, 2}, {LayerSpec::conv2d(2, 2, 3, 2), LayerSpec::relu(), LayerSpec::flatten(),
                   LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dense(3),
                   LayerSpec::softmax()},
       3},
      {{6, 6, 1}, {LayerSpec::conv2d(3, 3, 3), LayerSpec::relu(), LayerSpec::conv2d(2, 2, 2),
                   LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(2),
                   LayerSpec::softmax()},
       2},
  };
  const auto& c = cases[static_cast<std::size_t>(i) % cases.size()];
  auto net = build_network<double>(c.input, c.specs, c.classes, 100 + i);
  // Non-zero biases so every parameter is exercised.
  Vector<double> w = net.flatten_weights();
  std::mt19937_64 rng(7 + i);
  std::normal_distribution<double> g(0.0, 0.1);
  for (Eigen::Index k = 0; k < w.size(); ++k) w[k] += g(rng);
  net.unflatten_weights(w);
  const auto x = random_batch(4, static_cast<int>(c.input.size()), 50 + i);
  const auto y = random_labels(4, c.classes, 60 + i);
  const auto lg = loss_and_grad(net, x, y);
  const auto fd = oracle::fd_gradient(net, x, y);
  EXPECT_LT(oracle::rel_err(lg.grad, fd), 1e-4);
  EXPECT_GE(lg.loss, 0.0);
  EXPECT_NEAR(lg.loss, oracle::mean_ce(net, x, y), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(LayerKinds, GradientCheck, ::testing::Range(0, 10));

TEST(LossAndGrad, DuplicatingSamplesKeepsMeanGradient) {
  auto net = build_network<double>(Shape::features(4), mlp_specs({5}, 3), 3, 3);
  const auto x = random_batch(5, 4, 8);
  const auto y = random_labels(5, 3, 9);
  Matrix<double> x2(10, 4);
  x2 << x, x;
  std::vector<int> y2 = y;
  y2.insert(y2.end(), y.begin(), y.end());
  const auto a = loss_and_grad(net, x, y);
  const auto b = loss_and_grad(net, x2, y2);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  EXPECT_LT((a.grad - b.grad).norm(), 1e-12);
}

TEST(LossAndGrad, ConfidentCorrectLogitsGiveVanishingGradient) {
  // Single dense layer with W = 10 I, so logits = 10 * onehot(y) for x = onehot(y).
  const int c = 4;
  layer::Dense<double> d{c, c, 10.0 * Matrix<double>::Identity(c, c), Vector<double>::Zero(c)};
  Network<double> net(Shape::features(c), {d, layer::Softmax{}}, c);
  Matrix<double> x = Matrix<double>::Identity(c, c);
  const std::vector<int> y = {0, 1, 2, 3};
  EXPECT_LT(loss_and_grad(net, x, y).grad.norm(), 1e-3);
}

TEST(LossAndGrad, RejectsOutOfRangeLabel) {
  auto net = build_network<double>(Shape::features(3), mlp_specs({}, 2), 2, 0);
  const std::vector<int> y = {2};
  EXPECT_THROW(loss_and_grad(net, random_batch(1, 3, 0), y), InvalidArgument);
}

TEST(PerExampleGradient, LengthAndDeterminism) {
  auto net = build_network<double>(Shape::features(5), mlp_specs({4}, 3), 3, 2);
  const auto x = random_batch(1, 5, 3);
  std::span<const double> row(x.data(), 5);
  const auto g1 = per_example_gradient(net, row, 1);
  const auto g2 = per_example_gradient(net, row, 1);
  EXPECT_EQ(static_cast<std::size_t>(g1.size()), net.param_count());
  EXPECT_EQ(g1, g2);
  EXPECT_LT(oracle::rel_err(g1, oracle::fd_logit_gradient(net, x, 1)), 1e-6);
}

TEST(PerExampleGradient, LinearModelFeatureIsInput) {
  // Logit k of a single dense layer is w_k . x + b_k: its gradient is x on
  // row k, 1 on bias k, zero elsewhere, at any anchor.
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto net = build_network<double>(Shape::features(3), mlp_specs({}, 2), 2, seed);
    const std::vector<double> x = {0.3, -1.0, 2.5};
    const auto g = per_example_gradient(net, std::span<const double>(x), 1);
    // layout: W (2x3) row-major then b (2)
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(8);
    expect.segment(3, 3) << 0.3, -1.0, 2.5;
    expect[7] = 1.0;
    EXPECT_EQ(g, expect);
  }
}

TEST(PerExampleGradient, RejectsShapeMismatch) {
  auto net = build_network<double>(Shape::features(5), mlp_specs({4}, 3), 3, 2);
  const std::vector<double> x(4, 0.0);
  EXPECT_THROW(per_example_gradient(net, std::span<const double>(x), 0), ShapeError);
}

TEST(Accuracy, HandBuiltCases) {
  auto net = identity_net().cast<float>();
  LabeledDataset d;
  d.class_count = 2;
  d.shape = Shape::features(2);
  d.inputs.resize(3, 2);
  d.inputs << 1, 0, 0, 1, 1, 0;
  d.labels = {0, 1, 1};
  EXPECT_NEAR(evaluate_accuracy(net, d), 2.0 / 3.0, 1e-15);
  d.labels = {0, 1, 0};
  EXPECT_EQ(evaluate_accuracy(net, d), 1.0);
}

TEST(Accuracy, TiesBreakToLowestIndex) {
  auto net = build_network<float>(Shape::features(3), mlp_specs({}, 10), 10, 0);
  net.unflatten_weights(Vector<float>::Zero(static_cast<Eigen::Index>(net.param_count())));
  auto d = synth_blobs(10, 5, 10, 3.0, 1);
  d.inputs = d.inputs.leftCols(3).eval();
  d.shape = Shape::features(3);
  // uniform output always predicts class 0 -> accuracy = share of class 0
  EXPECT_NEAR(evaluate_accuracy(net, d), 0.1, 1e-12);
}

TEST(Accuracy, RejectsEmpty) {
  auto net = identity_net();
  LabeledDataset d;
  d.class_count = 2;
  d.shape = Shape::features(2);
  d.inputs.resize(0, 2);
  EXPECT_THROW(evaluate_accuracy(net, d), InvalidArgument);
}

TEST(SgdTrain, ZeroEpochsIsNoOp) {
  auto net = build_network<float>(Shape::features(4), mlp_specs({3}, 2), 2, 5);
  const auto data = synth_blobs(2, 10, 4, 4.0, 1);
  TrainConfig cfg;
  cfg.max_epochs = 0;
  const auto out = sgd_train(net, data, cfg);
  EXPECT_EQ(out.network.flatten_weights(), net.flatten_weights());
  EXPECT_TRUE(out.history.empty());
}

TEST(SgdTrain, SameSeedIsBitwiseIdentical) {
  auto net = build_network<float>(Shape::features(8), mlp_specs({6}, 3), 3, 5);
  const auto data = synth_blobs(3, 30, 8, 3.0, 2);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.seed = 99;
  cfg.batch_size = 7;
  const auto a = sgd_train(net, data, cfg);
  const auto b = sgd_train(net, data, cfg);
  EXPECT_EQ(a.network.flatten_weights(), b.network.flatten_weights());
  cfg.seed = 100;
  const auto c = sgd_train(net, data, cfg);
  EXPECT_NE(a.network.flatten_weights(), c.network.flatten_weights());
}

TEST(SgdTrain, SeparableBlobsReachFullAccuracy) {
  // 2 classes, separation 4 sigma, n = 200. Separability oracle: the Bayes
  // rule x0 > x1 classifies every point; take the first seed where it does.
  auto bayes_separable = [](const LabeledDataset& d) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      if ((d.inputs(r, 0) > d.inputs(r, 1) ? 0 : 1) != d.labels[i]) return false;
    }
    return true;
  };
  std::uint64_t seed = 0;
  while (!bayes_separable(synth_blobs(2, 100, 2, 4.0, seed))) ++seed;
  ASSERT_LT(seed, 100u);
  const auto data = synth_blobs(2, 100, 2, 4.0, seed);
  auto net = build_network<float>(Shape::features(2), mlp_specs({8}, 2), 2, 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.5;
  cfg.batch_size = 16;
  cfg.max_epochs = 50;
  cfg.seed = 3;
  const auto out = sgd_train(net, data, cfg);
  EXPECT_LE(out.history.size(), 50u);
  EXPECT_EQ(evaluate_accuracy(out.network, data), 1.0);
}

TEST(SgdTrain, RejectsEmptyDataAndBadConfig) {
  auto net = build_network<float>(Shape::features(2), mlp_specs({}, 2), 2, 1);
  LabeledDataset empty;
  empty.class_count = 2;
  empty.shape = Shape::features(2);
  empty.inputs.resize(0, 2);
  EXPECT_THROW(sgd_train(net, empty, TrainConfig{}), InvalidArgument);
  TrainConfig bad;
  bad.learning_rate = 0;
  EXPECT_THROW(sgd_train(net, synth_blobs(2, 3, 2, 1, 0), bad), InvalidArgument);
}

TEST(LayerActivations, OnePerParameterisedLayer) {
  auto net = build_network<double>(Shape::features(4), mlp_specs({5, 3}, 2), 2, 1);
  const auto x = random_batch(6, 4, 1);
  const auto acts = layer_activations(net, x);
  ASSERT_EQ(acts.size(), 3u);
  EXPECT_EQ(acts[0].cols(), 5);
  EXPECT_EQ(acts[1].cols(), 3);
  EXPECT_EQ(acts[2].cols(), 2);
  EXPECT_GE(acts[0].minCoeff(), 0.0);  // post-relu
  EXPECT_EQ(acts[2], logits(net, x));
}
