#include <adnorm/mlp.hpp>
#include <adnorm/rng.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace adnorm;
using namespace adnorm::mlp;

namespace {

NetworkConfig widths(std::vector<int> w) {
  NetworkConfig c;
  c.layer_widths = std::move(w);
  return c;
}

ClassifierModel random_model(const NetworkConfig& c, std::size_t m, std::uint64_t seed) {
  ClassifierModel model = ClassifierModel::zeros(c, m);
  Rng rng = make_rng(seed);
  std::normal_distribution<double> d(0.0, 0.5);
  for (Layer& l : model.layers) {
    for (Eigen::Index i = 0; i < l.weights.size(); ++i) l.weights.data()[i] = d(rng);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = d(rng);
  }
  return model;
}

Dataset noise_dataset(std::size_t m, std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> d;
  std::vector<std::vector<double>> rows(n, std::vector<double>(m));
  std::vector<int> labels(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (double& x : rows[j]) x = d(rng);
    labels[j] = static_cast<int>(j % 2);
  }
  return Dataset::from_rows(rows, labels);
}

}  // namespace

TEST(Forward, HandComputedNetwork) {
  // relu([1,-1]·x) = [2, 0] for x = (2, 0); output 1.5·2 + 0 = 3.
  ClassifierModel model = ClassifierModel::zeros(widths({2}), 2);
  model.layers[0].weights << 1.0, 0.0, -1.0, 0.0;
  model.layers[1].weights << 1.5, 4.0;
  const std::vector<double> x{2.0, 0.0};
  EXPECT_NEAR(model.logit(x), 3.0, 1e-15);
  EXPECT_NEAR(forward(model, x), 1.0 / (1.0 + std::exp(-3.0)), 1e-15);
  EXPECT_NEAR(forward(model, x), 0.95257, 1e-5);
}

TEST(Forward, StandardizationUsesStoredMoments) {
  ClassifierModel model = ClassifierModel::zeros(NetworkConfig{}, 1);
  model.layers[0].weights << 1.0;
  model.feature_means << 10.0;
  model.feature_sds << 2.0;
  EXPECT_DOUBLE_EQ(model.logit(std::vector<double>{14.0}), 2.0);
  EXPECT_THROW(model.logit(std::vector<double>{1.0, 2.0}), DimensionError);
  EXPECT_THROW(model.logit(std::vector<double>{NAN}), DomainError);
}

TEST(Loss, CrossEntropyOracles) {
  EXPECT_NEAR(bce(std::vector<double>{0.5}, std::vector<double>{1.0}), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce(std::vector<double>{0.9}, std::vector<double>{1.0}), -std::log(0.9), 1e-15);
  EXPECT_NEAR(bce(std::vector<double>{0.9}, std::vector<double>{1.0}), 0.10536, 1e-5);
  EXPECT_NEAR(bce(std::vector<double>{0.1, 0.9}, std::vector<double>{0.0, 1.0}), -std::log(0.9), 1e-15);
  EXPECT_TRUE(std::isfinite(bce(std::vector<double>{0.0}, std::vector<double>{1.0})));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam adam(3, 1e-3);
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -7.0, 1e-3};
  adam.step(p, g);
  EXPECT_NEAR(p[0], 1.0 - 0.001, 1e-9);
  EXPECT_NEAR(p[1], -2.0 + 0.001, 1e-9);
  EXPECT_NEAR(p[2], 0.5 - 0.001, 1e-8);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Gradient, MatchesCentralDifferences) {
  const NetworkConfig c = widths({16, 8});
  const ClassifierModel model = random_model(c, 6, 3);
  const Dataset data = noise_dataset(6, 12, 4);
  const Gradients g = gradient(model, data);
  EXPECT_NEAR(g.loss, loss(model, data), 1e-12);

  std::vector<double> params;
  std::vector<double> analytic;
  detail::flatten(model.layers, params);
  detail::flatten(g.layers, analytic);
  ASSERT_EQ(params.size(), 6u * 16 + 16 + 16 * 8 + 8 + 8 + 1);

  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    ClassifierModel plus = model;
    ClassifierModel minus = model;
    std::vector<double> p = params;
    p[k] += h;
    detail::unflatten(p, plus.layers);
    p[k] -= 2 * h;
    detail::unflatten(p, minus.layers);
    const double fd = (loss(plus, data) - loss(minus, data)) / (2 * h);
    const double scale = std::max(std::abs(fd) + std::abs(analytic[k]), 1e-6);
    worst = std::max(worst, std::abs(fd - analytic[k]) / scale);
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Gradient, DropoutMasksMatchScaledNetwork) {
  // A mask of all 2s equals doubling the next layer's weights.
  const NetworkConfig c = widths({5});
  const ClassifierModel model = random_model(c, 3, 8);
  const Dataset data = noise_dataset(3, 7, 9);
  DropoutMasks masks{Eigen::MatrixXd::Constant(5, 7, 2.0)};
  ClassifierModel doubled = model;
  doubled.layers[1].weights *= 2.0;
  const Gradients a = gradient(model, data, &masks);
  const Gradients b = gradient(doubled, data);
  EXPECT_NEAR(a.loss, b.loss, 1e-13);
  EXPECT_TRUE(a.layers[0].weights.isApprox(b.layers[0].weights, 1e-12));
  EXPECT_TRUE(a.layers[1].weights.isApprox(2.0 * b.layers[1].weights, 1e-12));
}

TEST(Gradient, ZeroOutputWeightsBlockHiddenGradients) {
  ClassifierModel model = random_model(widths({4, 3}), 2, 5);
  model.layers.back().weights.setZero();
  const Gradients g = gradient(model, noise_dataset(2, 10, 6));
  for (std::size_t l = 0; l + 1 < g.layers.size(); ++l) {
    EXPECT_EQ(g.layers[l].weights.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(g.layers[l].bias.cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Gradient, DuplicatedBatchHasSameMeanGradient) {
  const ClassifierModel model = random_model(widths({4}), 3, 2);
  const Dataset once = noise_dataset(3, 5, 1);
  Dataset twice;
  twice.features.resize(3, 10);
  twice.features << once.features, once.features;
  twice.labels.resize(10);
  twice.labels << once.labels, once.labels;
  const Gradients a = gradient(model, once);
  const Gradients b = gradient(model, twice);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    EXPECT_TRUE(a.layers[l].weights.isApprox(b.layers[l].weights, 1e-12));
}

TEST(Train, SeparatesShiftedClasses) {
  Rng rng = make_rng(77);
  std::normal_distribution<double> d;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (int j = 0; j < 400; ++j) {
    const int y = j % 2;
    rows.push_back({d(rng) + (y ? 4.0 : 0.0), d(rng), d(rng) - (y ? 4.0 : 0.0)});
    labels.push_back(y);
  }
  const Dataset data = Dataset::from_rows(rows, labels);
  NetworkConfig c = preset("model3");
  c.epochs = 40;
  c.batch_size = 32;
  const ClassifierModel model = train(c, data);
  int correct = 0;
  for (std::size_t j = 0; j < rows.size(); ++j) correct += (model.forward(rows[j]) > 0.5) == (labels[j] == 1);
  EXPECT_GE(correct / 400.0, 0.99);
  EXPECT_EQ(model.loss_history.size(), 4u);
}

TEST(Train, NoSignalStaysNearChance) {
  NetworkConfig c = preset("linear");
  c.epochs = 300;
  c.batch_size = 50;
  const ClassifierModel model = train(c, noise_dataset(4, 1000, 12));
  EXPECT_NEAR(model.final_loss, std::log(2.0), 0.02);
}

TEST(Train, DeterministicForSeed) {
  NetworkConfig c = preset("model4");
  c.epochs = 5;
  c.batch_size = 16;
  const Dataset data = noise_dataset(5, 64, 3);
  const ClassifierModel a = train(c, data);
  const ClassifierModel b = train(c, data);
  for (std::size_t l = 0; l < a.layers.size(); ++l) EXPECT_EQ(a.layers[l].weights, b.layers[l].weights);
}

TEST(Train, RejectsBadInput) {
  NetworkConfig c = preset("linear");
  c.batch_size = 8;
  Dataset one_label = noise_dataset(2, 10, 1);
  one_label.labels.setZero();
  EXPECT_THROW(train(c, one_label), DomainError);
  c.batch_size = 100;
  EXPECT_THROW(train(c, noise_dataset(2, 10, 1)), DomainError);
  EXPECT_THROW(preset("model9"), DomainError);
}

TEST(ModelFile, RoundTripReproducesOutputs) {
  NetworkConfig c = preset("model3");
  c.epochs = 3;
  c.batch_size = 16;
  const Dataset data = noise_dataset(6, 64, 21);
  const ClassifierModel model = train(c, data);
  std::stringstream buf;
  write_model(buf, model);
  const ClassifierModel back = read_model(buf);
  std::vector<double> x(6);
  for (std::size_t j = 0; j < data.size(); ++j) {
    for (std::size_t i = 0; i < 6; ++i) x[i] = data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    EXPECT_EQ(model.forward(x), back.forward(x));
  }
  std::stringstream bad("not a model");
  EXPECT_THROW(read_model(bad), Error);
}
