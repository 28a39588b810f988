#include <gtest/gtest.h>

#include "bspml/driver.hpp"
#include "bspml/experiment.hpp"

using namespace bspml;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.outer_iterations = 5;
  cfg.classes_per_batch = 2;
  cfg.per_class = 4;
  cfg.learning_rate = 0.01;
  cfg.hidden = {8};
  cfg.embedding_dim = 4;
  cfg.seed = 3;
  return cfg;
}

Dataset two_class(std::uint64_t seed) { return generate_synthetic({2, 20, 2, 6.0, 0.5}, seed); }

}  // namespace

TEST(AgeSchedule, GrowsThenCaps) {
  AgeSchedule age{1.0, 1.3, 1.5};
  double l = age.lambda0;
  l = age.next(l);
  EXPECT_DOUBLE_EQ(l, 1.3);
  l = age.next(l);
  EXPECT_DOUBLE_EQ(l, 1.5);
  EXPECT_DOUBLE_EQ(age.next(l), 1.5);
}

TEST(AgeSchedule, Validation) {
  EXPECT_THROW((AgeSchedule{0.0, 1.3, 3.0}.validate()), ConfigError);
  EXPECT_THROW((AgeSchedule{1.0, 1.0, 3.0}.validate()), ConfigError);
  EXPECT_THROW((AgeSchedule{2.0, 1.3, 1.0}.validate()), ConfigError);
}

TEST(TrainConfig, RejectsBadValues) {
  auto cfg = small_config();
  cfg.classes_per_batch = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.learning_rate = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.mu = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_config();
  cfg.ms.alpha = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_NO_THROW(small_config().validate());
}

TEST(Batch, GroupsKSamplesOfPClasses) {
  const auto ds = generate_synthetic({4, 6, 2, 3.0, 1.0}, 1);
  const auto classes = split_by_class(ds);
  Rng rng(2);
  const auto batch = sample_batch(classes, 3, 4, rng);
  ASSERT_EQ(batch.size(), 12u);
  for (int p = 0; p < 3; ++p) {
    std::set<std::size_t> distinct;
    for (int k = 0; k < 4; ++k) {
      distinct.insert(batch[p * 4 + k]);
      EXPECT_EQ(ds.labels[batch[p * 4 + k]], ds.labels[batch[p * 4]]);
    }
    EXPECT_EQ(distinct.size(), 4u);
  }
}

TEST(Batch, TooFewEligibleClassesIsAContractError) {
  const auto ds = generate_synthetic({2, 3, 2, 3.0, 1.0}, 1);
  Rng rng(2);
  EXPECT_THROW(sample_batch(split_by_class(ds), 2, 4, rng), ContractError);
  EXPECT_THROW(sample_batch(split_by_class(ds), 3, 2, rng), ContractError);
}

TEST(TrainTheta, ZeroWeightsOrZeroRateLeaveModelUnchanged) {
  const auto ds = two_class(1);
  auto cfg = small_config();
  const auto model = initial_model(ds, cfg);
  Rng rng(4);
  EXPECT_EQ(train_theta(model, ds, std::vector<double>(ds.size(), 0.0), cfg, 2, rng), model);
  cfg.learning_rate = 0.0;
  EXPECT_EQ(train_theta(model, ds, std::vector<double>(ds.size(), 1.0), cfg, 2, rng), model);
}

TEST(TrainTheta, UnitWeightsMoveTheModel) {
  const auto ds = generate_synthetic({2, 20, 2, 0.5, 1.0}, 1);
  const auto cfg = small_config();
  const auto model = initial_model(ds, cfg);
  Rng rng(4);
  EXPECT_FALSE(train_theta(model, ds, std::vector<double>(ds.size(), 1.0), cfg, 1, rng) == model);
}

TEST(Bspml, ZeroIterationsReturnsInitialState) {
  const auto ds = two_class(2);
  auto cfg = small_config();
  cfg.outer_iterations = 0;
  const auto run = bspml_train(ds, cfg);
  EXPECT_EQ(run.model, initial_model(ds, cfg));
  EXPECT_EQ(run.weights.weights(), std::vector<double>(ds.size(), 1.0));
  EXPECT_TRUE(run.trace.empty());
}

TEST(Bspml, PinnedWeightsReproduceBaseline) {
  const auto ds = two_class(3);
  auto cfg = small_config();
  cfg.pin_weights = true;
  const auto a = bspml_train(ds, cfg);
  const auto b = ms_baseline_train(ds, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.weights.weights(), std::vector<double>(ds.size(), 1.0));
}

TEST(Bspml, SameSeedSameRun) {
  const auto ds = two_class(4);
  const auto cfg = small_config();
  const auto a = bspml_train(ds, cfg);
  const auto b = bspml_train(ds, cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.weights.weights(), b.weights.weights());
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].objective, b.trace[i].objective);
}

TEST(Bspml, LambdaTraceAndWeightBox) {
  const auto ds = two_class(5);
  auto cfg = small_config();
  cfg.outer_iterations = 8;
  cfg.weight_sampling = SamplingMode::fixed;
  const auto run = bspml_train(ds, cfg);
  ASSERT_EQ(run.trace.size(), 8u);
  double prev = cfg.age.lambda0;
  for (std::size_t i = 0; i < run.trace.size(); ++i) {
    EXPECT_EQ(run.trace[i].t, i + 1);
    EXPECT_GE(run.trace[i].lambda, prev);
    EXPECT_LE(run.trace[i].lambda, cfg.age.lambda_max);
    EXPECT_TRUE(std::isfinite(run.trace[i].objective));
    prev = run.trace[i].lambda;
  }
  for (double w : run.weights.weights()) {
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 1.0);
  }
}

TEST(Bspml, NoisyTwoClassRunSeparatesWeightsAndSettles) {
  const auto clean = two_class(6);
  const auto [noisy, mask] = inject_label_noise(clean, 0.2, 7);
  auto cfg = small_config();
  cfg.outer_iterations = 30;
  cfg.learning_rate = 0.001;
  const auto run = bspml_train(noisy, cfg);
  const auto sep = weight_separation(run.weights, mask);
  EXPECT_GT(sep.gap, 0.2);
  EXPECT_LT(run.trace.back().delta, 1e-2);
}

TEST(Baseline, ZeroEpochsKeepsInitialModel) {
  const auto ds = two_class(8);
  auto cfg = small_config();
  cfg.theta_epochs = 0;
  const auto run = ms_baseline_train(ds, cfg);
  EXPECT_EQ(run.model, initial_model(ds, cfg));
  for (const auto& row : run.trace) EXPECT_EQ(row.delta, 0.0);
}

TEST(Baseline, TraceHoldsFullSetLoss) {
  const auto ds = two_class(9);
  const auto cfg = small_config();
  const auto run = ms_baseline_train(ds, cfg);
  ASSERT_EQ(run.trace.size(), cfg.outer_iterations);
  EXPECT_NEAR(run.trace.back().objective, ms_loss(forward_batch(run.model, ds.features), ds.labels, cfg.ms), 1e-12);
}

TEST(Sweep, EmptyGridAndUnknownParameter) {
  const auto ds = two_class(10);
  EXPECT_THROW(run_sweep(ds, small_config(), SweepParameter::mu, std::vector<double>{}), ConfigError);
  EXPECT_THROW(parse_sweep_parameter("alpha"), ConfigError);
  EXPECT_EQ(parse_sweep_parameter("lambda_max"), SweepParameter::lambda_max);
}

TEST(Sweep, OneRowPerValue) {
  const auto ds = two_class(11);
  auto cfg = small_config();
  cfg.outer_iterations = 2;
  const std::vector<double> grid{0.0, 1.0, 5.0};
  const auto rows = run_sweep(ds, cfg, SweepParameter::mu, grid);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(rows[i].value, grid[i]);
}
