#include <gtest/gtest.h>

#include <random>

#include "bspml/weights.hpp"
#include "oracles.hpp"

using namespace bspml;

namespace {

ClassIndex equal_classes(int C, std::size_t per) {
  ClassIndex cls;
  std::size_t id = 0;
  for (int c = 0; c < C; ++c) {
    cls.members.emplace_back();
    for (std::size_t j = 0; j < per; ++j, ++id) {
      cls.members.back().push_back(id);
      cls.class_of.push_back(c);
      cls.position.push_back(j);
    }
  }
  return cls;
}

WeightState uniform_state(int C, std::size_t per, double xp, double xn, double lambda, double mu, double w = 1.0) {
  const std::size_t n = static_cast<std::size_t>(C) * per;
  return WeightState(equal_classes(C, per), XiTable{std::vector<double>(n, xp), std::vector<double>(n, xn)}, lambda,
                     mu, std::vector<double>(n, w));
}

}  // namespace

TEST(Objective, ZeroWeightsGiveZero) {
  auto s = uniform_state(3, 3, 0.7, 0.2, 1.5, 2.0, 0.0);
  EXPECT_EQ(objective(s), 0.0);
}

TEST(Objective, HandArithmetic) {
  EXPECT_NEAR(objective(uniform_state(2, 2, 0.5, 0.3, 1.0, 1.0)), -0.4, 1e-15);
  EXPECT_NEAR(objective(uniform_state(3, 4, 0.0, 0.0, 2.0, 1.0)), -6.0, 1e-15);
}

TEST(Objective, BalanceTermCountsPairs) {
  // class means 1 and 0: only the balance and age terms survive with xi = 0
  auto s = uniform_state(2, 2, 0.0, 0.0, 0.0, 3.0);
  s.set_weights({1.0, 1.0, 0.0, 0.0});
  EXPECT_NEAR(objective(s), 3.0, 1e-15);
}

TEST(Derivative, HandArithmetic) {
  const auto s = uniform_state(2, 2, 0.5, 0.3, 1.0, 1.0);
  EXPECT_NEAR(coordinate_derivative(s, 0, 0), 0.3, 1e-15);
}

TEST(Derivative, OnlyAgeTermSurvivesWithZeroXi) {
  const auto s = uniform_state(3, 4, 0.0, 0.0, 1.7, 2.5, 0.6);
  for (std::size_t id = 0; id < s.size(); ++id) EXPECT_NEAR(coordinate_derivative(s, id), -1.7 / 4.0, 1e-15);
}

TEST(Derivative, MatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 10; ++rep) {
    auto s = oracle::random_state({4, 4, 4}, rng);
    auto w = s.weights();
    for (auto& v : w) v = std::clamp(v, 0.01, 0.99);
    s.set_weights(w);
    WeightState probe = s;
    const double h = 1e-6;
    for (std::size_t id = 0; id < s.size(); ++id) {
      auto shifted = w;
      shifted[id] += h;
      probe.set_weights(shifted);
      const double up = objective(probe);
      shifted[id] -= 2 * h;
      probe.set_weights(shifted);
      const double fd = (up - objective(probe)) / (2 * h);
      const double g = coordinate_derivative(s, id);
      EXPECT_LE(std::abs(fd - g) / std::max(std::abs(g), 1e-3), 1e-7);
    }
  }
}

TEST(Derivative, FullGradientStacksCoordinates) {
  std::mt19937_64 rng(2);
  const auto s = oracle::random_state({3, 2, 4}, rng);
  const auto g = full_gradient(s);
  for (std::size_t id = 0; id < s.size(); ++id) EXPECT_EQ(g[static_cast<Eigen::Index>(id)], coordinate_derivative(s, id));
}

TEST(State, IncrementalSumsTrackWeights) {
  std::mt19937_64 rng(3);
  auto s = oracle::random_state({5, 5}, rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 1000; ++k) s.set_weight(static_cast<std::size_t>(k % 10), u(rng));
  for (int c = 0; c < 2; ++c) {
    double direct = 0.0;
    for (auto id : s.classes().members[c]) direct += s.weight(id);
    EXPECT_NEAR(s.class_sum(c), direct, 1e-12);
  }
  EXPECT_THROW(s.set_weight(0, 1.5), ContractError);
}

TEST(Stochastic, ExhaustiveDrawIsExact) {
  std::mt19937_64 rng(4);
  const auto s = oracle::random_state({3, 4, 2}, rng);
  for (int c = 0; c < 3; ++c)
    for (std::size_t a = 0; a < s.classes().class_size(c); ++a)
      EXPECT_NEAR(stochastic_gradient(s, c, a, exhaustive_draw(s, c, a)), coordinate_derivative(s, c, a), 1e-15);
}

TEST(Stochastic, ZeroXiEqualWeightsIgnoresSampling) {
  const auto s = uniform_state(3, 4, 0.0, 0.0, 1.2, 0.0, 0.4);
  Rng rng(5);
  for (int k = 0; k < 50; ++k) EXPECT_NEAR(stochastic_gradient(s, 1, 2, 1, 2, rng), -1.2 / 4.0, 1e-15);
}

TEST(Stochastic, EnumeratedExpectationEqualsDerivative) {
  std::mt19937_64 rng(6);
  auto s = oracle::random_state({3, 3}, rng);
  for (int c = 0; c < 2; ++c)
    for (std::size_t a = 0; a < 3; ++a)
      for (int K = 1; K <= 2; ++K)
        EXPECT_NEAR(oracle::enumerated_expectation(s, c, a, 1, K), coordinate_derivative(s, c, a), 1e-12);

  for (int rep = 0; rep < 10; ++rep) {
    std::uniform_int_distribution<int> sz(2, 4);
    std::vector<std::size_t> sizes{static_cast<std::size_t>(sz(rng)), static_cast<std::size_t>(sz(rng)),
                                   static_cast<std::size_t>(sz(rng))};
    const auto t = oracle::random_state(sizes, rng);
    const std::size_t smallest = *std::min_element(sizes.begin(), sizes.end());
    for (int c = 0; c < 3; ++c)
      for (std::size_t a = 0; a < sizes[c]; ++a)
        for (int P = 1; P <= 2; ++P)
          for (int K = 1; K <= static_cast<int>(std::min(sizes[c] - 1, smallest)); ++K)
            EXPECT_NEAR(oracle::enumerated_expectation(t, c, a, P, K), coordinate_derivative(t, c, a), 1e-12);
  }
}

TEST(Stochastic, SamplerAverageConverges) {
  std::mt19937_64 init(7);
  const auto s = oracle::random_state({4, 3, 4}, init);
  Rng rng(8);
  const int draws = 200000;
  double sum = 0.0, sq = 0.0;
  for (int k = 0; k < draws; ++k) {
    const double g = stochastic_gradient(s, 0, 1, 1, 2, rng);
    sum += g;
    sq += g * g;
  }
  const double mean = sum / draws;
  const double se = std::sqrt((sq / draws - mean * mean) / draws);
  EXPECT_NEAR(mean, coordinate_derivative(s, 0, 1), 5.0 * se + 1e-12);
}

TEST(Stochastic, PreconditionsAreChecked) {
  const auto s = uniform_state(3, 3, 0.1, 0.1, 1.0, 1.0);
  Rng rng(9);
  EXPECT_THROW(draw_gradient_sample(s, 0, 0, 3, 1, rng), ContractError);
  EXPECT_THROW(draw_gradient_sample(s, 0, 0, 1, 3, rng), ContractError);
  EXPECT_THROW(draw_gradient_sample(s, 0, 0, 0, 1, rng), ContractError);
  EXPECT_THROW(coordinate_derivative(s, 5, 0), ContractError);
}

TEST(Projection, BoxExamples) {
  EXPECT_EQ(project_box(std::vector<double>{-0.2, 0.5, 1.7}), (std::vector<double>{0.0, 0.5, 1.0}));
  const std::vector<double> inside{0.0, 0.3, 1.0};
  EXPECT_EQ(project_box(inside), inside);
  const std::vector<double> v{-3.0, 0.25, 9.0};
  EXPECT_EQ(project_box(project_box(v)), project_box(v));
}

TEST(Projection, ProjectedGradientExamples) {
  const std::vector<double> w{0.5, 0.4}, g{0.3, -0.2};
  const auto inner = projected_gradient(w, g, 0.01);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(inner[i], g[i], 1e-12);
  const auto at_top = projected_gradient(std::vector<double>{1.0}, std::vector<double>{-1.0}, 0.1);
  EXPECT_EQ(at_top[0], 0.0);
  const auto zero = projected_gradient(w, std::vector<double>{0.0, 0.0}, 0.5);
  EXPECT_EQ(zero, (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(projected_gradient(w, g, 0.0), ContractError);
}

TEST(Solver, ZeroIterationsLeaveStateUnchanged) {
  std::mt19937_64 init(10);
  const auto s = oracle::random_state({3, 3}, init);
  SolverOptions opt;
  opt.iterations = 0;
  Rng rng(1);
  EXPECT_EQ(solve_weights(s, opt, rng).state.weights(), s.weights());
}

TEST(Solver, LargeLambdaDrivesWeightsToOne) {
  std::mt19937_64 init(11);
  auto s = oracle::random_state({4, 4, 4}, init);
  s.set_lambda(100.0);
  s.set_mu(0.0);
  s.set_weights(std::vector<double>(12, 0.0));
  SolverOptions opt;
  opt.iterations = 2000;
  opt.classes_per_draw = 1;
  opt.per_class = 2;
  Rng rng(2);
  const auto out = solve_weights(s, opt, rng);
  for (double w : out.state.weights()) EXPECT_EQ(w, 1.0);
}

// The subproblem is nonconvex: from w = 1 this instance settles on a
// stationary point that is not the global grid minimum.
TEST(Solver, FixedInstanceReachesStationarity) {
  XiTable xi{{0.9, 0.2, 0.6, 0.4, 1.1, 0.3}, {0.5, 0.1, 0.8, 0.2, 0.6, 0.4}};
  const WeightState s(equal_classes(2, 3), xi, 0.5, 1.0);
  SolverOptions opt;
  opt.iterations = 5000;
  opt.sampling = SamplingMode::exhaustive;
  Rng rng(3);
  const auto out = solve_weights(s, opt, rng);
  EXPECT_LE(out.final_proj_grad_norm, 1e-4);
  EXPECT_LE(objective(out.state), objective(s));
  EXPECT_GE(objective(out.state), brute_force_minimize(s, 0.05).value - 1e-3);
}

TEST(Solver, StartedInTheGlobalBasinMatchesGrid) {
  XiTable xi{{0.9, 0.2, 0.6, 0.4, 1.1, 0.3}, {0.5, 0.1, 0.8, 0.2, 0.6, 0.4}};
  WeightState s(equal_classes(2, 3), xi, 0.5, 1.0);
  const auto grid = brute_force_minimize(s, 0.05);
  s.set_weights(grid.w);
  SolverOptions opt;
  opt.iterations = 5000;
  opt.sampling = SamplingMode::exhaustive;
  Rng rng(3);
  const auto out = solve_weights(s, opt, rng);
  EXPECT_NEAR(objective(out.state), grid.value, 1e-3);
  EXPECT_LE(out.final_proj_grad_norm, 1e-4);
}

TEST(Solver, ConvexInstanceReachesGlobalMinimum) {
  auto s = uniform_state(2, 3, 0.0, 0.0, 0.5, 1.0);
  s.set_weights({0.2, 0.9, 0.0, 0.4, 0.1, 0.7});
  SolverOptions opt;
  opt.iterations = 5000;
  opt.sampling = SamplingMode::exhaustive;
  Rng rng(3);
  const auto out = solve_weights(s, opt, rng);
  EXPECT_NEAR(objective(out.state), brute_force_minimize(s, 0.05).value, 1e-3);
}

TEST(Solver, BalancePressureEqualizesClassMeans) {
  auto s = uniform_state(3, 4, 0.0, 0.0, 0.0, 2.0);
  s.set_weights({1, 1, 1, 1, 0.5, 0.5, 0, 0, 0, 0, 0, 0.25});
  SolverOptions opt;
  opt.iterations = 20000;
  opt.sampling = SamplingMode::exhaustive;
  Rng rng(4);
  const auto out = solve_weights(s, opt, rng);
  for (int c = 0; c < 3; ++c)
    for (int k = c + 1; k < 3; ++k) EXPECT_LT(std::abs(out.state.class_mean(c) - out.state.class_mean(k)), 1e-3);
}

TEST(Solver, EverySamplingModeStaysInBoxAndDescends) {
  std::mt19937_64 init(12);
  for (auto mode : {SamplingMode::fixed, SamplingMode::exhaustive, SamplingMode::growing}) {
    auto s = oracle::random_state({5, 5, 5}, init, 1.0, false);
    SolverOptions opt;
    opt.iterations = 3000;
    opt.sampling = mode;
    opt.classes_per_draw = 1;
    opt.per_class = 2;
    opt.growth_period = 500;
    opt.trace_stride = 1000;
    Rng rng(5);
    const auto out = solve_weights(s, opt, rng);
    for (double w : out.state.weights()) {
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
    }
    EXPECT_LT(objective(out.state), objective(s));
    EXPECT_EQ(out.trace.size(), 3u);
    EXPECT_GT(out.gamma0, 0.0);
  }
}

TEST(Solver, SameSeedSameResult) {
  std::mt19937_64 init(13);
  const auto s = oracle::random_state({4, 4}, init);
  SolverOptions opt;
  opt.iterations = 500;
  opt.per_class = 2;
  Rng a(6), b(6);
  EXPECT_EQ(solve_weights(s, opt, a).state.weights(), solve_weights(s, opt, b).state.weights());
}

TEST(Schedule, HarmonicAndConstant) {
  StepSchedule h;
  h.horizon = 100.0;
  EXPECT_DOUBLE_EQ(h.at(0, 2.0), 2.0);
  EXPECT_DOUBLE_EQ(h.at(100, 2.0), 1.0);
  StepSchedule c;
  c.mode = StepSchedule::Mode::constant;
  EXPECT_DOUBLE_EQ(c.at(5000, 0.3), 0.3);
  StepSchedule bad;
  bad.gamma0 = -1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Grid, ZeroXiPositiveLambdaPicksAllOnes) {
  const auto s = uniform_state(2, 3, 0.0, 0.0, 1.0, 0.0);
  const auto g = brute_force_minimize(s, 0.25);
  EXPECT_EQ(g.w, std::vector<double>(6, 1.0));
  EXPECT_NEAR(g.value, -2.0, 1e-12);
}

TEST(Grid, ZeroXiZeroLambdaTieBreaksToZeros) {
  const auto s = uniform_state(2, 3, 0.0, 0.0, 0.0, 1.0);
  const auto g = brute_force_minimize(s, 0.25);
  EXPECT_EQ(g.w, std::vector<double>(6, 0.0));
}

TEST(Grid, LowerEnvelopeOfSolver) {
  std::mt19937_64 init(14);
  for (int rep = 0; rep < 5; ++rep) {
    const auto s = oracle::random_state({3, 3}, init);
    SolverOptions opt;
    opt.iterations = 3000;
    opt.sampling = SamplingMode::exhaustive;
    Rng rng(static_cast<std::uint64_t>(rep));
    const auto out = solve_weights(s, opt, rng);
    EXPECT_LE(brute_force_minimize(s, 0.05).value, objective(out.state) + 1e-3);
  }
}

TEST(Grid, ValueMatchesObjectiveAtReturnedPoint) {
  std::mt19937_64 init(15);
  auto s = oracle::random_state({2, 2, 2}, init);
  const auto g = brute_force_minimize(s, 0.1);
  s.set_weights(g.w);
  EXPECT_NEAR(objective(s), g.value, 1e-12);
}

TEST(Grid, GuardsLargeGrids) {
  const auto s = uniform_state(2, 4, 0.1, 0.1, 1.0, 1.0);
  EXPECT_THROW(brute_force_minimize(s, 0.05, 1e6), ContractError);
  EXPECT_THROW(brute_force_minimize(s, 0.3), ContractError);
  EXPECT_THROW(brute_force_minimize(uniform_state(3, 3, 0, 0, 1, 1), 0.5), ContractError);
}

TEST(ClassicSpl, ThresholdRule) {
  EXPECT_EQ(classic_spl_weights(std::vector<double>{0.5, 2.0}, 1.0), (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(classic_spl_weights(std::vector<double>{0.5, 2.0}, 2.0), (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(classic_spl_weights(std::vector<double>{0.5, 2.0}, 0.1), (std::vector<double>{0.0, 0.0}));
}

TEST(Curvature, BoundsCoordinateDerivativeChange) {
  std::mt19937_64 init(16);
  auto s = oracle::random_state({3, 4, 5}, init);
  const double lhat = curvature_estimate(s);
  // second difference along any single coordinate is at most lhat
  WeightState probe = s;
  for (std::size_t id = 0; id < s.size(); ++id) {
    auto w = s.weights();
    w[id] = 0.0;
    probe.set_weights(w);
    const double g0 = coordinate_derivative(probe, id);
    w[id] = 1.0;
    probe.set_weights(w);
    EXPECT_LE(std::abs(coordinate_derivative(probe, id) - g0), lhat + 1e-12);
  }
}
