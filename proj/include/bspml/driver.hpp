#pragma once

// Alternating optimization: fix the sample weights and train the embedding
// on weighted informative mini-batches, then fix the embedding and re-solve
// the weights, then grow the age parameter.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bspml/data.hpp"
#include "bspml/embed.hpp"
#include "bspml/error.hpp"
#include "bspml/eval.hpp"
#include "bspml/msloss.hpp"
#include "bspml/random.hpp"
#include "bspml/weights.hpp"

namespace bspml {

// lambda^t = min(multiplier * lambda^{t-1}, lambda_max)
struct AgeSchedule {
  double lambda0 = 1.0;
  double multiplier = 1.3;
  double lambda_max = 3.0;

  double next(double lambda) const { return std::min(multiplier * lambda, lambda_max); }

  void validate() const {
    if (!(lambda0 > 0.0) || !std::isfinite(lambda0)) throw ConfigError("lambda0 must be > 0");
    if (!(multiplier > 1.0) || !std::isfinite(multiplier)) throw ConfigError("lambda multiplier must be > 1");
    if (!(lambda_max >= lambda0) || !std::isfinite(lambda_max)) throw ConfigError("lambda_max must be >= lambda0");
  }
};

struct TrainConfig {
  std::size_t outer_iterations = 100;
  std::size_t theta_epochs = 1;
  std::size_t weight_iterations = 0;  // 0: 200 * N coordinate steps
  int classes_per_batch = 4;          // P
  int per_class = 4;                  // K
  double learning_rate = 0.0002;
  MSHyperParams ms;
  double mu = 3.0;
  AgeSchedule age;

  // Embedding network.
  std::vector<int> hidden{32};
  int embedding_dim = 8;
  Activation activation = Activation::tanh;

  // Weight solver. Zero draw sizes resolve to min(P, C-1) classes and
  // min(K, smallest class - 1) weights.
  SamplingMode weight_sampling = SamplingMode::exhaustive;
  int weight_classes = 0;
  int weight_per_class = 0;
  StepSchedule weight_schedule;
  std::size_t weight_trace_stride = 0;
  bool weight_warm_schedule = false;  // true: step decay continues across alternations

  std::uint64_t seed = 0;
  bool pin_weights = false;  // skip the weight step, w stays 1

  void validate() const {
    ms.validate();
    age.validate();
    weight_schedule.validate();
    if (outer_iterations > 1000000) throw ConfigError("outer iteration count is unreasonably large");
    if (classes_per_batch < 2) throw ConfigError("a batch needs P >= 2 classes");
    if (per_class < 2) throw ConfigError("a batch needs K >= 2 samples per class");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
    if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("mu must be >= 0");
    if (embedding_dim < 1) throw ConfigError("embedding dimension must be >= 1");
    for (int h : hidden)
      if (h < 1) throw ConfigError("hidden layer sizes must be >= 1");
    if (weight_classes < 0 || weight_per_class < 0) throw ConfigError("weight draw sizes must be >= 0");
  }
};

struct ConvergenceRow {
  std::size_t t = 0;
  double lambda = 0.0;
  double objective = 0.0;
  double delta = 0.0;  // |L^t - L^{t-1}|
  double maw = 0.0;
  double sdaw = 0.0;
};

struct TrainResult {
  EmbeddingModel model;
  WeightState weights;
  std::vector<ConvergenceRow> trace;
  std::vector<WeightTraceRow> weight_trace;  // last weight step only
};

// Thrown when the objective stops being finite; carries the rows completed
// so far.
struct TrainingAborted : NumericError {
  TrainingAborted(const std::string& what, std::vector<ConvergenceRow> rows)
      : NumericError(what), trace(std::move(rows)) {}
  std::vector<ConvergenceRow> trace;
};

inline EmbeddingModel initial_model(const Dataset& ds, const TrainConfig& cfg) {
  return EmbeddingModel::random(ds.dim(), cfg.hidden, cfg.embedding_dim, cfg.activation, derive_seed(cfg.seed, 1));
}

// P classes (among those with at least K samples) then K samples of each,
// all uniformly without replacement. Returns sample ids grouped by class.
template <class URBG>
std::vector<std::size_t> sample_batch(const ClassIndex& classes, int classes_per_batch, int per_class, URBG& rng) {
  std::vector<int> eligible;
  for (int c = 0; c < classes.num_classes(); ++c) {
    if (classes.class_size(c) >= static_cast<std::size_t>(per_class)) eligible.push_back(c);
    else
      std::clog << "warning: class " << c << " has " << classes.class_size(c) << " < K=" << per_class
                << " samples; skipped for batching\n";
  }
  if (eligible.size() < static_cast<std::size_t>(classes_per_batch))
    throw ContractError("only " + std::to_string(eligible.size()) + " classes have at least K=" +
                        std::to_string(per_class) + " samples; a batch needs P=" + std::to_string(classes_per_batch));
  std::vector<std::size_t> batch;
  for (int c : choose(eligible, static_cast<std::size_t>(classes_per_batch), rng)) {
    auto picked = choose(classes.members[c], static_cast<std::size_t>(per_class), rng);
    batch.insert(batch.end(), picked.begin(), picked.end());
  }
  return batch;
}

// Loss and parameter gradient of the weighted informative batch loss.
struct BatchStep {
  double loss = 0.0;
  ParamGrads grads;
};

inline BatchStep batch_gradient(const EmbeddingModel& model, const Dataset& ds, std::span<const std::size_t> batch,
                                std::span<const double> weights, const MSHyperParams& hp, int classes_per_batch,
                                int per_class) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(batch.size()), ds.dim());
  std::vector<int> labels(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(batch[i]));
    labels[i] = ds.labels[batch[i]];
  }
  const Eigen::MatrixXd emb = forward_batch(model, x);
  const Eigen::MatrixXd sim = emb * emb.transpose();
  const auto mined = mine_pairs(sim, labels, hp.epsilon);
  const auto loss = weighted_batch_loss_grad(batch, weights, mined, sim, hp, classes_per_batch, per_class);
  return {loss.value, backward(model, x, embedding_grad(emb, loss.d_sim))};
}

inline std::size_t batches_per_epoch(const Dataset& ds, const TrainConfig& cfg) {
  const std::size_t per_batch = static_cast<std::size_t>(cfg.classes_per_batch) * cfg.per_class;
  return std::max<std::size_t>(1, ds.size() / per_batch);
}

// Mini-batch gradient descent on the weighted informative batch loss with
// the weights held fixed. One epoch is floor(N / PK) batches.
template <class URBG>
EmbeddingModel train_theta(EmbeddingModel model, const Dataset& ds, std::span<const double> weights,
                           const TrainConfig& cfg, std::size_t epochs, URBG& rng) {
  detail::require(weights.size() == ds.size(), "weight vector does not match dataset");
  const ClassIndex classes = split_by_class(ds);
  const std::size_t steps = epochs * batches_per_epoch(ds, cfg);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto batch = sample_batch(classes, cfg.classes_per_batch, cfg.per_class, rng);
    const auto step = batch_gradient(model, ds, batch, weights, cfg.ms, cfg.classes_per_batch, cfg.per_class);
    model = sgd_step(model, step.grads, cfg.learning_rate);
  }
  return model;
}

inline SolverOptions weight_solver_options(const Dataset& ds, const ClassIndex& classes, const TrainConfig& cfg) {
  std::size_t smallest = ds.size();
  for (int c = 0; c < classes.num_classes(); ++c) smallest = std::min(smallest, classes.class_size(c));
  SolverOptions opt;
  opt.iterations = cfg.weight_iterations ? cfg.weight_iterations : 200 * ds.size();
  opt.schedule = cfg.weight_schedule;
  opt.sampling = cfg.weight_sampling;
  opt.classes_per_draw = cfg.weight_classes ? cfg.weight_classes
                                            : std::min(cfg.classes_per_batch, classes.num_classes() - 1);
  opt.per_class = cfg.weight_per_class ? cfg.weight_per_class
                                       : static_cast<int>(std::min<std::size_t>(cfg.per_class, smallest - 1));
  opt.trace_stride = cfg.weight_trace_stride;
  return opt;
}

inline XiTable xi_table_for(const EmbeddingModel& model, const Dataset& ds, const MSHyperParams& hp) {
  return build_xi_table(forward_batch(model, ds.features), ds.labels, hp);
}

// Weights start at 1. Each outer iteration t trains the embedding, rebuilds
// the xi table, re-solves the weights at lambda^{t-1}, and sets
// lambda^t = min(c lambda^{t-1}, lambda_max). The trace row holds
// L(theta^t, w^t; lambda^t).
inline TrainResult bspml_train(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  ds.validate();
  detail::require(ds.num_classes >= 2, "training needs at least 2 classes");
  const ClassIndex classes = split_by_class(ds);
  Rng theta_rng(derive_seed(cfg.seed, 2));
  Rng weight_rng(derive_seed(cfg.seed, 3));

  EmbeddingModel model = initial_model(ds, cfg);
  WeightState state(classes, xi_table_for(model, ds, cfg.ms), cfg.age.lambda0, cfg.mu);
  SolverOptions solver = weight_solver_options(ds, classes, cfg);

  TrainResult result{model, state, {}, {}};
  double previous = objective(state);
  double lambda = cfg.age.lambda0;
  for (std::size_t t = 1; t <= cfg.outer_iterations; ++t) {
    model = train_theta(std::move(model), ds, state.weights(), cfg, cfg.theta_epochs, theta_rng);
    state.set_xi(xi_table_for(model, ds, cfg.ms));
    if (!cfg.pin_weights) {
      state.set_lambda(lambda);
      auto solved = solve_weights(std::move(state), solver, weight_rng);
      state = std::move(solved.state);
      result.weight_trace = std::move(solved.trace);
      if (cfg.weight_warm_schedule) solver.schedule_offset += solver.iterations;
    }
    lambda = cfg.age.next(lambda);
    state.set_lambda(lambda);

    const double value = objective(state);
    const auto st = weight_stats(state);
    result.trace.push_back({t, lambda, value, std::abs(value - previous), st.maw, st.sdaw});
    if (!std::isfinite(value))
      throw TrainingAborted("non-finite objective at outer iteration " + std::to_string(t), result.trace);
    previous = value;
  }
  result.model = std::move(model);
  result.weights = std::move(state);
  return result;
}

// Same pipeline with w = 1 throughout and no weight step; the trace holds
// the full-set multi-similarity loss.
inline TrainResult ms_baseline_train(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  ds.validate();
  const ClassIndex classes = split_by_class(ds);
  Rng theta_rng(derive_seed(cfg.seed, 2));
  EmbeddingModel model = initial_model(ds, cfg);
  const std::vector<double> ones(ds.size(), 1.0);

  TrainResult result{model, WeightState(classes, XiTable{std::vector<double>(ds.size(), 0.0),
                                                         std::vector<double>(ds.size(), 0.0)},
                                        0.0, 0.0),
                     {}, {}};
  double previous = ms_loss(forward_batch(model, ds.features), ds.labels, cfg.ms);
  for (std::size_t t = 1; t <= cfg.outer_iterations; ++t) {
    model = train_theta(std::move(model), ds, ones, cfg, cfg.theta_epochs, theta_rng);
    const double value = ms_loss(forward_batch(model, ds.features), ds.labels, cfg.ms);
    result.trace.push_back({t, 0.0, value, std::abs(value - previous), 1.0, 0.0});
    if (!std::isfinite(value))
      throw TrainingAborted("non-finite loss at outer iteration " + std::to_string(t), result.trace);
    previous = value;
  }
  result.weights.set_xi(xi_table_for(model, ds, cfg.ms));
  result.model = std::move(model);
  return result;
}

}  // namespace bspml
