#pragma once

// The sample-weight subproblem: for fixed embeddings, minimize over
// w in [0,1]^N
//
//   L(w) = sum_c sum_a (w_a/N^c) [ (zeta(c) - w_a)/(N^c - 1) xi+_a
//                                 + 1/(C-1) sum_{k != c} (zeta(k)/N^k) xi-_a ]
//          - lambda sum_c zeta(c)/N^c
//          + mu/(C-1) sum_{c<k} (zeta(c)/N^c - zeta(k)/N^k)^2
//
// with zeta(c) the weight sum of class c. L is a nonconvex quadratic; it is
// minimized by projected coordinate steps along a doubly subsampled
// (unbiased) estimate of one partial derivative.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bspml/data.hpp"
#include "bspml/error.hpp"
#include "bspml/msloss.hpp"
#include "bspml/random.hpp"

namespace bspml {

// xi+ / xi- of every sample, computed over the full training set at fixed
// model parameters.
struct XiTable {
  std::vector<double> pos;
  std::vector<double> neg;

  std::size_t size() const { return pos.size(); }
};

inline XiTable build_xi_table(const Eigen::MatrixXd& embeddings, std::span<const int> labels,
                              const MSHyperParams& hp) {
  auto xi = xi_values(embeddings, labels, hp);
  for (std::size_t i = 0; i < xi.pos.size(); ++i)
    if (!std::isfinite(xi.pos[i]) || !std::isfinite(xi.neg[i]))
      throw NumericError("non-finite xi value for sample " + std::to_string(i));
  return {std::move(xi.pos), std::move(xi.neg)};
}

class WeightState {
 public:
  WeightState(ClassIndex classes, XiTable xi, double lambda, double mu)
      : WeightState(classes, std::move(xi), lambda, mu, std::vector<double>(classes.num_samples(), 1.0)) {}

  WeightState(ClassIndex classes, XiTable xi, double lambda, double mu, std::vector<double> w)
      : classes_(std::move(classes)), xi_(std::move(xi)), w_(std::move(w)), lambda_(lambda), mu_(mu) {
    const std::size_t n = classes_.num_samples();
    detail::require(w_.size() == n, "weight vector length must equal sample count");
    detail::require(xi_.pos.size() == n && xi_.neg.size() == n, "xi table length must equal sample count");
    detail::require(lambda_ >= 0.0 && std::isfinite(lambda_), "lambda must be finite and >= 0");
    detail::require(mu_ >= 0.0 && std::isfinite(mu_), "mu must be finite and >= 0");
    for (std::size_t i = 0; i < n; ++i) {
      detail::require(w_[i] >= 0.0 && w_[i] <= 1.0, "weight outside [0, 1]");
      detail::require(std::isfinite(xi_.pos[i]) && std::isfinite(xi_.neg[i]) && xi_.pos[i] >= 0.0 &&
                          xi_.neg[i] >= 0.0,
                      "xi values must be finite and >= 0");
    }
    refresh_sums();
  }

  std::size_t size() const { return w_.size(); }
  int num_classes() const { return classes_.num_classes(); }
  const ClassIndex& classes() const { return classes_; }
  const XiTable& xi() const { return xi_; }
  const std::vector<double>& weights() const { return w_; }
  double weight(std::size_t id) const { return w_[id]; }
  double lambda() const { return lambda_; }
  double mu() const { return mu_; }

  // zeta(c), maintained incrementally.
  double class_sum(int c) const { return sums_[c]; }
  double class_mean(int c) const { return sums_[c] / static_cast<double>(classes_.class_size(c)); }

  void set_weight(std::size_t id, double value) {
    detail::require(value >= 0.0 && value <= 1.0, "weight outside [0, 1]");
    sums_[classes_.class_of[id]] += value - w_[id];
    w_[id] = value;
  }

  void set_weights(std::vector<double> w) {
    *this = WeightState(std::move(classes_), std::move(xi_), lambda_, mu_, std::move(w));
  }

  void set_lambda(double lambda) {
    detail::require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be finite and >= 0");
    lambda_ = lambda;
  }

  void set_mu(double mu) {
    detail::require(mu >= 0.0 && std::isfinite(mu), "mu must be finite and >= 0");
    mu_ = mu;
  }

  void set_xi(XiTable xi) {
    *this = WeightState(std::move(classes_), std::move(xi), lambda_, mu_, std::move(w_));
  }

  // Recomputes every zeta(c) from scratch.
  void refresh_sums() {
    sums_.assign(classes_.num_classes(), 0.0);
    for (int c = 0; c < classes_.num_classes(); ++c)
      for (auto id : classes_.members[c]) sums_[c] += w_[id];
  }

 private:
  ClassIndex classes_;
  XiTable xi_;
  std::vector<double> w_;
  std::vector<double> sums_;
  double lambda_;
  double mu_;
};

namespace detail {

inline void require_objective_shape(const WeightState& s) {
  require(s.num_classes() >= 2, "weight objective needs at least 2 classes");
  for (int c = 0; c < s.num_classes(); ++c)
    require(s.classes().class_size(c) >= 2, "class " + std::to_string(c) + " has fewer than 2 samples");
}

}  // namespace detail

// L(theta, w; lambda) term by term.
inline double objective(const WeightState& s) {
  detail::require_objective_shape(s);
  const int C = s.num_classes();
  const auto& cls = s.classes();
  const auto& w = s.weights();
  std::vector<double> zeta(C, 0.0), mean(C);
  for (int c = 0; c < C; ++c) {
    for (auto id : cls.members[c]) zeta[c] += w[id];
    mean[c] = zeta[c] / static_cast<double>(cls.class_size(c));
  }

  double loss = 0.0;
  for (int c = 0; c < C; ++c) {
    const double nc = static_cast<double>(cls.class_size(c));
    double others = 0.0;
    for (int k = 0; k < C; ++k)
      if (k != c) others += mean[k];
    for (auto id : cls.members[c]) {
      const double pos = (zeta[c] - w[id]) / (nc - 1.0) * s.xi().pos[id];
      const double neg = others / (C - 1.0) * s.xi().neg[id];
      loss += w[id] / nc * (pos + neg);
    }
  }
  double age = 0.0;
  for (int c = 0; c < C; ++c) age += mean[c];
  double balance = 0.0;
  for (int c = 0; c < C; ++c)
    for (int k = c + 1; k < C; ++k) balance += (mean[c] - mean[k]) * (mean[c] - mean[k]);
  return loss - s.lambda() * age + s.mu() / (C - 1.0) * balance;
}

// Balance part of the coordinate derivative (before the 1/N^c factor).
inline double balance_gradient_term(const WeightState& s, int c) {
  const int C = s.num_classes();
  double others = 0.0;
  for (int k = 0; k < C; ++k)
    if (k != c) others += s.class_mean(k);
  return 2.0 * s.mu() * (s.class_mean(c) - others / (C - 1.0));
}

// Exact dL/dw for sample `a` (index within class c):
//   (1/N^c) [ 1/(N^c-1) sum_{p != a} w_p (xi+_p + xi+_a)
//           + 1/(C-1) sum_{k != c} (1/N^k) sum_n w_n (xi-_n + xi-_a)
//           + 2 mu (zeta(c)/N^c - 1/(C-1) sum_{k != c} zeta(k)/N^k) - lambda ]
inline double coordinate_derivative(const WeightState& s, int c, std::size_t a) {
  detail::require_objective_shape(s);
  const auto& cls = s.classes();
  detail::require(c >= 0 && c < s.num_classes() && a < cls.class_size(c), "coordinate out of range");
  const int C = s.num_classes();
  const auto& xi = s.xi();
  const auto& w = s.weights();
  const std::size_t anchor = cls.members[c][a];
  const double nc = static_cast<double>(cls.class_size(c));

  double gp = 0.0;
  for (auto id : cls.members[c])
    if (id != anchor) gp += w[id] * (xi.pos[id] + xi.pos[anchor]);
  gp /= nc - 1.0;

  double gn = 0.0;
  for (int k = 0; k < C; ++k) {
    if (k == c) continue;
    double inner = 0.0;
    for (auto id : cls.members[k]) inner += w[id] * (xi.neg[id] + xi.neg[anchor]);
    gn += inner / static_cast<double>(cls.class_size(k));
  }
  gn /= C - 1.0;

  return (gp + gn + balance_gradient_term(s, c) - s.lambda()) / nc;
}

inline double coordinate_derivative(const WeightState& s, std::size_t id) {
  return coordinate_derivative(s, s.classes().class_of[id], s.classes().position[id]);
}

// Gradient over all coordinates, indexed by sample id.
inline Eigen::VectorXd full_gradient(const WeightState& s) {
  Eigen::VectorXd g(static_cast<Eigen::Index>(s.size()));
  for (std::size_t id = 0; id < s.size(); ++id) g[static_cast<Eigen::Index>(id)] = coordinate_derivative(s, id);
  return g;
}

// --- doubly stochastic gradient -----------------------------------------

// One sampling outcome for the estimate of coordinate w_a^c.
struct GradientDraw {
  std::vector<std::size_t> positives;               // ids of class c, anchor excluded
  std::vector<int> classes;                         // sampled classes != c
  std::vector<std::vector<std::size_t>> negatives;  // ids per sampled class
};

// Draws `per_class` same-class weights (anchor excluded), then
// `classes_per_draw` other classes and `per_class` weights in each, all
// uniformly without replacement.
template <class URBG>
GradientDraw draw_gradient_sample(const WeightState& s, int c, std::size_t a, int classes_per_draw, int per_class,
                                  URBG& rng) {
  detail::require_objective_shape(s);
  const auto& cls = s.classes();
  detail::require(c >= 0 && c < s.num_classes() && a < cls.class_size(c), "coordinate out of range");
  const int C = s.num_classes();
  detail::require(classes_per_draw >= 1 && classes_per_draw <= C - 1,
                  "sampled class count P=" + std::to_string(classes_per_draw) + " must lie in [1, C-1]");
  detail::require(per_class >= 1 && static_cast<std::size_t>(per_class) <= cls.class_size(c) - 1,
                  "sampled weight count K=" + std::to_string(per_class) + " exceeds N^c - 1");

  const std::size_t anchor = cls.members[c][a];
  std::vector<std::size_t> same;
  same.reserve(cls.class_size(c) - 1);
  for (auto id : cls.members[c])
    if (id != anchor) same.push_back(id);

  std::vector<int> other_classes;
  for (int k = 0; k < C; ++k)
    if (k != c) other_classes.push_back(k);

  GradientDraw d;
  d.positives = choose(same, static_cast<std::size_t>(per_class), rng);
  d.classes = choose(other_classes, static_cast<std::size_t>(classes_per_draw), rng);
  for (int k : d.classes) {
    detail::require(static_cast<std::size_t>(per_class) <= cls.class_size(k),
                    "sampled weight count K exceeds the size of class " + std::to_string(k));
    d.negatives.push_back(choose(cls.members[k], static_cast<std::size_t>(per_class), rng));
  }
  return d;
}

// The draw that uses every weight: the estimate becomes the exact derivative.
inline GradientDraw exhaustive_draw(const WeightState& s, int c, std::size_t a) {
  const auto& cls = s.classes();
  detail::require(c >= 0 && c < s.num_classes() && a < cls.class_size(c), "coordinate out of range");
  const std::size_t anchor = cls.members[c][a];
  GradientDraw d;
  for (auto id : cls.members[c])
    if (id != anchor) d.positives.push_back(id);
  for (int k = 0; k < s.num_classes(); ++k) {
    if (k == c) continue;
    d.classes.push_back(k);
    d.negatives.push_back(cls.members[k]);
  }
  return d;
}

// G(w_a^c) = (1/N^c)(G_p + G_n + G_b - lambda) for one sampling outcome.
inline double stochastic_gradient(const WeightState& s, int c, std::size_t a, const GradientDraw& d) {
  detail::require_objective_shape(s);
  const auto& cls = s.classes();
  detail::require(c >= 0 && c < s.num_classes() && a < cls.class_size(c), "coordinate out of range");
  detail::require(!d.positives.empty() && !d.classes.empty() && d.negatives.size() == d.classes.size(),
                  "gradient draw is incomplete");
  const auto& xi = s.xi();
  const auto& w = s.weights();
  const std::size_t anchor = cls.members[c][a];

  double gp = 0.0;
  for (auto id : d.positives) gp += w[id] * (xi.pos[id] + xi.pos[anchor]);
  gp /= static_cast<double>(d.positives.size());

  double gn = 0.0;
  for (const auto& ids : d.negatives) {
    detail::require(!ids.empty(), "gradient draw has an empty class sample");
    double inner = 0.0;
    for (auto id : ids) inner += w[id] * (xi.neg[id] + xi.neg[anchor]);
    gn += inner / static_cast<double>(ids.size());
  }
  gn /= static_cast<double>(d.negatives.size());

  return (gp + gn + balance_gradient_term(s, c) - s.lambda()) / static_cast<double>(cls.class_size(c));
}

template <class URBG>
double stochastic_gradient(const WeightState& s, int c, std::size_t a, int classes_per_draw, int per_class,
                           URBG& rng) {
  return stochastic_gradient(s, c, a, draw_gradient_sample(s, c, a, classes_per_draw, per_class, rng));
}

// --- projection ---------------------------------------------------------

inline std::vector<double> project_box(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x = std::clamp(x, 0.0, 1.0);
  return out;
}

// (1/gamma)(w - P_[0,1](w - gamma g))
inline std::vector<double> projected_gradient(std::span<const double> w, std::span<const double> g, double gamma) {
  detail::require(gamma > 0.0, "projected gradient needs gamma > 0");
  detail::require(w.size() == g.size(), "weight and gradient lengths differ");
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = (w[i] - std::clamp(w[i] - gamma * g[i], 0.0, 1.0)) / gamma;
  return out;
}

inline double projected_gradient_norm(const WeightState& s, double gamma) {
  const Eigen::VectorXd g = full_gradient(s);
  const auto pg = projected_gradient(s.weights(), std::span<const double>(g.data(), static_cast<std::size_t>(g.size())),
                                     gamma);
  double sq = 0.0;
  for (double v : pg) sq += v * v;
  return std::sqrt(sq);
}

// --- solver -------------------------------------------------------------

struct StepSchedule {
  enum class Mode { constant, harmonic };
  Mode mode = Mode::harmonic;
  std::optional<double> gamma0;  // unset: 1 / curvature_estimate(state)
  double horizon = 1000.0;       // T0 of gamma0 / (1 + t/T0)

  // Step size at 1-based iteration t.
  double at(std::size_t t, double g0) const {
    if (mode == Mode::constant) return g0;
    return g0 / (1.0 + static_cast<double>(t) / horizon);
  }

  void validate() const {
    if (gamma0 && !(*gamma0 > 0.0)) throw ConfigError("step size gamma0 must be > 0");
    if (!(horizon > 0.0)) throw ConfigError("step decay horizon must be > 0");
  }
};

// Bound on how fast one partial derivative changes when every weight moves
// by at most 1: max over classes of (2 (max xi+ + max xi-) + 2 mu) / N^c.
inline double curvature_estimate(const WeightState& s) {
  double best = 0.0;
  for (int c = 0; c < s.num_classes(); ++c) {
    double max_pos = 0.0, max_neg = 0.0;
    for (auto id : s.classes().members[c]) {
      max_pos = std::max(max_pos, s.xi().pos[id]);
      max_neg = std::max(max_neg, s.xi().neg[id]);
    }
    const double lc = (2.0 * (max_pos + max_neg) + 2.0 * s.mu()) / static_cast<double>(s.classes().class_size(c));
    best = std::max(best, lc);
  }
  return best;
}

enum class SamplingMode {
  fixed,       // P classes, K weights per class
  exhaustive,  // every weight: exact coordinate derivative
  growing,     // P and K grow by one every `growth_period` iterations, capped per class
};

struct SolverOptions {
  std::size_t iterations = 0;
  StepSchedule schedule;
  SamplingMode sampling = SamplingMode::fixed;
  int classes_per_draw = 1;
  int per_class = 1;
  std::size_t growth_period = 100;
  std::size_t trace_stride = 0;  // 0: no intermediate trace rows
  std::size_t refresh_every = 10000;
  std::size_t schedule_offset = 0;  // step t uses the schedule at offset + t
};

struct WeightTraceRow {
  std::size_t iter = 0;
  std::size_t coordinate = 0;
  double gradient = 0.0;
  double gamma = 0.0;
  double objective = 0.0;
  double proj_grad_norm = 0.0;
};

struct SolveResult {
  WeightState state;
  std::vector<WeightTraceRow> trace;
  double gamma0 = 0.0;
  double final_gamma = 0.0;
  double final_proj_grad_norm = 0.0;  // full projected gradient at the last step size
};

namespace detail {

// Per-class draw sizes for growing mode at iteration t.
template <class URBG>
GradientDraw growing_draw(const WeightState& s, int c, std::size_t a, const SolverOptions& opt, std::size_t t,
                          URBG& rng) {
  const auto& cls = s.classes();
  const std::size_t grow = opt.growth_period ? t / opt.growth_period : 0;
  const std::size_t k_t = static_cast<std::size_t>(opt.per_class) + grow;
  const std::size_t p_t = std::min<std::size_t>(static_cast<std::size_t>(opt.classes_per_draw) + grow,
                                                static_cast<std::size_t>(s.num_classes() - 1));
  const std::size_t anchor = cls.members[c][a];
  std::vector<std::size_t> same;
  for (auto id : cls.members[c])
    if (id != anchor) same.push_back(id);
  std::vector<int> others;
  for (int k = 0; k < s.num_classes(); ++k)
    if (k != c) others.push_back(k);

  GradientDraw d;
  d.positives = choose(same, std::min(k_t, same.size()), rng);
  d.classes = choose(others, p_t, rng);
  for (int k : d.classes) d.negatives.push_back(choose(cls.members[k], std::min(k_t, cls.class_size(k)), rng));
  return d;
}

}  // namespace detail

// Projected coordinate gradient: T times pick a coordinate uniformly, estimate
// its partial derivative, and take a clamped step.
template <class URBG>
SolveResult solve_weights(WeightState state, const SolverOptions& opt, URBG& rng) {
  detail::require_objective_shape(state);
  opt.schedule.validate();
  if (opt.sampling != SamplingMode::exhaustive)
    detail::require(opt.classes_per_draw >= 1 && opt.per_class >= 1, "P and K must be positive");

  double g0 = 1.0;
  if (opt.schedule.gamma0) {
    g0 = *opt.schedule.gamma0;
  } else if (const double lhat = curvature_estimate(state); lhat > 0.0) {
    g0 = 1.0 / lhat;
  }

  SolveResult result{std::move(state), {}, g0, g0, 0.0};
  WeightState& s = result.state;
  const auto& cls = s.classes();
  const std::size_t n = s.size();

  for (std::size_t t = 1; t <= opt.iterations; ++t) {
    const std::size_t id = uniform_index(n, rng);
    const int c = cls.class_of[id];
    const std::size_t a = cls.position[id];

    GradientDraw draw;
    switch (opt.sampling) {
      case SamplingMode::fixed:
        draw = draw_gradient_sample(s, c, a, opt.classes_per_draw, opt.per_class, rng);
        break;
      case SamplingMode::exhaustive:
        draw = exhaustive_draw(s, c, a);
        break;
      case SamplingMode::growing:
        draw = detail::growing_draw(s, c, a, opt, t, rng);
        break;
    }
    const double g = stochastic_gradient(s, c, a, draw);
    if (!std::isfinite(g)) throw NumericError("non-finite weight gradient at iteration " + std::to_string(t));

    const double gamma = opt.schedule.at(opt.schedule_offset + t, g0);
    s.set_weight(id, std::clamp(s.weight(id) - gamma * g, 0.0, 1.0));
    result.final_gamma = gamma;

    if (opt.refresh_every && t % opt.refresh_every == 0) s.refresh_sums();
    if (opt.trace_stride && (t % opt.trace_stride == 0 || t == opt.iterations))
      result.trace.push_back({t, id, g, gamma, objective(s), projected_gradient_norm(s, gamma)});
  }
  result.final_proj_grad_norm = projected_gradient_norm(s, result.final_gamma);
  return result;
}

// --- exhaustive grid oracle ---------------------------------------------

struct GridMinimum {
  std::vector<double> w;
  double value = 0.0;
  std::size_t grid_points = 0;
};

inline constexpr double kMaxGridPoints = 1e8;

// Exhaustive search over {0, r, 2r, ..., 1}^N. The quadratic form is
// recovered from objective() evaluations (the objective is exactly
// quadratic with L(0) = 0), and the grid is walked depth first with running
// partial sums. Ties within 1e-12 keep the lexicographically first point.
inline GridMinimum brute_force_minimize(const WeightState& state, double resolution,
                                        double max_points = kMaxGridPoints) {
  detail::require_objective_shape(state);
  detail::require(resolution > 0.0 && resolution <= 1.0, "grid resolution must lie in (0, 1]");
  const auto levels = static_cast<std::size_t>(std::llround(1.0 / resolution));
  detail::require(std::abs(static_cast<double>(levels) * resolution - 1.0) < 1e-9,
                  "grid resolution must divide 1");
  const std::size_t n = state.size();
  detail::require(n <= 8, "grid oracle supports at most 8 weights");
  const double points = std::pow(static_cast<double>(levels + 1), static_cast<double>(n));
  if (points > max_points)
    throw ContractError("grid oracle refused: " + std::to_string(static_cast<long long>(points)) +
                        " grid points exceed the limit of " + std::to_string(static_cast<long long>(max_points)));

  WeightState probe = state;
  auto eval = [&](const std::vector<double>& w) {
    probe.set_weights(w);
    return objective(probe);
  };
  // L(w) = b.w + sum_i Q_ii w_i^2 + sum_{i<j} 2 Q_ij w_i w_j
  std::vector<double> b(n), diag(n);
  std::vector<std::vector<double>> cross(n, std::vector<double>(n, 0.0));  // 2 Q_ij
  std::vector<double> unit(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> e(n, 0.0), half(n, 0.0);
    e[i] = 1.0;
    half[i] = 0.5;
    unit[i] = eval(e);
    diag[i] = 2.0 * (unit[i] - 2.0 * eval(half));
    b[i] = unit[i] - diag[i];
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      std::vector<double> e(n, 0.0);
      e[i] = e[j] = 1.0;
      cross[i][j] = cross[j][i] = eval(e) - unit[i] - unit[j];
    }

  std::vector<double> grid(levels + 1);
  for (std::size_t j = 0; j <= levels; ++j) grid[j] = static_cast<double>(j) / static_cast<double>(levels);

  GridMinimum best{std::vector<double>(n, 0.0), std::numeric_limits<double>::infinity(),
                   static_cast<std::size_t>(points)};
  std::vector<double> w(n, 0.0);
  // acc[d][j]: sum_{i<d} 2 Q_ij w_i for j >= d.
  std::vector<std::vector<double>> acc(n + 1, std::vector<double>(n, 0.0));

  auto recurse = [&](auto&& self, std::size_t depth, double partial) -> void {
    if (depth == n) {
      if (!std::isfinite(best.value) || partial < best.value - 1e-12 * (1.0 + std::abs(best.value))) {
        best.value = partial;
        best.w = w;
      }
      return;
    }
    for (double v : grid) {
      w[depth] = v;
      const double value = partial + v * (b[depth] + diag[depth] * v + acc[depth][depth]);
      if (depth + 1 < n)
        for (std::size_t j = depth + 1; j < n; ++j) acc[depth + 1][j] = acc[depth][j] + cross[depth][j] * v;
      self(self, depth + 1, value);
    }
  };
  recurse(recurse, 0, 0.0);
  best.value = eval(best.w);
  return best;
}

// Closed-form minimizer of the classic self-paced subproblem:
// w_i = 1 if loss_i <= lambda, else 0.
inline std::vector<double> classic_spl_weights(std::span<const double> losses, double lambda) {
  std::vector<double> w(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) w[i] = losses[i] <= lambda ? 1.0 : 0.0;
  return w;
}

}  // namespace bspml
