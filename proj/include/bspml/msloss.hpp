#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "bspml/error.hpp"

namespace bspml {

struct MSHyperParams {
  double alpha = 2.0;    // positive-pair scale
  double beta = 50.0;    // negative-pair scale
  double rho = 1.0;      // similarity margin
  double epsilon = 0.1;  // mining margin

  void validate() const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be > 0");
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be > 0");
    if (!std::isfinite(rho)) throw ConfigError("rho must be finite");
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be >= 0");
  }
};

// log(1 + sum_i exp(x_i)), stable for |x_i| in the hundreds.
inline double log1p_sum_exp(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, v);
  double s = std::exp(-m);
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

// exp(x_j) / (1 + sum_i exp(x_i)) for every j: the derivative of
// log1p_sum_exp with respect to each exponent.
inline std::vector<double> log1p_sum_exp_grad(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, v);
  double s = std::exp(-m);
  std::vector<double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i] - m);
    s += e[i];
  }
  for (auto& v : e) v /= s;
  return e;
}

inline double xi_pos(std::span<const double> sims, const MSHyperParams& hp) {
  std::vector<double> x(sims.size());
  for (std::size_t i = 0; i < sims.size(); ++i) x[i] = -hp.alpha * (sims[i] - hp.rho);
  return log1p_sum_exp(x) / hp.alpha;
}

inline double xi_neg(std::span<const double> sims, const MSHyperParams& hp) {
  std::vector<double> x(sims.size());
  for (std::size_t i = 0; i < sims.size(); ++i) x[i] = hp.beta * (sims[i] - hp.rho);
  return log1p_sum_exp(x) / hp.beta;
}

// Per-anchor xi+ and xi- over the full sample set (rows of `embeddings`).
struct XiValues {
  std::vector<double> pos, neg;
};

inline XiValues xi_values(const Eigen::MatrixXd& embeddings, std::span<const int> labels, const MSHyperParams& hp) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  detail::require(labels.size() == n, "labels and embeddings disagree in length");
  const Eigen::MatrixXd sim = embeddings * embeddings.transpose();
  XiValues out{std::vector<double>(n), std::vector<double>(n)};
  std::vector<double> pos, neg;
  for (std::size_t a = 0; a < n; ++a) {
    pos.clear();
    neg.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      (labels[j] == labels[a] ? pos : neg).push_back(sim(a, j));
    }
    out.pos[a] = xi_pos(pos, hp);
    out.neg[a] = xi_neg(neg, hp);
  }
  return out;
}

// Full multi-similarity objective: sum_c (1/N^c) sum_a (xi+ + xi-).
inline double ms_loss(const Eigen::MatrixXd& embeddings, std::span<const int> labels, const MSHyperParams& hp) {
  const auto xi = xi_values(embeddings, labels, hp);
  int num_classes = 0;
  for (int y : labels) num_classes = std::max(num_classes, y + 1);
  std::vector<double> count(num_classes, 0.0), sum(num_classes, 0.0);
  for (std::size_t a = 0; a < labels.size(); ++a) {
    count[labels[a]] += 1.0;
    sum[labels[a]] += xi.pos[a] + xi.neg[a];
  }
  double total = 0.0;
  for (int c = 0; c < num_classes; ++c)
    if (count[c] > 0) total += sum[c] / count[c];
  return total;
}

// Informative pairs per anchor; entries are batch positions.
struct MiningResult {
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::vector<std::size_t>> negatives;
};

// Negative n is informative for anchor i when S_in > min_p S_ip - eps, and
// positive p when S_ip < max_n S_in + eps (both strict). An anchor without
// batch positives keeps all its negatives; one without negatives mines no
// positives.
inline MiningResult mine_pairs(const Eigen::MatrixXd& sim, std::span<const int> labels, double eps) {
  const auto b = static_cast<std::size_t>(sim.rows());
  detail::require(sim.cols() == sim.rows() && labels.size() == b, "similarity matrix must be square and match labels");
  MiningResult out;
  out.positives.resize(b);
  out.negatives.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    double min_pos = std::numeric_limits<double>::infinity();
    double max_neg = -std::numeric_limits<double>::infinity();
    bool has_pos = false, has_neg = false;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        has_pos = true;
        min_pos = std::min(min_pos, sim(i, j));
      } else {
        has_neg = true;
        max_neg = std::max(max_neg, sim(i, j));
      }
    }
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        if (has_neg && sim(i, j) < max_neg + eps) out.positives[i].push_back(j);
      } else {
        if (!has_pos || sim(i, j) > min_pos - eps) out.negatives[i].push_back(j);
      }
    }
  }
  return out;
}

struct BatchLoss {
  double value = 0.0;
  Eigen::MatrixXd d_sim;  // dLoss/dS_ij, anchor i in row i
};

namespace detail {

inline void check_batch(std::span<const std::size_t> batch_ids, std::span<const double> weights,
                        const MiningResult& mined, const Eigen::MatrixXd& sim, int classes_per_batch,
                        int per_class) {
  require(classes_per_batch > 0 && per_class > 0, "P and K must be positive");
  require(batch_ids.size() == static_cast<std::size_t>(classes_per_batch) * per_class,
          "batch must hold P*K samples");
  require(mined.positives.size() == batch_ids.size() && mined.negatives.size() == batch_ids.size(),
          "mining result does not match batch");
  require(sim.rows() == static_cast<Eigen::Index>(batch_ids.size()) && sim.cols() == sim.rows(),
          "similarity matrix does not match batch");
  for (auto id : batch_ids) {
    require(id < weights.size(), "batch id outside weight vector");
    require(weights[id] >= 0.0 && weights[id] <= 1.0, "sample weight outside [0, 1]");
  }
}

}  // namespace detail

// Weighted informative batch loss
//   (1/PK) sum_i w_i { avg_{p in P_i} w_p * (1/alpha) log[1 + sum_p e^{-alpha(S_ip - rho)}]
//                    + avg_{n in N_i} w_n * (1/beta)  log[1 + sum_n e^{ beta(S_in - rho)}] }
// with its derivative w.r.t. the batch similarity matrix (weights and mined
// sets held fixed). `weights` is indexed by global sample id.
inline BatchLoss weighted_batch_loss_grad(std::span<const std::size_t> batch_ids, std::span<const double> weights,
                                          const MiningResult& mined, const Eigen::MatrixXd& sim,
                                          const MSHyperParams& hp, int classes_per_batch, int per_class) {
  detail::check_batch(batch_ids, weights, mined, sim, classes_per_batch, per_class);
  const std::size_t b = batch_ids.size();
  const double scale = 1.0 / static_cast<double>(b);
  BatchLoss out{0.0, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b))};
  std::vector<double> x;
  for (std::size_t i = 0; i < b; ++i) {
    const double wi = weights[batch_ids[i]];
    if (wi == 0.0) continue;

    if (const auto& ps = mined.positives[i]; !ps.empty()) {
      double wsum = 0.0;
      x.resize(ps.size());
      for (std::size_t j = 0; j < ps.size(); ++j) {
        wsum += weights[batch_ids[ps[j]]];
        x[j] = -hp.alpha * (sim(i, ps[j]) - hp.rho);
      }
      const double coef = scale * wi * wsum / (static_cast<double>(ps.size()) * hp.alpha);
      if (coef != 0.0) {
        out.value += coef * log1p_sum_exp(x);
        const auto soft = log1p_sum_exp_grad(x);
        for (std::size_t j = 0; j < ps.size(); ++j) out.d_sim(i, ps[j]) += coef * soft[j] * -hp.alpha;
      }
    }
    if (const auto& ns = mined.negatives[i]; !ns.empty()) {
      double wsum = 0.0;
      x.resize(ns.size());
      for (std::size_t j = 0; j < ns.size(); ++j) {
        wsum += weights[batch_ids[ns[j]]];
        x[j] = hp.beta * (sim(i, ns[j]) - hp.rho);
      }
      const double coef = scale * wi * wsum / (static_cast<double>(ns.size()) * hp.beta);
      if (coef != 0.0) {
        out.value += coef * log1p_sum_exp(x);
        const auto soft = log1p_sum_exp_grad(x);
        for (std::size_t j = 0; j < ns.size(); ++j) out.d_sim(i, ns[j]) += coef * soft[j] * hp.beta;
      }
    }
  }
  return out;
}

inline double weighted_batch_loss(std::span<const std::size_t> batch_ids, std::span<const double> weights,
                                  const MiningResult& mined, const Eigen::MatrixXd& sim, const MSHyperParams& hp,
                                  int classes_per_batch, int per_class) {
  return weighted_batch_loss_grad(batch_ids, weights, mined, sim, hp, classes_per_batch, per_class).value;
}

// dLoss/dE for S = E E^T, given dLoss/dS.
inline Eigen::MatrixXd embedding_grad(const Eigen::MatrixXd& embeddings, const Eigen::MatrixXd& d_sim) {
  detail::require(d_sim.rows() == embeddings.rows() && d_sim.cols() == embeddings.rows(),
                  "similarity gradient does not match embeddings");
  return (d_sim + d_sim.transpose()) * embeddings;
}

}  // namespace bspml
