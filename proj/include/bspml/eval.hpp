#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "bspml/data.hpp"
#include "bspml/error.hpp"
#include "bspml/random.hpp"
#include "bspml/weights.hpp"

namespace bspml {

// Fraction of queries whose K nearest neighbours (dot-product similarity,
// query excluded, ties to the smaller id) contain a same-label sample.
// Returns one value per entry of `ks`.
inline std::vector<double> recall_at_k(const Eigen::MatrixXd& embeddings, std::span<const int> labels,
                                       std::span<const int> ks) {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  detail::require(labels.size() == n, "labels and embeddings disagree in length");
  int kmax = 0;
  for (int k : ks) {
    detail::require(k >= 1, "recall K must be >= 1");
    detail::require(static_cast<std::size_t>(k) < n, "recall K=" + std::to_string(k) + " must be < N");
    kmax = std::max(kmax, k);
  }
  if (ks.empty()) return {};

  const Eigen::MatrixXd sim = embeddings * embeddings.transpose();
  // first_hit[i]: rank (0-based) of the first same-label neighbour, or n.
  std::vector<std::size_t> first_hit(n, n);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    auto closer = [&](std::size_t a, std::size_t b) {
      if (sim(i, a) != sim(i, b)) return sim(i, a) > sim(i, b);
      return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + kmax, order.end(), closer);
    for (int r = 0; r < kmax; ++r)
      if (labels[order[r]] == labels[i]) {
        first_hit[i] = static_cast<std::size_t>(r);
        break;
      }
  }
  std::vector<double> out;
  for (int k : ks) {
    std::size_t hits = 0;
    for (auto r : first_hit) hits += r < static_cast<std::size_t>(k);
    out.push_back(static_cast<double>(hits) / static_cast<double>(n));
  }
  return out;
}

// 2 I(A, B) / (H(A) + H(B)) with natural logarithms; 0 when both
// partitions are a single cluster.
inline double nmi_from_partitions(std::span<const int> a, std::span<const int> b) {
  detail::require(a.size() == b.size() && !a.empty(), "partitions must be non-empty and equally long");
  std::map<int, int> ia, ib;
  for (int v : a) ia.emplace(v, 0);
  for (int v : b) ib.emplace(v, 0);
  int ra = 0, rb = 0;
  for (auto& [v, i] : ia) i = ra++;
  for (auto& [v, i] : ib) i = rb++;

  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(ra, rb);
  for (std::size_t s = 0; s < a.size(); ++s) table(ia[a[s]], ib[b[s]]) += 1.0;
  const double n = static_cast<double>(a.size());
  const Eigen::VectorXd row = table.rowwise().sum();
  const Eigen::RowVectorXd col = table.colwise().sum();

  auto entropy = [n](const auto& counts) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < counts.size(); ++i)
      if (counts[i] > 0) h -= counts[i] / n * std::log(counts[i] / n);
    return h;
  };
  double mi = 0.0;
  for (int i = 0; i < ra; ++i)
    for (int j = 0; j < rb; ++j)
      if (table(i, j) > 0) mi += table(i, j) / n * std::log(n * table(i, j) / (row[i] * col[j]));
  const double h = entropy(row) + entropy(col);
  if (h <= 0.0) return 0.0;
  return std::clamp(2.0 * mi / h, 0.0, 1.0);
}

struct KMeansResult {
  std::vector<int> assignment;
  Eigen::MatrixXd centroids;
  double inertia = 0.0;
};

// Lloyd's algorithm from a k-means++ start; stops after 100 iterations or
// once no centroid moves by more than 1e-8.
inline KMeansResult kmeans_once(const Eigen::MatrixXd& x, int k, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x.rows());
  Rng rng(seed);
  Eigen::MatrixXd centroids(k, x.cols());
  centroids.row(0) = x.row(static_cast<Eigen::Index>(uniform_index(n, rng)));
  std::vector<double> d2(n);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < c; ++j) best = std::min(best, (x.row(static_cast<Eigen::Index>(i)) - centroids.row(j)).squaredNorm());
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng), run = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        run += d2[i];
        if (r < run) {
          pick = i;
          break;
        }
      }
    } else {
      pick = uniform_index(n, rng);
    }
    centroids.row(c) = x.row(static_cast<Eigen::Index>(pick));
  }

  KMeansResult res{std::vector<int>(n, 0), centroids, 0.0};
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (x.row(static_cast<Eigen::Index>(i)) - res.centroids.row(c)).squaredNorm();
        if (d < best) {
          best = d;
          res.assignment[i] = c;
        }
      }
    }
    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<double> count(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      next.row(res.assignment[i]) += x.row(static_cast<Eigen::Index>(i));
      count[res.assignment[i]] += 1.0;
    }
    double moved = 0.0;
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) next.row(c) /= count[c];
      else next.row(c) = res.centroids.row(c);  // empty cluster keeps its centroid
      moved = std::max(moved, (next.row(c) - res.centroids.row(c)).norm());
    }
    res.centroids = std::move(next);
    if (moved < 1e-8) break;
  }
  res.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      const double d = (x.row(static_cast<Eigen::Index>(i)) - res.centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        res.assignment[i] = c;
      }
    }
    res.inertia += best;
  }
  return res;
}

// Best-inertia result over `restarts` runs with derived seeds.
inline KMeansResult kmeans(const Eigen::MatrixXd& x, int k, std::uint64_t seed, int restarts = 5) {
  detail::require(k >= 1, "k-means needs k >= 1");
  detail::require(static_cast<Eigen::Index>(k) <= x.rows(), "k-means needs k <= N");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(restarts, 1); ++r) {
    auto res = kmeans_once(x, k, derive_seed(seed, static_cast<std::uint64_t>(r)));
    if (res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

inline double nmi(const Eigen::MatrixXd& embeddings, std::span<const int> labels, int k, std::uint64_t seed) {
  detail::require(labels.size() == static_cast<std::size_t>(embeddings.rows()), "labels and embeddings disagree");
  const auto clusters = kmeans(embeddings, k, seed).assignment;
  return nmi_from_partitions(labels, clusters);
}

inline int distinct_labels(std::span<const int> labels) {
  std::vector<int> v(labels.begin(), labels.end());
  std::sort(v.begin(), v.end());
  return static_cast<int>(std::unique(v.begin(), v.end()) - v.begin());
}

struct WeightStats {
  double maw = 0.0;
  double sdaw = 0.0;
  std::vector<double> class_means;
};

inline WeightStats weight_stats(std::span<const double> w, const ClassIndex& classes) {
  WeightStats st;
  const int C = classes.num_classes();
  detail::require(C >= 1, "weight stats need at least one class");
  for (int c = 0; c < C; ++c) {
    double sum = 0.0;
    for (auto id : classes.members[c]) sum += w[id];
    st.class_means.push_back(sum / static_cast<double>(classes.class_size(c)));
  }
  st.maw = std::accumulate(st.class_means.begin(), st.class_means.end(), 0.0) / C;
  double var = 0.0;
  for (double m : st.class_means) var += (m - st.maw) * (m - st.maw);
  st.sdaw = std::sqrt(var / C);
  return st;
}

inline WeightStats weight_stats(const WeightState& s) { return weight_stats(s.weights(), s.classes()); }

struct WeightSeparation {
  double clean_mean = 0.0;
  double noisy_mean = 0.0;
  double gap = 0.0;  // clean - noisy
};

inline WeightSeparation weight_separation(std::span<const double> w, const NoiseMask& mask) {
  detail::require(mask.flipped.size() == w.size(), "mask does not cover the weights");
  double clean = 0.0, noisy = 0.0;
  std::size_t n_clean = 0, n_noisy = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (mask.flipped[i]) {
      noisy += w[i];
      ++n_noisy;
    } else {
      clean += w[i];
      ++n_clean;
    }
  }
  detail::require(n_clean > 0 && n_noisy > 0, "weight separation needs clean and noisy samples");
  WeightSeparation out;
  out.clean_mean = clean / static_cast<double>(n_clean);
  out.noisy_mean = noisy / static_cast<double>(n_noisy);
  out.gap = out.clean_mean - out.noisy_mean;
  return out;
}

inline WeightSeparation weight_separation(const WeightState& s, const NoiseMask& mask) {
  return weight_separation(s.weights(), mask);
}

}  // namespace bspml
