#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "bspml/csv.hpp"
#include "bspml/error.hpp"
#include "bspml/random.hpp"

namespace bspml {

// Labeled feature vectors. Sample ids are the row indices 0..N-1.
struct Dataset {
  Eigen::MatrixXd features;  // N x M, one row per sample
  std::vector<int> labels;   // dense, in [0, num_classes)
  int num_classes = 0;
  // Original (file) label for each dense label; identity for generated data.
  std::vector<std::int64_t> label_values;

  std::size_t size() const { return labels.size(); }
  int dim() const { return static_cast<int>(features.cols()); }

  // Throws ContractError when an invariant does not hold.
  void validate() const {
    detail::require(features.rows() == static_cast<Eigen::Index>(labels.size()),
                    "feature rows and labels disagree");
    detail::require(num_classes >= 1, "dataset has no classes");
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels) {
      detail::require(y >= 0 && y < num_classes, "label out of range");
      ++counts[y];
    }
    for (int c = 0; c < num_classes; ++c)
      detail::require(counts[c] >= 2, "class " + std::to_string(c) + " has fewer than 2 samples");
  }
};

// Per-class member lists; within a class, ids are ascending.
struct ClassIndex {
  std::vector<std::vector<std::size_t>> members;
  std::vector<int> class_of;          // id -> class
  std::vector<std::size_t> position;  // id -> index within its class

  int num_classes() const { return static_cast<int>(members.size()); }
  std::size_t num_samples() const { return class_of.size(); }
  std::size_t class_size(int c) const { return members[c].size(); }
};

struct NoiseMask {
  std::vector<bool> flipped;         // per id
  std::vector<int> original_label;   // per id, -1 when not flipped

  std::size_t flip_count() const { return static_cast<std::size_t>(std::count(flipped.begin(), flipped.end(), true)); }
};

struct SyntheticSpec {
  int num_classes = 4;
  int per_class = 50;
  int dim = 2;
  double separation = 4.0;
  double stddev = 1.0;

  void validate() const {
    if (num_classes < 2) throw ConfigError("synthetic spec needs at least 2 classes");
    if (per_class < 2) throw ConfigError("synthetic spec needs at least 2 samples per class");
    if (dim < 1) throw ConfigError("synthetic spec needs dimension >= 1");
    if (!(separation > 0.0)) throw ConfigError("synthetic spec needs separation > 0");
    if (!(stddev > 0.0)) throw ConfigError("synthetic spec needs stddev > 0");
  }
};

// Cluster centers depend only on the spec, so datasets drawn with different
// seeds share their geometry (train/test splits). For dim >= 2 the centers sit
// on a circle in the first two coordinates with neighbouring centers exactly
// `separation` apart; for dim == 1 they are spaced along the line.
inline Eigen::MatrixXd synthetic_centers(const SyntheticSpec& spec) {
  spec.validate();
  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(spec.num_classes, spec.dim);
  if (spec.dim == 1) {
    for (int c = 0; c < spec.num_classes; ++c) centers(c, 0) = c * spec.separation;
    return centers;
  }
  const double step = 2.0 * std::numbers::pi / spec.num_classes;
  const double radius = spec.separation / (2.0 * std::sin(step / 2.0));
  for (int c = 0; c < spec.num_classes; ++c) {
    centers(c, 0) = radius * std::cos(step * c);
    centers(c, 1) = radius * std::sin(step * c);
  }
  return centers;
}

inline Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Eigen::MatrixXd centers = synthetic_centers(spec);
  const std::size_t n = static_cast<std::size_t>(spec.num_classes) * spec.per_class;

  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.features.resize(static_cast<Eigen::Index>(n), spec.dim);
  ds.labels.resize(n);
  ds.label_values.resize(spec.num_classes);
  for (int c = 0; c < spec.num_classes; ++c) ds.label_values[c] = c;

  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, spec.stddev);
  std::size_t id = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int i = 0; i < spec.per_class; ++i, ++id) {
      ds.labels[id] = c;
      for (int d = 0; d < spec.dim; ++d)
        ds.features(static_cast<Eigen::Index>(id), d) = centers(c, d) + noise(rng);
    }
  }
  return ds;
}

inline ClassIndex split_by_class(const Dataset& ds) {
  ClassIndex idx;
  idx.members.resize(ds.num_classes);
  idx.class_of.resize(ds.size());
  idx.position.resize(ds.size());
  for (std::size_t id = 0; id < ds.size(); ++id) {
    const int c = ds.labels[id];
    idx.class_of[id] = c;
    idx.position[id] = idx.members[c].size();
    idx.members[c].push_back(id);
  }
  return idx;
}

// Flip count for one class. The small slack keeps products such as
// 0.29 * 100 from flooring to 28.
inline std::size_t noisy_count(double ratio, std::size_t class_size) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(class_size) + 1e-9));
}

// Relabels floor(ratio * N^c) uniformly chosen samples of every class to a
// uniformly chosen different class. Features are untouched.
inline std::pair<Dataset, NoiseMask> inject_label_noise(const Dataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0) || !(ratio < 1.0))
    throw ConfigError("noise ratio must lie in [0, 1), got " + csv::format_double(ratio));
  ds.validate();

  Dataset out = ds;
  NoiseMask mask;
  mask.flipped.assign(ds.size(), false);
  mask.original_label.assign(ds.size(), -1);
  if (ds.num_classes < 2) return {out, mask};

  const ClassIndex idx = split_by_class(ds);
  Rng rng(seed);
  for (int c = 0; c < ds.num_classes; ++c) {
    const auto& members = idx.members[c];
    const std::size_t flips = noisy_count(ratio, members.size());
    for (std::size_t id : choose(members, flips, rng)) {
      // Uniform over the C-1 other classes.
      int target = static_cast<int>(uniform_index(static_cast<std::size_t>(ds.num_classes - 1), rng));
      if (target >= c) ++target;
      mask.flipped[id] = true;
      mask.original_label[id] = c;
      out.labels[id] = target;
    }
  }
  return {out, mask};
}

// Undo of inject_label_noise.
inline Dataset restore_labels(const Dataset& noisy, const NoiseMask& mask) {
  detail::require(mask.flipped.size() == noisy.size(), "mask does not cover the dataset");
  Dataset out = noisy;
  for (std::size_t id = 0; id < noisy.size(); ++id)
    if (mask.flipped[id]) out.labels[id] = mask.original_label[id];
  return out;
}

// --- CSV I/O -------------------------------------------------------------

inline void write_dataset(const Dataset& ds, std::ostream& os) {
  os << "id,label";
  for (int d = 0; d < ds.dim(); ++d) os << ",f" << d;
  os << '\n';
  for (std::size_t id = 0; id < ds.size(); ++id) {
    const int y = ds.labels[id];
    const std::int64_t value = y < static_cast<int>(ds.label_values.size()) ? ds.label_values[y] : y;
    os << id << ',' << value;
    for (int d = 0; d < ds.dim(); ++d)
      os << ',' << csv::format_double(ds.features(static_cast<Eigen::Index>(id), d));
    os << '\n';
  }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_dataset(ds, os);
  if (!os) throw std::runtime_error("write failed: " + path);
}

// Reads `id,label,f0,...`. Ids are renumbered 0..N-1 in file order and labels
// are densified in ascending order of their original values.
inline Dataset read_dataset(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw IngestionError("empty dataset file");
  ++line_no;
  const auto header = csv::split(csv::trim(line));
  if (header.size() < 3 || csv::trim(header[0]) != "id" || csv::trim(header[1]) != "label")
    throw IngestionError("header must be id,label,f0,...", line_no);
  const std::size_t dim = header.size() - 2;

  std::vector<std::int64_t> raw_labels;
  std::vector<double> values;
  while (std::getline(is, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto fields = csv::split(csv::trim(line));
    if (fields.size() != dim + 2)
      throw IngestionError("expected " + std::to_string(dim + 2) + " fields, found " +
                               std::to_string(fields.size()) + " (inconsistent dimension)",
                           line_no);
    if (!csv::parse_int(fields[0])) throw IngestionError("malformed id", line_no);
    auto label = csv::parse_int(fields[1]);
    if (!label) throw IngestionError("malformed label", line_no);
    raw_labels.push_back(*label);
    for (std::size_t d = 0; d < dim; ++d) {
      auto v = csv::parse_double(fields[d + 2]);
      if (!v) throw IngestionError("malformed feature f" + std::to_string(d), line_no);
      if (!std::isfinite(*v)) throw IngestionError("non-finite feature f" + std::to_string(d), line_no);
      values.push_back(*v);
    }
  }
  if (raw_labels.empty()) throw IngestionError("dataset has no rows");

  Dataset ds;
  std::map<std::int64_t, int> dense;
  for (auto v : raw_labels) dense.emplace(v, 0);
  for (auto& [value, index] : dense) {
    index = static_cast<int>(ds.label_values.size());
    ds.label_values.push_back(value);
  }
  ds.num_classes = static_cast<int>(dense.size());
  ds.labels.reserve(raw_labels.size());
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (auto v : raw_labels) {
    ds.labels.push_back(dense[v]);
    ++counts[dense[v]];
  }
  for (int c = 0; c < ds.num_classes; ++c) {
    if (counts[c] < 2) {
      // Point at the first row of the undersized class (header is line 1).
      std::size_t row = std::find(ds.labels.begin(), ds.labels.end(), c) - ds.labels.begin();
      throw IngestionError("class size < 2 (label " + std::to_string(ds.label_values[c]) + ")", row + 2);
    }
  }
  ds.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(raw_labels.size()), static_cast<Eigen::Index>(dim));
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open " + path);
  return read_dataset(is);
}

// Mask CSV: `id,original_label,new_label`, one row per flipped sample.
// Labels are written as original (file) values.
inline void write_mask(const NoiseMask& mask, const Dataset& noisy, std::ostream& os) {
  os << "id,original_label,new_label\n";
  auto value = [&](int y) {
    return y < static_cast<int>(noisy.label_values.size()) ? noisy.label_values[y] : std::int64_t{y};
  };
  for (std::size_t id = 0; id < mask.flipped.size(); ++id)
    if (mask.flipped[id]) os << id << ',' << value(mask.original_label[id]) << ',' << value(noisy.labels[id]) << '\n';
}

inline void save_mask(const NoiseMask& mask, const Dataset& noisy, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_mask(mask, noisy, os);
}

// Reads a mask written by write_mask against a dataset of `ds.size()` rows.
inline NoiseMask read_mask(std::istream& is, const Dataset& ds) {
  NoiseMask mask;
  mask.flipped.assign(ds.size(), false);
  mask.original_label.assign(ds.size(), -1);
  std::map<std::int64_t, int> dense;
  for (std::size_t c = 0; c < ds.label_values.size(); ++c) dense[ds.label_values[c]] = static_cast<int>(c);

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(is, line)) throw IngestionError("empty mask file");
  ++line_no;
  while (std::getline(is, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(csv::trim(line));
    if (f.size() != 3) throw IngestionError("mask rows need 3 fields", line_no);
    auto id = csv::parse_int(f[0]);
    auto orig = csv::parse_int(f[1]);
    if (!id || !orig || *id < 0 || static_cast<std::size_t>(*id) >= ds.size())
      throw IngestionError("malformed mask row", line_no);
    auto it = dense.find(*orig);
    if (it == dense.end()) throw IngestionError("unknown original label", line_no);
    mask.flipped[*id] = true;
    mask.original_label[*id] = it->second;
  }
  return mask;
}

inline NoiseMask load_mask(const std::string& path, const Dataset& ds) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open " + path);
  return read_mask(is, ds);
}

}  // namespace bspml
