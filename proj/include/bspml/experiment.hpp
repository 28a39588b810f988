#pragma once

// Parameter sweeps over full training runs, plus the small synthetic
// benchmark shared by the command-line tool and the acceptance checks.

#include <span>
#include <tuple>
#include <string>
#include <vector>

#include "bspml/data.hpp"
#include "bspml/driver.hpp"
#include "bspml/error.hpp"
#include "bspml/eval.hpp"

namespace bspml {

enum class SweepParameter { mu, lambda_max };

inline const char* to_string(SweepParameter p) { return p == SweepParameter::mu ? "mu" : "lambda_max"; }

inline SweepParameter parse_sweep_parameter(const std::string& s) {
  if (s == "mu") return SweepParameter::mu;
  if (s == "lambda_max" || s == "lambda-max" || s == "lambda") return SweepParameter::lambda_max;
  throw ConfigError("unknown sweep parameter '" + s + "' (expected mu or lambda_max)");
}

struct SweepRow {
  double value = 0.0;
  double maw = 0.0;
  double sdaw = 0.0;
  double final_delta = 0.0;
};

// One bspml_train per grid value, everything else taken from `base`.
inline std::vector<SweepRow> run_sweep(const Dataset& ds, const TrainConfig& base, SweepParameter param,
                                       std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  std::vector<SweepRow> rows;
  for (double v : grid) {
    TrainConfig cfg = base;
    if (param == SweepParameter::mu) cfg.mu = v;
    else cfg.age.lambda_max = v;
    const auto run = bspml_train(ds, cfg);
    const auto st = weight_stats(run.weights);
    rows.push_back({v, st.maw, st.sdaw, run.trace.empty() ? 0.0 : run.trace.back().delta});
  }
  return rows;
}

// Four well separated 2-D Gaussian classes, 50 samples each.
inline SyntheticSpec benchmark_spec() { return SyntheticSpec{4, 50, 2, 10.0, 0.5}; }

struct Benchmark {
  Dataset clean;
  Dataset noisy;
  NoiseMask mask;
  Dataset test;
};

inline Benchmark make_benchmark(std::uint64_t seed, double noise_ratio = 0.2) {
  const auto spec = benchmark_spec();
  Benchmark b;
  b.clean = generate_synthetic(spec, derive_seed(seed, 10));
  std::tie(b.noisy, b.mask) = inject_label_noise(b.clean, noise_ratio, derive_seed(seed, 11));
  b.test = generate_synthetic(spec, derive_seed(seed, 12));
  return b;
}

}  // namespace bspml
