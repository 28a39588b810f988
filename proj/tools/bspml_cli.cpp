#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bspml/data.hpp"
#include "bspml/driver.hpp"
#include "bspml/embed.hpp"
#include "bspml/eval.hpp"
#include "bspml/experiment.hpp"

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using namespace bspml;

namespace {

// BSPML_LOG=quiet|info|debug, default info. Messages go to stderr.
int log_level() {
  static const int level = [] {
    const char* v = std::getenv("BSPML_LOG");
    if (!v) return 1;
    const std::string s(v);
    if (s == "quiet" || s == "0") return 0;
    if (s == "debug" || s == "2") return 2;
    return 1;
  }();
  return level;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[bspml] " << msg << '\n';
}

void debug(const std::string& msg) {
  if (log_level() >= 2) std::cerr << "[bspml:debug] " << msg << '\n';
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The file itself is read by expand_config before parsing; the option only
// documents it and accepts the argument.
void add_config(CLI::App* app) {
  app->add_option("--config", "flat key=value file; command-line flags take precedence");
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

// Turns every `key=value` line of the --config file into `--key value`
// (or a bare `--key` for true, nothing for false), skipping keys that are
// also given as flags.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty() || args.size() < 2) return args;

  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open config file " + path);
  std::vector<std::string> injected;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto body = csv::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key(csv::trim(body.substr(0, eq)));
    const std::string value(csv::trim(body.substr(eq + 1)));
    while (!key.empty() && key.front() == '-') key.erase(0, 1);
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty() || key == "config") throw UsageError(path + ":" + std::to_string(lineno) + ": bad key");
    const std::string flag = "--" + key;
    if (given_on_command_line(args, flag)) continue;
    if (value == "true") {
      injected.push_back(flag);
    } else if (value != "false") {
      injected.push_back(flag);
      injected.push_back(value);
    }
  }
  std::vector<std::string> out{args[0], args[1]};
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

SyntheticSpec default_spec() { return SyntheticSpec{4, 50, 2, 10.0, 0.5}; }

void add_spec_options(CLI::App* app, SyntheticSpec& spec) {
  app->add_option("--classes", spec.num_classes, "number of classes")->capture_default_str();
  app->add_option("--per-class", spec.per_class, "samples per class")->capture_default_str();
  app->add_option("--dim", spec.dim, "feature dimension")->capture_default_str();
  app->add_option("--sep", spec.separation, "distance between neighbouring class centres")->capture_default_str();
  app->add_option("--sd", spec.stddev, "per-coordinate standard deviation")->capture_default_str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  for (auto part : csv::split(text)) {
    part = csv::trim(part);
    if (part.empty()) continue;
    const auto v = csv::parse_double(part);
    if (!v) throw UsageError("malformed number '" + std::string(part) + "' in list");
    out.push_back(*v);
  }
  return out;
}

// --- generate -------------------------------------------------------------

struct GenerateArgs {
  SyntheticSpec spec = default_spec();
  std::uint64_t seed = 0;
  std::string out;
};

void setup_generate(CLI::App& app, GenerateArgs& a, std::function<void()>& action) {
  auto* sub = app.add_subcommand("generate", "write a synthetic Gaussian-blob dataset");
  add_config(sub);
  add_spec_options(sub, a.spec);
  sub->add_option("--seed", a.seed)->capture_default_str();
  sub->add_option("--out", a.out, "output CSV")->required();
  sub->callback([&] {
    action = [&] {
      const auto ds = generate_synthetic(a.spec, a.seed);
      save_dataset(ds, a.out);
      info("wrote " + std::to_string(ds.size()) + " samples to " + a.out);
    };
  });
}

// --- corrupt --------------------------------------------------------------

struct CorruptArgs {
  std::string in, out, mask;
  double ratio = 0.0;
  std::uint64_t seed = 0;
};

void setup_corrupt(CLI::App& app, CorruptArgs& a, std::function<void()>& action) {
  auto* sub = app.add_subcommand("corrupt", "flip a fraction of labels in every class");
  add_config(sub);
  sub->add_option("--in", a.in, "input CSV")->required();
  sub->add_option("--ratio", a.ratio, "fraction of each class to flip, in [0, 1)")->required();
  sub->add_option("--seed", a.seed)->capture_default_str();
  sub->add_option("--out", a.out, "noisy CSV")->required();
  sub->add_option("--mask", a.mask, "mask CSV (id,original_label,new_label)")->required();
  sub->callback([&] {
    if (!(a.ratio >= 0.0 && a.ratio < 1.0)) throw UsageError("--ratio must lie in [0, 1)");
    action = [&] {
      const auto ds = load_dataset(a.in);
      const auto [noisy, mask] = inject_label_noise(ds, a.ratio, a.seed);
      save_dataset(noisy, a.out);
      save_mask(mask, noisy, a.mask);
      info("flipped " + std::to_string(mask.flip_count()) + " of " + std::to_string(ds.size()) + " labels");
    };
  });
}

// --- shared training options ----------------------------------------------

struct RunArgs {
  TrainConfig cfg;
  std::string data, mask, test;
  bool synthetic = false;
  SyntheticSpec spec = default_spec();
  double noise = 0.2;
  std::string sampling = "exhaustive";
  std::string activation = "tanh";
  std::optional<double> gamma0;
  double horizon = 1000.0;
  std::string ks = "1,2,4,8";
};

void add_train_options(CLI::App* sub, RunArgs& a) {
  TrainConfig& c = a.cfg;
  sub->add_option("--data", a.data, "training CSV");
  sub->add_option("--mask", a.mask, "noise mask of --data, enables the weight-gap metric");
  sub->add_option("--test", a.test, "evaluation CSV (default: the training data)");
  sub->add_flag("--synthetic", a.synthetic, "generate clean/noisy/test splits instead of reading --data");
  add_spec_options(sub, a.spec);
  sub->add_option("--noise", a.noise, "label-noise ratio of the synthetic training split")->capture_default_str();

  sub->add_option("--lambda0", c.age.lambda0)->capture_default_str();
  sub->add_option("--lambda-max", c.age.lambda_max)->capture_default_str();
  sub->add_option("--mult", c.age.multiplier, "age growth factor")->capture_default_str();
  sub->add_option("--mu", c.mu, "class-balance strength")->capture_default_str();
  sub->add_option("--alpha", c.ms.alpha)->capture_default_str();
  sub->add_option("--beta", c.ms.beta)->capture_default_str();
  sub->add_option("--rho", c.ms.rho)->capture_default_str();
  sub->add_option("--eps", c.ms.epsilon, "pair-mining margin")->capture_default_str();
  sub->add_option("--p", c.classes_per_batch, "classes per batch")->capture_default_str();
  sub->add_option("--k", c.per_class, "samples per class in a batch")->capture_default_str();
  sub->add_option("--lr", c.learning_rate)->capture_default_str();
  sub->add_option("--outer", c.outer_iterations, "outer alternations")->capture_default_str();
  sub->add_option("--epochs", c.theta_epochs, "embedding epochs per alternation")->capture_default_str();
  sub->add_option("--weight-iters", c.weight_iterations, "coordinate steps per weight solve (0: 200 N)")
      ->capture_default_str();
  sub->add_option("--weight-sampling", a.sampling)
      ->check(CLI::IsMember({"fixed", "exhaustive", "growing"}))
      ->capture_default_str();
  sub->add_option("--weight-p", c.weight_classes, "sampled classes per draw (0: auto)")->capture_default_str();
  sub->add_option("--weight-k", c.weight_per_class, "sampled weights per class (0: auto)")->capture_default_str();
  sub->add_option("--gamma0", a.gamma0, "initial weight step (default: inverse curvature bound)");
  sub->add_option("--horizon", a.horizon, "weight step decay horizon")->capture_default_str();
  sub->add_option("--trace-stride", c.weight_trace_stride, "weight trace row every this many steps (0: N)")
      ->capture_default_str();
  sub->add_flag("--warm-schedule", c.weight_warm_schedule, "continue the step decay across alternations");
  sub->add_option("--hidden", c.hidden, "hidden layer widths")->delimiter(',')->capture_default_str();
  sub->add_option("--embed-dim", c.embedding_dim)->capture_default_str();
  sub->add_option("--activation", a.activation)->check(CLI::IsMember({"tanh", "relu"}))->capture_default_str();
  sub->add_option("--seed", c.seed)->capture_default_str();
  sub->add_option("--ks", a.ks, "Recall@K cut-offs")->capture_default_str();
}

SamplingMode parse_sampling(const std::string& s) {
  if (s == "fixed") return SamplingMode::fixed;
  if (s == "growing") return SamplingMode::growing;
  return SamplingMode::exhaustive;
}

// Resolves string-valued options and checks every hyperparameter before any
// data is touched.
void finalize(RunArgs& a) {
  if (a.synthetic == !a.data.empty()) throw UsageError("give exactly one of --data and --synthetic");
  if (a.synthetic && !a.mask.empty()) throw UsageError("--mask only applies to --data");
  a.cfg.weight_sampling = parse_sampling(a.sampling);
  a.cfg.activation = parse_activation(a.activation);
  a.cfg.weight_schedule.gamma0 = a.gamma0;
  a.cfg.weight_schedule.horizon = a.horizon;
  a.cfg.validate();
  if (a.synthetic) {
    a.spec.validate();
    if (!(a.noise >= 0.0 && a.noise < 1.0)) throw UsageError("--noise must lie in [0, 1)");
  }
  for (double k : parse_list(a.ks))
    if (k < 1 || k != std::floor(k)) throw UsageError("--ks entries must be positive integers");
}

std::vector<int> cutoffs(const RunArgs& a) {
  std::vector<int> ks;
  for (double k : parse_list(a.ks)) ks.push_back(static_cast<int>(k));
  return ks;
}

struct RunData {
  Dataset train;
  std::optional<NoiseMask> mask;
  Dataset eval;
  std::string eval_source;
};

RunData load_run_data(const RunArgs& a) {
  RunData d;
  if (a.synthetic) {
    const auto seed = a.cfg.seed;
    const auto clean = generate_synthetic(a.spec, derive_seed(seed, 10));
    auto [noisy, mask] = inject_label_noise(clean, a.noise, derive_seed(seed, 11));
    d.train = std::move(noisy);
    if (mask.flip_count() > 0) d.mask = std::move(mask);
    d.eval = generate_synthetic(a.spec, derive_seed(seed, 12));
    d.eval_source = "synthetic test split";
    return d;
  }
  d.train = load_dataset(a.data);
  if (!a.mask.empty()) {
    std::ifstream is(a.mask);
    if (!is) throw IngestionError("cannot open mask " + a.mask);
    d.mask = read_mask(is, d.train);
  }
  if (a.test.empty()) {
    d.eval = d.train;
    d.eval_source = a.data;
  } else {
    d.eval = load_dataset(a.test);
    d.eval_source = a.test;
  }
  return d;
}

json config_json(const RunArgs& a, const std::string& mode) {
  const TrainConfig& c = a.cfg;
  json j;
  j["mode"] = mode;
  if (a.synthetic) {
    j["data"] = nullptr;
    j["synthetic"] = {{"classes", a.spec.num_classes}, {"per_class", a.spec.per_class}, {"dim", a.spec.dim},
                      {"sep", a.spec.separation},      {"sd", a.spec.stddev},           {"noise", a.noise}};
  } else {
    j["data"] = a.data;
    j["synthetic"] = nullptr;
  }
  j["mask"] = a.mask.empty() ? json(nullptr) : json(a.mask);
  j["test"] = a.test.empty() ? json(nullptr) : json(a.test);
  j["seed"] = c.seed;
  j["lambda0"] = c.age.lambda0;
  j["lambda_max"] = c.age.lambda_max;
  j["mult"] = c.age.multiplier;
  j["mu"] = c.mu;
  j["alpha"] = c.ms.alpha;
  j["beta"] = c.ms.beta;
  j["rho"] = c.ms.rho;
  j["eps"] = c.ms.epsilon;
  j["p"] = c.classes_per_batch;
  j["k"] = c.per_class;
  j["lr"] = c.learning_rate;
  j["outer"] = c.outer_iterations;
  j["epochs"] = c.theta_epochs;
  j["weight_iters"] = c.weight_iterations;
  j["weight_sampling"] = a.sampling;
  j["weight_p"] = c.weight_classes;
  j["weight_k"] = c.weight_per_class;
  j["gamma0"] = a.gamma0 ? json(*a.gamma0) : json(nullptr);
  j["horizon"] = a.horizon;
  j["warm_schedule"] = c.weight_warm_schedule;
  j["hidden"] = c.hidden;
  j["embed_dim"] = c.embedding_dim;
  j["activation"] = a.activation;
  j["ks"] = cutoffs(a);
  return j;
}

std::string trace_csv(const std::vector<ConvergenceRow>& rows) {
  std::ostringstream os;
  os << "t,lambda,objective,delta_objective,maw,sdaw\n";
  for (const auto& r : rows)
    os << r.t << ',' << csv::format_double(r.lambda) << ',' << csv::format_double(r.objective) << ','
       << csv::format_double(r.delta) << ',' << csv::format_double(r.maw) << ',' << csv::format_double(r.sdaw)
       << '\n';
  return os.str();
}

std::string weight_trace_csv(const std::vector<WeightTraceRow>& rows) {
  std::ostringstream os;
  os << "iter,coordinate,G,gamma,objective,proj_grad_norm\n";
  for (const auto& r : rows)
    os << r.iter << ',' << r.coordinate << ',' << csv::format_double(r.gradient) << ','
       << csv::format_double(r.gamma) << ',' << csv::format_double(r.objective) << ','
       << csv::format_double(r.proj_grad_norm) << '\n';
  return os.str();
}

std::string sample_weights_csv(const Dataset& ds, std::span<const double> w, const std::optional<NoiseMask>& mask) {
  std::ostringstream os;
  os << "id,label,weight" << (mask ? ",flipped" : "") << '\n';
  for (std::size_t id = 0; id < ds.size(); ++id) {
    os << id << ',' << ds.label_values[ds.labels[id]] << ',' << csv::format_double(w[id]);
    if (mask) os << ',' << (mask->flipped[id] ? 1 : 0);
    os << '\n';
  }
  return os.str();
}

json retrieval_json(const EmbeddingModel& model, const Dataset& eval, std::vector<int> ks, std::uint64_t seed) {
  const Eigen::MatrixXd emb = forward_batch(model, eval.features);
  json recall = json::object();
  std::erase_if(ks, [&](int k) {
    if (static_cast<std::size_t>(k) < eval.size()) return false;
    info("dropping Recall@" + std::to_string(k) + ": evaluation set has only " + std::to_string(eval.size()) +
         " samples");
    return true;
  });
  const auto r = recall_at_k(emb, eval.labels, ks);
  for (std::size_t i = 0; i < ks.size(); ++i) recall[std::to_string(ks[i])] = r[i];
  json out;
  out["recall"] = recall;
  out["nmi"] = nmi(emb, eval.labels, distinct_labels(eval.labels), derive_seed(seed, 20));
  return out;
}

// --- train ----------------------------------------------------------------

struct TrainArgs {
  RunArgs run;
  std::string mode = "bspml";
  std::string out;
};

void cmd_train(TrainArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  auto data = load_run_data(a.run);
  TrainConfig cfg = a.run.cfg;
  if (cfg.weight_trace_stride == 0) cfg.weight_trace_stride = data.train.size();
  const bool bspml = a.mode == "bspml";
  info("training " + a.mode + " on " + std::to_string(data.train.size()) + " samples, " +
       std::to_string(cfg.outer_iterations) + " outer iterations");

  const TrainResult res = bspml ? bspml_train(data.train, cfg) : ms_baseline_train(data.train, cfg);
  for (const auto& row : res.trace)
    debug("t=" + std::to_string(row.t) + " objective=" + csv::format_double(row.objective) +
          " delta=" + csv::format_double(row.delta));

  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_checkpoint(res.model, (dir / "model.ckpt").string());
  write_file(dir / "trace.csv", trace_csv(res.trace));

  json metrics = retrieval_json(res.model, data.eval, cutoffs(a.run), cfg.seed);
  if (bspml) {
    write_file(dir / "weights.csv", weight_trace_csv(res.weight_trace));
    write_file(dir / "sample_weights.csv", sample_weights_csv(data.train, res.weights.weights(), data.mask));
    const auto st = weight_stats(res.weights);
    metrics["maw"] = st.maw;
    metrics["sdaw"] = st.sdaw;
    if (data.mask)
      metrics["weight_gap"] = weight_separation(res.weights, *data.mask).gap;
    else
      metrics["weight_gap"] = nullptr;
  } else {
    metrics["maw"] = 1.0;
    metrics["sdaw"] = 0.0;
    metrics["weight_gap"] = nullptr;
  }
  json notes = json::object();
  if (metrics["weight_gap"].is_null())
    notes["weight_gap"] = bspml ? "no noise mask available" : "the baseline keeps every weight at 1";
  notes["evaluation"] = "retrieval and NMI on " + data.eval_source;

  json report;
  report["config"] = config_json(a.run, a.mode);
  report["metrics"] = metrics;
  report["notes"] = notes;
  report["trace_file"] = "trace.csv";
  report["runtime_sec"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file(dir / "report.json", report.dump(2) + "\n");
  info("wrote " + (dir / "report.json").string());
}

void setup_train(CLI::App& app, TrainArgs& a, std::function<void()>& action) {
  auto* sub = app.add_subcommand("train", "alternate embedding and weight updates, or train the plain baseline");
  add_config(sub);
  sub->add_option("--mode", a.mode)->check(CLI::IsMember({"bspml", "ms"}))->capture_default_str();
  sub->add_option("--out", a.out, "output directory")->required();
  add_train_options(sub, a.run);
  sub->callback([&] {
    finalize(a.run);
    action = [&] { cmd_train(a); };
  });
}

// --- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string model, data, out, ks = "1,2,4,8";
  std::uint64_t seed = 0;
};

void setup_eval(CLI::App& app, EvalArgs& a, std::function<void()>& action) {
  auto* sub = app.add_subcommand("eval", "Recall@K and NMI of a checkpoint on a dataset");
  add_config(sub);
  sub->add_option("--model", a.model, "checkpoint file")->required();
  sub->add_option("--data", a.data, "evaluation CSV")->required();
  sub->add_option("--ks", a.ks, "Recall@K cut-offs")->capture_default_str();
  sub->add_option("--seed", a.seed, "k-means seed")->capture_default_str();
  sub->add_option("--out", a.out, "JSON file (default: stdout)");
  sub->callback([&] {
    std::vector<int> ks;
    for (double k : parse_list(a.ks)) {
      if (k < 1 || k != std::floor(k)) throw UsageError("--ks entries must be positive integers");
      ks.push_back(static_cast<int>(k));
    }
    if (ks.empty()) throw UsageError("--ks is empty");
    action = [&a, ks] {
      const auto model = load_checkpoint(a.model);
      const auto ds = load_dataset(a.data);
      if (model.input_dim() != ds.dim())
        throw IngestionError("checkpoint expects " + std::to_string(model.input_dim()) + " features, dataset has " +
                             std::to_string(ds.dim()));
      for (int k : ks)
        if (static_cast<std::size_t>(k) >= ds.size())
          throw UsageError("Recall@" + std::to_string(k) + " needs more than " + std::to_string(k) + " samples");
      const Eigen::MatrixXd emb = forward_batch(model, ds.features);
      const auto r = recall_at_k(emb, ds.labels, ks);
      json report;
      for (std::size_t i = 0; i < ks.size(); ++i) report["R@" + std::to_string(ks[i])] = r[i];
      report["NMI"] = nmi(emb, ds.labels, distinct_labels(ds.labels), derive_seed(a.seed, 20));
      const std::string text = report.dump(2) + "\n";
      if (a.out.empty()) std::cout << text;
      else write_file(a.out, text);
    };
  });
}

// --- sweep ----------------------------------------------------------------

struct SweepArgs {
  RunArgs run;
  std::string param = "mu";
  std::string grid;
  std::string out;
};

void setup_sweep(CLI::App& app, SweepArgs& a, std::function<void()>& action) {
  auto* sub = app.add_subcommand("sweep", "final MAW/SDAW over a grid of mu or lambda_max");
  add_config(sub);
  sub->add_option("--param", a.param, "mu or lambda_max")->capture_default_str();
  sub->add_option("--grid", a.grid, "comma-separated values")->required();
  sub->add_option("--out", a.out, "output CSV")->required();
  add_train_options(sub, a.run);
  sub->callback([&] {
    finalize(a.run);
    const auto param = parse_sweep_parameter(a.param);
    const auto grid = parse_list(a.grid);
    if (grid.empty()) throw UsageError("--grid is empty");
    for (double v : grid) {
      TrainConfig probe = a.run.cfg;
      if (param == SweepParameter::mu) probe.mu = v;
      else probe.age.lambda_max = v;
      probe.validate();
    }
    action = [&a, param, grid] {
      const auto data = load_run_data(a.run);
      info("sweeping " + std::string(to_string(param)) + " over " + std::to_string(grid.size()) + " values");
      const auto rows = run_sweep(data.train, a.run.cfg, param, grid);
      std::ostringstream os;
      os << to_string(param) << ",maw,sdaw,final_delta\n";
      for (const auto& r : rows)
        os << csv::format_double(r.value) << ',' << csv::format_double(r.maw) << ',' << csv::format_double(r.sdaw)
           << ',' << csv::format_double(r.final_delta) << '\n';
      write_file(a.out, os.str());
    };
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Balanced self-paced metric learning experiments"};
  app.require_subcommand(1);
  std::function<void()> action;

  GenerateArgs gen;
  CorruptArgs cor;
  TrainArgs train;
  EvalArgs ev;
  SweepArgs sweep;
  setup_generate(app, gen, action);
  setup_corrupt(app, cor, action);
  setup_train(app, train, action);
  setup_eval(app, ev, action);
  setup_sweep(app, sweep, action);

  try {
    const auto args = expand_config(std::vector<std::string>(argv, argv + argc));
    std::vector<char*> raw;
    for (const auto& a : args) raw.push_back(const_cast<char*>(a.c_str()));
    app.parse(static_cast<int>(raw.size()), raw.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (action) action();
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
