#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "bspml/csv.hpp"
#include "bspml/error.hpp"
#include "bspml/random.hpp"

namespace bspml {

enum class Activation { tanh, relu };

inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + s + "' (expected tanh or relu)");
}

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Gradient of a scalar loss w.r.t. every model parameter, laid out in the
// model's enumeration order: for each layer, weight (row-major) then bias.
struct ParamGrads {
  Eigen::VectorXd values;
};

inline constexpr double kNormEpsilon = 1e-12;

// Feedforward network x -> h_1 -> ... -> v, followed by v / max(|v|, eps).
// The hidden activation is applied after every layer except the last.
class EmbeddingModel {
 public:
  EmbeddingModel() = default;
  EmbeddingModel(std::vector<DenseLayer> layers, Activation activation)
      : layers_(std::move(layers)), activation_(activation) {
    detail::require(!layers_.empty(), "model needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      detail::require(layers_[l].bias.size() == layers_[l].weight.rows(), "bias length must equal layer output size");
      if (l > 0)
        detail::require(layers_[l].weight.cols() == layers_[l - 1].weight.rows(), "layer shapes do not chain");
    }
  }

  // Glorot-uniform weights, zero biases. An empty `hidden` gives a single
  // linear layer.
  static EmbeddingModel random(int input_dim, const std::vector<int>& hidden, int output_dim, Activation activation,
                               std::uint64_t seed) {
    detail::require(input_dim > 0 && output_dim > 0, "model dimensions must be positive");
    Rng rng(seed);
    std::vector<int> sizes{input_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(output_dim);
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const int in = sizes[l], out = sizes[l + 1];
      detail::require(in > 0 && out > 0, "layer sizes must be positive");
      const double limit = std::sqrt(6.0 / (in + out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
      for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
      layers.push_back(std::move(layer));
    }
    return EmbeddingModel(std::move(layers), activation);
  }

  int input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers_.back().weight.rows()); }
  Activation activation() const { return activation_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  Eigen::VectorXd flat_params() const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(param_count()));
    Eigen::Index k = 0;
    for (const auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out[k++] = l.weight(r, c);
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) out[k++] = l.bias[r];
    }
    return out;
  }

  void set_flat_params(const Eigen::VectorXd& p) {
    detail::require(static_cast<std::size_t>(p.size()) == param_count(), "parameter vector has wrong length");
    Eigen::Index k = 0;
    for (auto& l : layers_) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = p[k++];
      for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = p[k++];
    }
  }

  friend bool operator==(const EmbeddingModel& a, const EmbeddingModel& b) {
    if (a.activation_ != b.activation_ || a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t l = 0; l < a.layers_.size(); ++l) {
      const auto& x = a.layers_[l];
      const auto& y = b.layers_[l];
      if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols()) return false;
      if (x.weight != y.weight || x.bias != y.bias) return false;
    }
    return true;
  }

 private:
  std::vector<DenseLayer> layers_;
  Activation activation_ = Activation::tanh;
};

namespace detail {

inline Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::tanh) return z.array().tanh().matrix();
  return z.cwiseMax(0.0);
}

// d act / d z evaluated at pre-activation z.
inline Eigen::MatrixXd activate_grad(const Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::tanh) return (1.0 - z.array().tanh().square()).matrix();
  return (z.array() > 0.0).cast<double>().matrix();
}

// Pre-activations per layer for a batch (rows are samples). zs[l] is the
// input to layer l's activation; the last entry is the unnormalized output.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // inputs[l] feeds layer l
  std::vector<Eigen::MatrixXd> zs;
};

inline ForwardCache forward_cache(const EmbeddingModel& model, const Eigen::MatrixXd& batch) {
  require(batch.cols() == model.input_dim(),
          "input dimension " + std::to_string(batch.cols()) + " does not match model input " +
              std::to_string(model.input_dim()));
  ForwardCache cache;
  Eigen::MatrixXd a = batch;
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = a * layers[l].weight.transpose();
    z.rowwise() += layers[l].bias.transpose();
    cache.inputs.push_back(std::move(a));
    if (l + 1 < layers.size()) a = activate(z, model.activation());
    cache.zs.push_back(std::move(z));
  }
  return cache;
}

}  // namespace detail

// Unit-norm embeddings of every row of `batch` (rows are samples).
inline Eigen::MatrixXd forward_batch(const EmbeddingModel& model, const Eigen::MatrixXd& batch) {
  auto cache = detail::forward_cache(model, batch);
  Eigen::MatrixXd v = std::move(cache.zs.back());
  for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i) /= std::max(v.row(i).norm(), kNormEpsilon);
  return v;
}

inline Eigen::VectorXd forward(const EmbeddingModel& model, const Eigen::VectorXd& x) {
  return forward_batch(model, x.transpose()).row(0).transpose();
}

inline double similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  detail::require(a.size() == b.size(), "similarity of vectors with different lengths");
  return a.dot(b);
}

// Exact gradient of a scalar loss given dLoss/dEmbedding for each batch row,
// back through the normalization and every layer.
inline ParamGrads backward(const EmbeddingModel& model, const Eigen::MatrixXd& batch, const Eigen::MatrixXd& upstream) {
  detail::require(upstream.rows() == batch.rows() && upstream.cols() == model.output_dim(),
                  "upstream gradient must have one output-sized row per batch sample");
  auto cache = detail::forward_cache(model, batch);
  const auto& layers = model.layers();

  // Through v -> v/|v|: dv = (g - (g.e) e) / |v|.
  const Eigen::MatrixXd& v = cache.zs.back();
  Eigen::MatrixXd dz(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double norm = v.row(i).norm();
    if (!(norm > kNormEpsilon)) throw NumericError("zero pre-normalization embedding in gradient path");
    const Eigen::RowVectorXd e = v.row(i) / norm;
    const Eigen::RowVectorXd g = upstream.row(i);
    dz.row(i) = (g - g.dot(e) * e) / norm;
  }

  std::vector<Eigen::MatrixXd> dw(layers.size());
  std::vector<Eigen::VectorXd> db(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    dw[l] = dz.transpose() * cache.inputs[l];
    db[l] = dz.colwise().sum().transpose();
    if (l > 0) {
      Eigen::MatrixXd da = dz * layers[l].weight;
      dz = da.cwiseProduct(detail::activate_grad(cache.zs[l - 1], model.activation()));
    }
  }

  ParamGrads grads{Eigen::VectorXd(static_cast<Eigen::Index>(model.param_count()))};
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (Eigen::Index r = 0; r < dw[l].rows(); ++r)
      for (Eigen::Index c = 0; c < dw[l].cols(); ++c) grads.values[k++] = dw[l](r, c);
    for (Eigen::Index r = 0; r < db[l].size(); ++r) grads.values[k++] = db[l][r];
  }
  return grads;
}

inline EmbeddingModel sgd_step(const EmbeddingModel& model, const ParamGrads& grads, double lr) {
  detail::require(lr >= 0.0, "learning rate must be non-negative");
  detail::require(static_cast<std::size_t>(grads.values.size()) == model.param_count(),
                  "gradient length does not match parameter count");
  if (!grads.values.allFinite()) throw NumericError("non-finite gradient; step refused");
  EmbeddingModel next = model;
  next.set_flat_params(model.flat_params() - lr * grads.values);
  return next;
}

// --- checkpoint ---------------------------------------------------------
//
// Text format, one token group per line:
//   bspml-embedding 1
//   activation <tanh|relu>
//   layers <L>
//   <in_0> <out_0>
//   ...
//   params <P>
//   <value>            (P lines, enumeration order, shortest round-trip form)

inline void write_checkpoint(const EmbeddingModel& model, std::ostream& os) {
  os << "bspml-embedding 1\n";
  os << "activation " << to_string(model.activation()) << '\n';
  os << "layers " << model.layers().size() << '\n';
  for (const auto& l : model.layers()) os << l.weight.cols() << ' ' << l.weight.rows() << '\n';
  const Eigen::VectorXd p = model.flat_params();
  os << "params " << p.size() << '\n';
  for (Eigen::Index i = 0; i < p.size(); ++i) os << csv::format_double(p[i]) << '\n';
}

inline void save_checkpoint(const EmbeddingModel& model, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(model, os);
}

inline EmbeddingModel read_checkpoint(std::istream& is) {
  std::string tag, act;
  int version = 0;
  std::size_t n_layers = 0;
  if (!(is >> tag >> version) || tag != "bspml-embedding" || version != 1)
    throw IngestionError("not a bspml-embedding v1 checkpoint");
  if (!(is >> tag >> act) || tag != "activation") throw IngestionError("checkpoint: missing activation");
  Activation activation;
  try {
    activation = parse_activation(act);
  } catch (const ConfigError& e) {
    throw IngestionError(std::string("checkpoint: ") + e.what());
  }
  if (!(is >> tag >> n_layers) || tag != "layers" || n_layers == 0) throw IngestionError("checkpoint: bad layer count");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l < n_layers; ++l) {
    long in = 0, out = 0;
    if (!(is >> in >> out) || in <= 0 || out <= 0) throw IngestionError("checkpoint: bad layer shape");
    layers.push_back({Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)});
  }
  std::size_t count = 0;
  if (!(is >> tag >> count) || tag != "params") throw IngestionError("checkpoint: missing params");
  EmbeddingModel model;
  try {
    model = EmbeddingModel(std::move(layers), activation);
  } catch (const ContractError& e) {
    throw IngestionError(std::string("checkpoint: ") + e.what());
  }
  if (count != model.param_count()) throw IngestionError("checkpoint: parameter count does not match layer shapes");
  Eigen::VectorXd p(static_cast<Eigen::Index>(count));
  std::string token;
  for (std::size_t i = 0; i < count; ++i) {
    if (!(is >> token)) throw IngestionError("checkpoint: truncated parameter list");
    auto v = csv::parse_double(token);
    if (!v) throw IngestionError("checkpoint: malformed parameter '" + token + "'");
    p[static_cast<Eigen::Index>(i)] = *v;
  }
  model.set_flat_params(p);
  return model;
}

inline EmbeddingModel load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace bspml
