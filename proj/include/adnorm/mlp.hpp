#pragma once

// Feedforward binary classifier: standardized inputs, ReLU hidden layers,
// sigmoid output. An empty width list gives plain logistic regression.

#include <adnorm/errors.hpp>
#include <adnorm/rng.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace adnorm::mlp {

struct NetworkConfig {
  std::string name = "custom";
  std::vector<int> layer_widths;
  double dropout_rate = 0.0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int epochs = 100;
  int batch_size = 128;
  std::uint64_t seed = 1;

  void validate() const {
    for (int w : layer_widths)
      if (w <= 0) throw DomainError("layer widths must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw DomainError("dropout_rate must be in [0,1)");
    if (!(learning_rate > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(epsilon > 0.0)) {
      throw DomainError("invalid Adam constants");
    }
    if (epochs < 1 || batch_size < 1) throw DomainError("epochs and batch_size must be positive");
  }
};

/// Architecture presets: model1..model6 of the sensitivity study, and "linear".
inline NetworkConfig preset(std::string_view name) {
  NetworkConfig c;
  c.name = std::string(name);
  if (name == "model1") {
    c.layer_widths = {256, 128};
    c.dropout_rate = 0.3;
  } else if (name == "model2") {
    c.layer_widths = {256, 128, 64};
    c.dropout_rate = 0.3;
  } else if (name == "model3") {
    c.layer_widths = {32, 16};
    c.dropout_rate = 0.3;
  } else if (name == "model4") {
    c.layer_widths = {128};
    c.dropout_rate = 0.3;
  } else if (name == "model5") {
    c.layer_widths = {256, 128};
    c.dropout_rate = 0.6;
  } else if (name == "model6") {
    c.layer_widths = {256, 128};
    c.dropout_rate = 0.1;
  } else if (name == "linear") {
    c.dropout_rate = 0.0;
  } else {
    throw DomainError("unknown network preset '" + std::string(name) + "'");
  }
  return c;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"model1", "model2", "model3", "model4", "model5", "model6"};
  return names;
}

struct Layer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;     // out
};

/// Column-major training data: one column of raw features per example.
struct Dataset {
  Eigen::MatrixXd features;  // m x N
  Eigen::VectorXd labels;    // N, values 0 (H0) or 1 (H1)

  std::size_t size() const { return static_cast<std::size_t>(features.cols()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(features.rows()); }

  static Dataset from_rows(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels) {
    if (rows.size() != labels.size() || rows.empty()) throw DimensionError("dataset rows/labels mismatch");
    Dataset d;
    const auto m = static_cast<Eigen::Index>(rows.front().size());
    d.features.resize(m, static_cast<Eigen::Index>(rows.size()));
    d.labels.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (static_cast<Eigen::Index>(rows[j].size()) != m) throw DimensionError("ragged feature rows");
      for (Eigen::Index i = 0; i < m; ++i) d.features(i, static_cast<Eigen::Index>(j)) = rows[j][i];
      d.labels(static_cast<Eigen::Index>(j)) = labels[j];
    }
    return d;
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d;
    d.features.resize(features.rows(), static_cast<Eigen::Index>(idx.size()));
    d.labels.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      d.features.col(static_cast<Eigen::Index>(j)) = features.col(static_cast<Eigen::Index>(idx[j]));
      d.labels(static_cast<Eigen::Index>(j)) = labels(static_cast<Eigen::Index>(idx[j]));
    }
    return d;
  }
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct ClassifierModel {
  NetworkConfig config;
  std::size_t input_dim = 0;
  Eigen::VectorXd feature_means;
  Eigen::VectorXd feature_sds;
  std::vector<Layer> layers;  // hidden layers followed by the 1-unit output map
  double final_loss = 0.0;
  std::vector<double> loss_history;  // dropout-free full-set loss every 10 epochs

  /// Zero weights with the dimension chain implied by `config` and `m` inputs.
  static ClassifierModel zeros(const NetworkConfig& config, std::size_t m) {
    ClassifierModel model;
    model.config = config;
    model.input_dim = m;
    model.feature_means = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    model.feature_sds = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(m));
    Eigen::Index prev = static_cast<Eigen::Index>(m);
    for (int w : config.layer_widths) {
      model.layers.push_back({Eigen::MatrixXd::Zero(w, prev), Eigen::VectorXd::Zero(w)});
      prev = w;
    }
    model.layers.push_back({Eigen::MatrixXd::Zero(1, prev), Eigen::VectorXd::Zero(1)});
    return model;
  }

  std::size_t hidden_count() const { return layers.size() - 1; }

  Eigen::VectorXd standardize(std::span<const double> x) const {
    if (x.size() != input_dim) throw DimensionError("feature vector length does not match model input");
    Eigen::VectorXd v(static_cast<Eigen::Index>(input_dim));
    for (std::size_t i = 0; i < input_dim; ++i) {
      if (!std::isfinite(x[i])) throw DomainError("non-finite feature");
      v(static_cast<Eigen::Index>(i)) = (x[i] - feature_means(static_cast<Eigen::Index>(i))) /
                                        feature_sds(static_cast<Eigen::Index>(i));
    }
    return v;
  }

  /// Pre-sigmoid output for one raw feature vector (no dropout).
  double logit(std::span<const double> x) const {
    Eigen::VectorXd a = standardize(x);
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
      Eigen::VectorXd z = layers[l].weights * a + layers[l].bias;
      a = z.cwiseMax(0.0);
    }
    return (layers.back().weights * a + layers.back().bias)(0);
  }

  double forward(std::span<const double> x) const { return sigmoid(logit(x)); }
};

/// Probability that the input comes from H1.
inline double forward(const ClassifierModel& model, std::span<const double> features) {
  return model.forward(features);
}

/// Mean binary cross-entropy with probabilities clamped to [1e-12, 1-1e-12].
inline double bce(std::span<const double> probs, std::span<const double> labels) {
  if (probs.size() != labels.size() || probs.empty()) throw DimensionError("bce: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-12, 1.0 - 1e-12);
    s -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  return s / static_cast<double>(probs.size());
}

inline double loss(const ClassifierModel& model, const Dataset& data) {
  std::vector<double> probs(data.size());
  std::vector<double> labels(data.size());
  std::vector<double> x(data.input_dim());
  for (std::size_t j = 0; j < data.size(); ++j) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    probs[j] = model.forward(x);
    labels[j] = data.labels(static_cast<Eigen::Index>(j));
  }
  return bce(probs, labels);
}

/// Per-hidden-layer multipliers (0 or 1/(1-rate)); one matrix of shape
/// width x batch per hidden layer.
using DropoutMasks = std::vector<Eigen::MatrixXd>;

struct Gradients {
  std::vector<Layer> layers;
  double loss = 0.0;
};

namespace detail {

inline Eigen::MatrixXd standardize_batch(const ClassifierModel& model, const Eigen::MatrixXd& raw) {
  if (static_cast<std::size_t>(raw.rows()) != model.input_dim) throw DimensionError("batch feature dimension mismatch");
  return (raw.colwise() - model.feature_means).array().colwise() / model.feature_sds.array();
}

}  // namespace detail

/// Exact gradient of the mean cross-entropy over `batch` (unclamped region).
/// With `masks`, hidden activations are multiplied by the given masks.
inline Gradients gradient(const ClassifierModel& model, const Dataset& batch, const DropoutMasks* masks = nullptr) {
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  if (B == 0) throw DimensionError("gradient: empty batch");
  const std::size_t hidden = model.hidden_count();
  if (masks && masks->size() != hidden) throw DimensionError("gradient: one dropout mask per hidden layer");

  std::vector<Eigen::MatrixXd> acts;  // a_0 .. a_L
  std::vector<Eigen::MatrixXd> pre;   // z_1 .. z_L
  acts.push_back(detail::standardize_batch(model, batch.features));
  for (std::size_t l = 0; l < hidden; ++l) {
    Eigen::MatrixXd z = model.layers[l].weights * acts.back();
    z.colwise() += model.layers[l].bias;
    Eigen::MatrixXd a = z.cwiseMax(0.0);
    if (masks) a.array() *= (*masks)[l].array();
    pre.push_back(std::move(z));
    acts.push_back(std::move(a));
  }
  Eigen::RowVectorXd out = model.layers.back().weights * acts.back();
  out.array() += model.layers.back().bias(0);

  Gradients g;
  g.layers.resize(model.layers.size());
  Eigen::RowVectorXd dz(B);
  double total = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) {
    const double p = sigmoid(out(j));
    const double y = batch.labels(j);
    const double pc = std::clamp(p, 1e-12, 1.0 - 1e-12);
    total -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    dz(j) = (p - y) / static_cast<double>(B);
  }
  g.loss = total / static_cast<double>(B);

  g.layers.back().weights = dz * acts.back().transpose();
  g.layers.back().bias = Eigen::VectorXd::Constant(1, dz.sum());
  Eigen::MatrixXd delta = model.layers.back().weights.transpose() * dz;  // d loss / d a_L
  for (std::size_t l = hidden; l-- > 0;) {
    Eigen::MatrixXd dpre = delta;
    if (masks) dpre.array() *= (*masks)[l].array();
    dpre.array() *= (pre[l].array() > 0.0).cast<double>();
    g.layers[l].weights = dpre * acts[l].transpose();
    g.layers[l].bias = dpre.rowwise().sum();
    if (l > 0) delta = model.layers[l].weights.transpose() * dpre;
  }
  return g;
}

/// Adam with bias-corrected moment estimates over a flat parameter block.
class Adam {
 public:
  Adam(std::size_t size, double learning_rate = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8)
      : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(epsilon), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw DimensionError("Adam: size mismatch");
    ++t_;
    b1t_ *= b1_;
    b2t_ *= b2_;
    const double c1 = 1.0 - b1t_;
    const double c2 = 1.0 - b2t_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * g * g;
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }

  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  double b1t_ = 1.0;
  double b2t_ = 1.0;
  long t_ = 0;
  std::vector<double> m_, v_;
};

namespace detail {

inline std::size_t parameter_count(const std::vector<Layer>& layers) {
  std::size_t n = 0;
  for (const Layer& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

inline void flatten(const std::vector<Layer>& layers, std::vector<double>& out) {
  out.clear();
  for (const Layer& l : layers) {
    out.insert(out.end(), l.weights.data(), l.weights.data() + l.weights.size());
    out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
  }
}

inline void unflatten(const std::vector<double>& flat, std::vector<Layer>& layers) {
  std::size_t k = 0;
  for (Layer& l : layers) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k), l.weights.size(), l.weights.data());
    k += static_cast<std::size_t>(l.weights.size());
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k), l.bias.size(), l.bias.data());
    k += static_cast<std::size_t>(l.bias.size());
  }
}

// Uniform double in [0,1) from the top 53 bits.
inline double unit_uniform(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Trains a classifier with Adam on mini-batches, inverted dropout on hidden
/// layers, and He-uniform initialisation. Deterministic for a given seed.
inline ClassifierModel train(const NetworkConfig& config, const Dataset& data) {
  config.validate();
  const std::size_t n = data.size();
  const std::size_t m = data.input_dim();
  if (n == 0 || m == 0) throw DomainError("train: empty dataset");
  if (static_cast<std::size_t>(config.batch_size) > n) throw DomainError("train: batch_size exceeds dataset size");
  bool has0 = false;
  bool has1 = false;
  for (Eigen::Index j = 0; j < data.labels.size(); ++j) {
    const double y = data.labels(j);
    if (y == 0.0) has0 = true;
    else if (y == 1.0) has1 = true;
    else throw DomainError("train: labels must be 0 or 1");
  }
  if (!has0 || !has1) throw DomainError("train: dataset must contain both labels");
  if (!data.features.allFinite()) throw DomainError("train: non-finite features");

  ClassifierModel model = ClassifierModel::zeros(config, m);
  model.feature_means = data.features.rowwise().mean();
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = data.features.row(static_cast<Eigen::Index>(i)).array() - model.feature_means(static_cast<Eigen::Index>(i));
    double sd = std::sqrt(row.square().sum() / static_cast<double>(n));
    if (!(sd > 0.0)) sd = 1.0;
    model.feature_sds(static_cast<Eigen::Index>(i)) = sd;
  }

  Rng rng = make_rng(config.seed, {0x1417});
  for (Layer& layer : model.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.weights.cols()));
    for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
        layer.weights(r, c) = (2.0 * detail::unit_uniform(rng) - 1.0) * limit;
  }

  Adam adam(detail::parameter_count(model.layers), config.learning_rate, config.beta1, config.beta2, config.epsilon);
  std::vector<double> flat_params;
  std::vector<double> flat_grads;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double keep_scale = 1.0 / (1.0 - config.dropout_rate);
  const auto check = [&](double value, int epoch) {
    if (!std::isfinite(value)) {
      throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + " (model " + config.name + ")");
    }
  };

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const Dataset batch = data.subset(std::span<const std::size_t>(order).subspan(start, stop - start));
      DropoutMasks masks;
      const DropoutMasks* mask_ptr = nullptr;
      if (config.dropout_rate > 0.0 && model.hidden_count() > 0) {
        for (std::size_t l = 0; l < model.hidden_count(); ++l) {
          Eigen::MatrixXd mask(model.layers[l].weights.rows(), static_cast<Eigen::Index>(stop - start));
          for (Eigen::Index c = 0; c < mask.cols(); ++c)
            for (Eigen::Index r = 0; r < mask.rows(); ++r)
              mask(r, c) = detail::unit_uniform(rng) < config.dropout_rate ? 0.0 : keep_scale;
          masks.push_back(std::move(mask));
        }
        mask_ptr = &masks;
      }
      const Gradients g = gradient(model, batch, mask_ptr);
      check(g.loss, epoch);
      detail::flatten(model.layers, flat_params);
      detail::flatten(g.layers, flat_grads);
      adam.step(flat_params, flat_grads);
      detail::unflatten(flat_params, model.layers);
    }
    if (epoch % 10 == 0 || epoch == config.epochs) {
      const double full = loss(model, data);
      check(full, epoch);
      if (epoch % 10 == 0) model.loss_history.push_back(full);
      model.final_loss = full;
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Text model file (17 significant digits, so reloads reproduce outputs exactly).

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_model(std::ostream& out, const ClassifierModel& model) {
  using detail::fmt17;
  const NetworkConfig& c = model.config;
  out << "adnorm-classifier " << kModelFormatVersion << "\n";
  out << "name " << c.name << "\n";
  out << "input_dim " << model.input_dim << "\n";
  out << "layer_widths " << c.layer_widths.size();
  for (int w : c.layer_widths) out << " " << w;
  out << "\n";
  out << "dropout " << fmt17(c.dropout_rate) << "\n";
  out << "seed " << c.seed << "\n";
  out << "adam " << fmt17(c.learning_rate) << " " << fmt17(c.beta1) << " " << fmt17(c.beta2) << " "
      << fmt17(c.epsilon) << "\n";
  out << "epochs " << c.epochs << "\n";
  out << "batch_size " << c.batch_size << "\n";
  out << "final_loss " << fmt17(model.final_loss) << "\n";
  out << "feature_means";
  for (Eigen::Index i = 0; i < model.feature_means.size(); ++i) out << " " << fmt17(model.feature_means(i));
  out << "\nfeature_sds";
  for (Eigen::Index i = 0; i < model.feature_sds.size(); ++i) out << " " << fmt17(model.feature_sds(i));
  out << "\n";
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Layer& layer = model.layers[l];
    out << "layer " << l << " " << layer.weights.rows() << " " << layer.weights.cols() << "\n";
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index k = 0; k < layer.weights.cols(); ++k) out << (k ? " " : "") << fmt17(layer.weights(r, k));
      out << "\n";
    }
    out << "bias";
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) out << " " << fmt17(layer.bias(r));
    out << "\n";
  }
  out << "end\n";
}

inline ClassifierModel read_model(std::istream& in) {
  const auto expect = [&](const std::string& word) {
    std::string tok;
    if (!(in >> tok) || tok != word) throw FormatError("model file: expected '" + word + "', got '" + tok + "'");
  };
  int version = 0;
  expect("adnorm-classifier");
  in >> version;
  if (version != kModelFormatVersion) throw FormatError("model file: unsupported version " + std::to_string(version));
  ClassifierModel model;
  NetworkConfig& c = model.config;
  expect("name");
  in >> c.name;
  expect("input_dim");
  in >> model.input_dim;
  expect("layer_widths");
  std::size_t depth = 0;
  in >> depth;
  c.layer_widths.resize(depth);
  for (int& w : c.layer_widths) in >> w;
  expect("dropout");
  in >> c.dropout_rate;
  expect("seed");
  in >> c.seed;
  expect("adam");
  in >> c.learning_rate >> c.beta1 >> c.beta2 >> c.epsilon;
  expect("epochs");
  in >> c.epochs;
  expect("batch_size");
  in >> c.batch_size;
  expect("final_loss");
  in >> model.final_loss;
  const auto m = static_cast<Eigen::Index>(model.input_dim);
  model.feature_means.resize(m);
  model.feature_sds.resize(m);
  expect("feature_means");
  for (Eigen::Index i = 0; i < m; ++i) in >> model.feature_means(i);
  expect("feature_sds");
  for (Eigen::Index i = 0; i < m; ++i) in >> model.feature_sds(i);
  Eigen::Index prev = m;
  for (std::size_t l = 0; l <= depth; ++l) {
    expect("layer");
    std::size_t idx = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    in >> idx >> rows >> cols;
    const Eigen::Index want_rows = l < depth ? c.layer_widths[l] : 1;
    if (idx != l || rows != want_rows || cols != prev) throw FormatError("model file: inconsistent layer dimensions");
    Layer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index k = 0; k < cols; ++k) in >> layer.weights(r, k);
    expect("bias");
    for (Eigen::Index r = 0; r < rows; ++r) in >> layer.bias(r);
    model.layers.push_back(std::move(layer));
    prev = rows;
  }
  expect("end");
  if (!in) throw FormatError("model file: truncated");
  for (Eigen::Index i = 0; i < m; ++i)
    if (!(model.feature_sds(i) > 0.0)) throw FormatError("model file: non-positive feature sd");
  return model;
}

inline void save_model(const std::string& path, const ClassifierModel& model) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file " + path);
  write_model(out, model);
}

inline ClassifierModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read model file " + path);
  return read_model(in);
}

}  // namespace adnorm::mlp
