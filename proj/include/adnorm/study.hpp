#pragma once

// Simulation harness: labelled Matérn / signed-power datasets, classifier
// training, adaptive cutoffs, and rejection-rate tables.

#include <adnorm/config.hpp>
#include <adnorm/cutoff.hpp>
#include <adnorm/depnorm.hpp>
#include <adnorm/errors.hpp>
#include <adnorm/grf.hpp>
#include <adnorm/io.hpp>
#include <adnorm/mle.hpp>
#include <adnorm/mlp.hpp>
#include <adnorm/normstats.hpp>
#include <adnorm/parallel.hpp>
#include <adnorm/rng.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace adnorm::study {

enum class Split { train = 0, test = 1 };
enum class BetaMode { known, estimated, both };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }
inline std::string to_string(BetaMode m) {
  switch (m) {
    case BetaMode::known: return "known";
    case BetaMode::estimated: return "estimated";
    case BetaMode::both: return "both";
  }
  return "known";
}

/// Number of mle::fit calls made by the harness.
inline std::atomic<std::uint64_t>& mle_fit_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

struct StudyConfig {
  std::string preset = "desk";
  grf::GridSpec grid = grf::GridSpec::unit_square(30, 30);
  double nu_train = 0.5;
  double nu_test = 0.5;
  int n_beta_train = 10;
  int n_beta_test = 15;
  double beta_max = 0.0;  // 0: derived from the effective range
  std::vector<double> p_train{1.2, 1.4, 1.6, 1.8};
  std::vector<double> p_test{1.2, 1.6, 2.0};
  int n_sample = 50;
  int h0_multiplier = 0;  // H0 per beta = n_sample * multiplier; 0: size of the split's p set
  double alpha = 0.05;
  std::string nn_model = "model1";
  std::vector<std::string> sensitivity_models;
  int epochs = 100;
  int batch_size = 128;
  double bandwidth = cutoff::kDefaultBandwidth;
  bool raw_beta_scale = false;
  BetaMode beta_mode = BetaMode::known;
  int estimated_per_beta = 50;  // H0 test samples per beta refitted by MLE
  bool classical = true;
  int n_null = 2000;
  bool depnorm = true;
  int depnorm_window = 0;
  std::uint64_t seed = 1;

  static StudyConfig desk() { return StudyConfig{}; }

  static StudyConfig paper() {
    StudyConfig c;
    c.preset = "paper";
    c.grid = grf::GridSpec::unit_square(60, 60);
    c.n_beta_train = 30;
    c.n_beta_test = 50;
    c.p_test = {1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0};
    c.n_sample = 200;
    c.estimated_per_beta = 200;
    c.n_null = 10000;
    return c;
  }

  static StudyConfig from_preset(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw ConfigError("preset", "unknown preset '" + name + "' (expected desk or paper)");
  }

  double effective_range() const { return grid.max_distance() * 0.7 / std::sqrt(2.0); }
  double resolved_beta_max() const { return beta_max > 0.0 ? beta_max : grf::beta_max(nu_train, effective_range()); }

  const std::vector<double>& p_set(Split s) const { return s == Split::train ? p_train : p_test; }
  int beta_count(Split s) const { return s == Split::train ? n_beta_train : n_beta_test; }

  /// Equally spaced betas from 0 to beta_max inclusive.
  std::vector<double> beta_grid(Split s) const {
    const int n = beta_count(s);
    const double top = resolved_beta_max();
    std::vector<double> b(static_cast<std::size_t>(n));
    for (int g = 0; g < n; ++g) b[static_cast<std::size_t>(g)] = n == 1 ? 0.0 : top * g / (n - 1);
    return b;
  }

  std::size_t h0_per_beta(Split s) const {
    const int mult = h0_multiplier > 0 ? h0_multiplier : static_cast<int>(p_set(s).size());
    return static_cast<std::size_t>(n_sample) * static_cast<std::size_t>(mult);
  }

  double nu_for(Split s) const { return s == Split::train ? nu_train : nu_test; }

  void validate() const {
    const auto bad = [](const std::string& key, const std::string& msg) { throw ConfigError(key, msg); };
    if (!(nu_train > 0.0)) bad("nu_train", "must be positive");
    if (!(nu_test > 0.0)) bad("nu_test", "must be positive");
    if (n_beta_train < 1) bad("n_beta_train", "must be >= 1");
    if (n_beta_test < 1) bad("n_beta_test", "must be >= 1");
    if (!(beta_max >= 0.0)) bad("beta_max", "must be >= 0");
    for (double p : p_train)
      if (!(p > 1.0)) bad("p_train", "exponents must exceed 1");
    for (double p : p_test)
      if (!(p > 1.0)) bad("p_test", "exponents must exceed 1");
    if (p_train.empty()) bad("p_train", "must not be empty");
    if (p_test.empty()) bad("p_test", "must not be empty");
    if (n_sample < 1) bad("n_sample", "must be >= 1");
    if (h0_multiplier < 0) bad("h0_multiplier", "must be >= 0");
    if (!(alpha > 0.0 && alpha < 1.0)) bad("alpha", "must be in (0,1)");
    if (epochs < 1) bad("epochs", "must be >= 1");
    if (batch_size < 1) bad("batch_size", "must be >= 1");
    if (!(bandwidth > 0.0)) bad("bandwidth", "must be positive");
    if (estimated_per_beta < 0) bad("estimated_per_beta", "must be >= 0");
    if (n_null < 1000) bad("n_null", "must be >= 1000");
    if (depnorm_window < 0) bad("depnorm_window", "must be >= 0");
    if (grid.size() < 25) bad("grid", "needs at least 25 locations");
    try {
      (void)mlp::preset(nn_model);
    } catch (const DomainError& e) {
      bad("nn_model", e.what());
    }
    for (const auto& m : sensitivity_models) {
      try {
        (void)mlp::preset(m);
      } catch (const DomainError& e) {
        bad("sensitivity_models", e.what());
      }
    }
    const std::size_t train_size = static_cast<std::size_t>(n_beta_train) *
                                   (h0_per_beta(Split::train) + p_train.size() * static_cast<std::size_t>(n_sample));
    if (static_cast<std::size_t>(batch_size) > train_size) bad("batch_size", "exceeds the training set size");
  }

  /// Reads `section.key` entries over this configuration.
  void apply(const Config& c, const std::string& section) {
    const auto k = [&](const char* name) { return section + "." + name; };
    const std::string grid_text = c.get_string(k("grid"), grid.describe());
    try {
      grid = grf::GridSpec::parse(grid_text);
    } catch (const Error& e) {
      throw ConfigError(k("grid"), e.what());
    }
    nu_train = c.get_double(k("nu_train"), nu_train);
    nu_test = c.get_double(k("nu_test"), nu_test);
    n_beta_train = static_cast<int>(c.get_int(k("n_beta_train"), n_beta_train));
    n_beta_test = static_cast<int>(c.get_int(k("n_beta_test"), n_beta_test));
    beta_max = c.get_double(k("beta_max"), beta_max);
    p_train = c.get_doubles(k("p_train"), p_train);
    p_test = c.get_doubles(k("p_test"), p_test);
    n_sample = static_cast<int>(c.get_int(k("n_sample"), n_sample));
    h0_multiplier = static_cast<int>(c.get_int(k("h0_multiplier"), h0_multiplier));
    alpha = c.get_double(k("alpha"), alpha);
    nn_model = c.get_string(k("nn_model"), nn_model);
    sensitivity_models = c.get_strings(k("sensitivity_models"), sensitivity_models);
    if (sensitivity_models.size() == 1 && sensitivity_models[0] == "none") sensitivity_models.clear();
    epochs = static_cast<int>(c.get_int(k("epochs"), epochs));
    batch_size = static_cast<int>(c.get_int(k("batch_size"), batch_size));
    bandwidth = c.get_double(k("bandwidth"), bandwidth);
    raw_beta_scale = c.get_bool(k("raw_beta_scale"), raw_beta_scale);
    const std::string mode = c.get_string(k("beta_mode"), to_string(beta_mode));
    if (mode == "known") beta_mode = BetaMode::known;
    else if (mode == "estimated") beta_mode = BetaMode::estimated;
    else if (mode == "both") beta_mode = BetaMode::both;
    else throw ConfigError(k("beta_mode"), "expected known, estimated or both");
    estimated_per_beta = static_cast<int>(c.get_int(k("estimated_per_beta"), estimated_per_beta));
    classical = c.get_bool(k("classical"), classical);
    n_null = static_cast<int>(c.get_int(k("n_null"), n_null));
    depnorm = c.get_bool(k("depnorm"), depnorm);
    depnorm_window = static_cast<int>(c.get_int(k("depnorm_window"), depnorm_window));
    seed = c.get_u64(k("seed"), seed);
  }

  /// Every effective setting as `section.key` entries.
  void store(Config& c, const std::string& section) const {
    const auto k = [&](const char* name) { return section + "." + name; };
    const auto list = [](const std::vector<double>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + io::fmt(v[i]);
      return s;
    };
    std::string models;
    for (std::size_t i = 0; i < sensitivity_models.size(); ++i) models += (i ? "," : "") + sensitivity_models[i];
    c.set(k("preset"), preset);
    c.set(k("grid"), grid.describe());
    c.set(k("nu_train"), io::fmt(nu_train));
    c.set(k("nu_test"), io::fmt(nu_test));
    c.set(k("n_beta_train"), std::to_string(n_beta_train));
    c.set(k("n_beta_test"), std::to_string(n_beta_test));
    c.set(k("beta_max"), io::fmt(beta_max));
    c.set(k("p_train"), list(p_train));
    c.set(k("p_test"), list(p_test));
    c.set(k("n_sample"), std::to_string(n_sample));
    c.set(k("h0_multiplier"), std::to_string(h0_multiplier));
    c.set(k("alpha"), io::fmt(alpha));
    c.set(k("nn_model"), nn_model);
    c.set(k("sensitivity_models"), models.empty() ? "none" : models);
    c.set(k("epochs"), std::to_string(epochs));
    c.set(k("batch_size"), std::to_string(batch_size));
    c.set(k("bandwidth"), io::fmt(bandwidth));
    c.set(k("raw_beta_scale"), raw_beta_scale ? "true" : "false");
    c.set(k("beta_mode"), to_string(beta_mode));
    c.set(k("estimated_per_beta"), std::to_string(estimated_per_beta));
    c.set(k("classical"), classical ? "true" : "false");
    c.set(k("n_null"), std::to_string(n_null));
    c.set(k("depnorm"), depnorm ? "true" : "false");
    c.set(k("depnorm_window"), std::to_string(depnorm_window));
    c.set(k("seed"), std::to_string(seed));
  }
};

// ---------------------------------------------------------------------------
// Dataset generation.

struct SampleInfo {
  std::size_t id = 0;
  Split split = Split::train;
  std::size_t beta_index = 0;
  double beta = 0.0;
  double nu = 0.5;
  double p = 1.0;  // 1 for H0
  int label = 0;
  std::uint64_t seed = 0;  // stream seed of this field's Gaussian draw
  std::size_t replicate = 0;  // index within its (beta, p) cell
};

/// Calls visit(info, values) for every sample of a split in a fixed order:
/// by beta, then H0, then each exponent. Samples within one (beta, p) cell
/// are visited through parallel_for; ids do not depend on the thread count.
inline void for_each_field(const StudyConfig& config, Split split,
                           const std::function<void(const SampleInfo&, std::span<const double>)>& visit) {
  const grf::DistanceTable table = config.grid.distance_table();
  const std::vector<double> betas = config.beta_grid(split);
  const std::vector<double>& ps = config.p_set(split);
  const double nu = config.nu_for(split);
  std::size_t next_id = 0;
  for (std::size_t g = 0; g < betas.size(); ++g) {
    const grf::FieldSampler sampler(config.grid, table, grf::MaternParams{1.0, betas[g], nu});
    for (std::size_t kind = 0; kind <= ps.size(); ++kind) {
      const std::size_t count = kind == 0 ? config.h0_per_beta(split) : static_cast<std::size_t>(config.n_sample);
      const double p = kind == 0 ? 1.0 : ps[kind - 1];
      const std::uint64_t stream = derive_seed(config.seed, {static_cast<std::uint64_t>(split), g, kind});
      const auto fields = sampler.draw(count, stream);
      const std::size_t first_id = next_id;
      parallel_for(count, [&](std::size_t s) {
        SampleInfo info;
        info.id = first_id + s;
        info.split = split;
        info.beta_index = g;
        info.beta = betas[g];
        info.nu = nu;
        info.p = p;
        info.label = kind == 0 ? 0 : 1;
        info.seed = derive_seed(stream, {s});
        info.replicate = s;
        if (kind == 0) {
          visit(info, fields[s]);
        } else {
          const std::vector<double> v = grf::signed_power(fields[s], p);
          visit(info, v);
        }
      });
      next_id += count;
    }
  }
}

inline std::vector<grf::FieldSample> generate_dataset(const StudyConfig& config, Split split) {
  config.validate();
  std::size_t total = 0;
  for (std::size_t g = 0; g < static_cast<std::size_t>(config.beta_count(split)); ++g)
    total += config.h0_per_beta(split) + config.p_set(split).size() * static_cast<std::size_t>(config.n_sample);
  std::vector<grf::FieldSample> out(total);
  for_each_field(config, split, [&](const SampleInfo& info, std::span<const double> v) {
    grf::FieldSample& fs = out[info.id];
    fs.grid = config.grid;
    fs.values.assign(v.begin(), v.end());
    fs.meta = grf::SampleMeta{info.beta, info.nu, info.p, info.seed, info.label ? grf::Label::H1 : grf::Label::H0};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Feature records.

struct FeatureRecord {
  SampleInfo info;
  std::vector<double> features;
  std::optional<double> beta_hat;  // MLE estimate when refitted
  std::optional<depnorm::DepTestResult> dep;
};

inline void write_features_csv(std::ostream& out, const std::vector<FeatureRecord>& records) {
  const std::size_t m = records.empty() ? 6 : records.front().features.size();
  out << "id,split,beta_index,beta,nu,p,label,seed";
  for (const auto& n : normstats::FeatureVector::names(m)) out << "," << n;
  out << "\n";
  for (const auto& r : records) {
    out << r.info.id << "," << to_string(r.info.split) << "," << r.info.beta_index << "," << io::fmt(r.info.beta)
        << "," << io::fmt(r.info.nu) << "," << io::fmt(r.info.p) << "," << r.info.label << "," << r.info.seed;
    for (double f : r.features) out << "," << io::fmt(f);
    out << "\n";
  }
}

inline std::vector<FeatureRecord> read_features_csv(std::istream& in, const std::string& what = "features CSV") {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(what + ": empty file");
  const auto header = io::split_csv(line);
  if (header.size() < 8 + 5 || header[0] != "id" || header[7] != "seed") throw FormatError(what + ": bad header");
  const std::size_t m = header.size() - 8;
  std::vector<FeatureRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = io::split_csv(line);
    if (f.size() != header.size()) throw FormatError(what + ": ragged row");
    FeatureRecord r;
    r.info.id = std::stoull(f[0]);
    r.info.split = f[1] == "train" ? Split::train : Split::test;
    r.info.beta_index = std::stoull(f[2]);
    r.info.beta = io::parse_double(f[3], what);
    r.info.nu = io::parse_double(f[4], what);
    r.info.p = io::parse_double(f[5], what);
    r.info.label = std::stoi(f[6]);
    r.info.seed = std::stoull(f[7]);
    for (std::size_t i = 0; i < m; ++i) r.features.push_back(io::parse_double(f[8 + i], what));
    out.push_back(std::move(r));
  }
  return out;
}

inline normstats::FeatureVector to_feature_vector(std::span<const double> v) {
  normstats::FeatureVector f;
  std::size_t i = 0;
  if (v.size() == 6) f.shapiro_wilk = v[i++];
  else if (v.size() != 5) throw DimensionError("feature vectors have 5 or 6 entries");
  f.lilliefors = v[i++];
  f.anderson_darling = v[i++];
  f.jarque_bera = v[i++];
  f.skewness = v[i++];
  f.kurtosis = v[i++];
  return f;
}

struct ExtractOptions {
  bool with_depnorm = false;
  int depnorm_window = 0;
  double alpha = 0.05;
  // Refit beta by MLE (nu fixed) for H0 samples with replicate < this count.
  int estimated_per_beta = 0;
  double mle_nu = 0.5;
};

/// Features (and optional depnorm / MLE results) for every sample of a split.
inline std::vector<FeatureRecord> extract(const StudyConfig& config, Split split, const ExtractOptions& opt) {
  std::size_t total = 0;
  for (int g = 0; g < config.beta_count(split); ++g)
    total += config.h0_per_beta(split) + config.p_set(split).size() * static_cast<std::size_t>(config.n_sample);
  std::vector<FeatureRecord> out(total);
  std::optional<mle::LikelihoodEngine> engine;
  if (opt.estimated_per_beta > 0) engine.emplace(config.grid);
  const double diameter = config.grid.max_distance();
  for_each_field(config, split, [&](const SampleInfo& info, std::span<const double> v) {
    FeatureRecord& r = out[info.id];
    r.info = info;
    r.features = normstats::features(v).as_vector();
    if (opt.with_depnorm) {
      r.dep = depnorm::dep_normality_test(v, config.grid.rows(), config.grid.cols(), opt.alpha, opt.depnorm_window);
    }
    if (engine && info.label == 0 && info.replicate < static_cast<std::size_t>(opt.estimated_per_beta)) {
      ++mle_fit_counter();
      const mle::FitResult fit = mle::fit(*engine, diameter, v, mle::NuMode::fixed(opt.mle_nu));
      if (fit.converged) r.beta_hat = fit.params.beta;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Training and calibration.

inline mlp::Dataset to_dataset(const std::vector<FeatureRecord>& records) {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  rows.reserve(records.size());
  for (const auto& r : records) {
    rows.push_back(r.features);
    labels.push_back(r.info.label);
  }
  return mlp::Dataset::from_rows(rows, labels);
}

inline std::vector<double> scores(const mlp::ClassifierModel& model, const std::vector<FeatureRecord>& records) {
  std::vector<double> s(records.size());
  parallel_for(records.size(), [&](std::size_t i) { s[i] = model.forward(records[i].features); });
  return s;
}

/// Per-beta H0 score groups in ascending beta order.
inline std::vector<std::pair<double, std::vector<double>>> h0_groups(const std::vector<FeatureRecord>& records,
                                                                    const std::vector<double>& s) {
  std::map<double, std::vector<double>> by_beta;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].info.label == 0) by_beta[records[i].info.beta].push_back(s[i]);
  return {by_beta.begin(), by_beta.end()};
}

struct CalibratedClassifier {
  std::string name;
  mlp::ClassifierModel model;
  cutoff::CutoffCurve curve;
};

inline mlp::NetworkConfig network_config(const std::string& preset_name, const StudyConfig& config) {
  mlp::NetworkConfig nc = mlp::preset(preset_name);
  nc.epochs = config.epochs;
  nc.batch_size = config.batch_size;
  nc.seed = derive_seed(config.seed, {fnv1a(preset_name)});
  return nc;
}

inline CalibratedClassifier train_and_calibrate(const std::string& name, const mlp::NetworkConfig& nc,
                                                const mlp::Dataset& data, const std::vector<FeatureRecord>& records,
                                                double alpha, double bandwidth, double beta_scale) {
  CalibratedClassifier c;
  c.name = name;
  c.model = mlp::train(nc, data);
  const std::vector<double> s = scores(c.model, records);
  c.curve = cutoff::fit_curve(h0_groups(records, s), alpha, bandwidth, beta_scale);
  return c;
}

struct TrainedModels {
  CalibratedClassifier nn;
  CalibratedClassifier linear;
  std::vector<CalibratedClassifier> sensitivity;
};

inline TrainedModels run_training(const StudyConfig& config, const std::vector<FeatureRecord>& train) {
  const mlp::Dataset data = to_dataset(train);
  const double scale = config.raw_beta_scale ? 0.0 : config.resolved_beta_max();
  TrainedModels t;
  t.nn = train_and_calibrate("nn", network_config(config.nn_model, config), data, train, config.alpha,
                             config.bandwidth, scale);
  t.linear = train_and_calibrate("linear", network_config("linear", config), data, train, config.alpha,
                                 config.bandwidth, scale);
  for (const auto& name : config.sensitivity_models) {
    if (name == config.nn_model) {
      CalibratedClassifier copy = t.nn;
      copy.name = name;
      t.sensitivity.push_back(std::move(copy));
    } else {
      t.sensitivity.push_back(train_and_calibrate(name, network_config(name, config), data, train, config.alpha,
                                                  config.bandwidth, scale));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Evaluation tables.

struct EvalRow {
  double beta = 0.0;
  double p = 1.0;  // 1 marks H0
  std::string method;
  std::size_t rejections = 0;
  std::size_t n = 0;
  std::size_t excluded = 0;

  double rate() const { return n ? static_cast<double>(rejections) / static_cast<double>(n) : 0.0; }
};

using EvalTable = std::vector<EvalRow>;

inline void write_eval_table(std::ostream& out, const EvalTable& table) {
  out << "beta,hypothesis,method,rejection_rate,rejections,n,excluded\n";
  for (const auto& r : table) {
    out << io::fmt(r.beta) << "," << (r.p == 1.0 ? std::string("H0") : io::fmt(r.p)) << "," << r.method << ","
        << io::fmt(r.rate()) << "," << r.rejections << "," << r.n << "," << r.excluded << "\n";
  }
}

inline EvalTable read_eval_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "beta,hypothesis,method,rejection_rate,rejections,n,excluded") {
    throw FormatError("eval table: bad header");
  }
  EvalTable t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = io::split_csv(line);
    if (f.size() != 7) throw FormatError("eval table: ragged row");
    EvalRow r;
    r.beta = io::parse_double(f[0], "eval table");
    r.p = f[1] == "H0" ? 1.0 : io::parse_double(f[1], "eval table");
    r.method = f[2];
    r.rejections = std::stoull(f[4]);
    r.n = std::stoull(f[5]);
    r.excluded = std::stoull(f[6]);
    t.push_back(std::move(r));
  }
  return t;
}

inline EvalTable load_eval_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  return read_eval_table(in);
}

/// Mean over rows (equal weight per beta) of the rejection rate for one
/// method and hypothesis; p = 0 averages every H1 exponent.
inline double mean_rate(const EvalTable& t, const std::string& method, double p) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : t) {
    if (r.method != method || r.n == 0) continue;
    const bool match = p == 0.0 ? r.p != 1.0 : r.p == p;
    if (!match) continue;
    s += r.rate();
    ++n;
  }
  return n ? s / static_cast<double>(n) : std::nan("");
}

/// Accumulates decisions into rows keyed by (beta, p, method) in first-seen order.
class TableBuilder {
 public:
  void add(double beta, double p, const std::string& method, std::optional<bool> reject) {
    EvalRow& r = row(beta, p, method);
    if (!reject) {
      ++r.excluded;
      return;
    }
    ++r.n;
    if (*reject) ++r.rejections;
  }
  EvalTable table() const { return rows_; }

 private:
  EvalRow& row(double beta, double p, const std::string& method) {
    const auto key = std::make_tuple(beta, p, method);
    auto it = index_.find(key);
    if (it != index_.end()) return rows_[it->second];
    index_[key] = rows_.size();
    rows_.push_back(EvalRow{beta, p, method, 0, 0, 0});
    return rows_.back();
  }
  std::map<std::tuple<double, double, std::string>, std::size_t> index_;
  EvalTable rows_;
};

inline bool decide(const CalibratedClassifier& c, const std::vector<double>& features, double beta) {
  return cutoff::decide(c.model.forward(features), c.curve, beta) == cutoff::Decision::reject_h0;
}

struct EvalResults {
  EvalTable type1_known;
  EvalTable power_by_p;
  EvalTable type1_estimated;
  EvalTable classical_type1;
  std::map<std::string, EvalTable> sensitivity;
};

/// Rejection tables for the test split. Known mode uses the true beta;
/// estimated mode uses the MLE refit stored in each record (missing fits are
/// counted as excluded).
inline EvalResults evaluate(const StudyConfig& config, const TrainedModels& models,
                            const std::vector<FeatureRecord>& test,
                            const std::optional<normstats::CriticalValues>& critical) {
  EvalResults res;
  TableBuilder type1;
  TableBuilder power;
  TableBuilder estimated;
  TableBuilder classical;
  std::map<std::string, TableBuilder> sens;
  const bool known = config.beta_mode != BetaMode::estimated;
  const bool est = config.beta_mode != BetaMode::known;
  for (const auto& r : test) {
    const double beta = r.info.beta;
    const double p = r.info.p;
    TableBuilder& tb = r.info.label == 0 ? type1 : power;
    if (known) {
      tb.add(beta, p, "nn", decide(models.nn, r.features, beta));
      tb.add(beta, p, "linear", decide(models.linear, r.features, beta));
      if (r.dep) tb.add(beta, p, "depnorm", r.dep->reject);
      for (const auto& s : models.sensitivity) sens[s.name].add(beta, p, s.name, decide(s, r.features, beta));
    }
    if (est && r.info.label == 0 && r.info.replicate < static_cast<std::size_t>(config.estimated_per_beta)) {
      std::optional<bool> nn;
      std::optional<bool> lin;
      if (r.beta_hat) {
        nn = decide(models.nn, r.features, *r.beta_hat);
        lin = decide(models.linear, r.features, *r.beta_hat);
      }
      estimated.add(beta, p, "nn", nn);
      estimated.add(beta, p, "linear", lin);
      // Same samples with the true beta, for a paired comparison.
      estimated.add(beta, p, "nn_known", r.beta_hat ? std::optional<bool>(decide(models.nn, r.features, beta))
                                                    : std::nullopt);
      estimated.add(beta, p, "linear_known",
                    r.beta_hat ? std::optional<bool>(decide(models.linear, r.features, beta)) : std::nullopt);
    }
    if (critical && r.info.label == 0) {
      const normstats::FeatureVector f = to_feature_vector(r.features);
      for (normstats::ClassicalTest t : normstats::kClassicalTests) {
        if (!normstats::statistic(t, f)) continue;
        classical.add(beta, p, "classical-" + normstats::to_string(t), critical->reject(t, f));
      }
    }
  }
  res.type1_known = type1.table();
  res.power_by_p = power.table();
  res.type1_estimated = estimated.table();
  res.classical_type1 = classical.table();
  for (auto& [name, tb] : sens) {
    EvalTable t = tb.table();
    std::stable_sort(t.begin(), t.end(), [](const EvalRow& a, const EvalRow& b) {
      return (a.p == 1.0) != (b.p == 1.0) ? a.p == 1.0 : false;
    });
    res.sensitivity[name] = std::move(t);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Classical tests under H0 at chosen betas (Figure-1 style inflation runs).

struct ClassicalRunConfig {
  grf::GridSpec grid = grf::GridSpec::unit_square(30, 30);
  double nu = 0.5;
  std::vector<double> betas;  // empty: {0, beta_max}
  int n = 2000;
  int n_null = 5000;
  double alpha = 0.05;
  std::uint64_t seed = 1;
};

inline EvalTable classical_type1(const ClassicalRunConfig& rc, const std::filesystem::path& cache_csv = {}) {
  if (rc.n < 1) throw ConfigError("n", "must be >= 1");
  std::vector<double> betas = rc.betas;
  if (betas.empty()) betas = {0.0, grf::beta_max(rc.nu, rc.grid.max_distance() * 0.7 / std::sqrt(2.0))};
  const auto cv = normstats::classical_critical_values(rc.grid.size(), rc.alpha, static_cast<std::size_t>(rc.n_null),
                                                       derive_seed(rc.seed, {300}), cache_csv);
  const grf::DistanceTable table = rc.grid.distance_table();
  TableBuilder tb;
  for (std::size_t g = 0; g < betas.size(); ++g) {
    const grf::FieldSampler sampler(rc.grid, table, grf::MaternParams{1.0, betas[g], rc.nu});
    const std::size_t chunk = 250;
    std::vector<normstats::FeatureVector> feats(static_cast<std::size_t>(rc.n));
    for (std::size_t first = 0; first < feats.size(); first += chunk) {
      const std::size_t count = std::min(chunk, feats.size() - first);
      const auto fields = sampler.draw(count, derive_seed(rc.seed, {301, g}), first);
      parallel_for(count, [&](std::size_t s) { feats[first + s] = normstats::features(fields[s]); });
    }
    for (normstats::ClassicalTest t : normstats::kClassicalTests) {
      for (const auto& f : feats) {
        if (!normstats::statistic(t, f)) continue;
        tb.add(betas[g], 1.0, "classical-" + normstats::to_string(t), cv.reject(t, f));
      }
    }
  }
  return tb.table();
}

// ---------------------------------------------------------------------------
// Full run.

struct StudyOutputs {
  TrainedModels models;
  EvalResults results;
  std::vector<std::string> files;  // relative to the run directory
};

inline void write_table_file(const std::filesystem::path& path, const EvalTable& t) {
  auto out = io::open_output(path);
  write_eval_table(out, t);
}

inline StudyOutputs run_study(const StudyConfig& config, const std::filesystem::path& out_dir,
                              const std::function<void(const std::string&)>& log = {}) {
  config.validate();
  const auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  std::filesystem::create_directories(out_dir);
  StudyOutputs o;
  const auto note = [&](const std::string& rel) { o.files.push_back(rel); };

  say("generating training features");
  const std::vector<FeatureRecord> train = extract(config, Split::train, {});
  {
    auto f = io::open_output(out_dir / "features_train.csv");
    write_features_csv(f, train);
    note("features_train.csv");
  }
  say("training classifiers");
  o.models = run_training(config, train);
  const auto save = [&](const CalibratedClassifier& c, const std::string& stem) {
    mlp::save_model((out_dir / "models" / (stem + ".model")).string(), c.model);
    cutoff::save_curve((out_dir / "curves" / (stem + ".csv")).string(), c.curve);
    note("models/" + stem + ".model");
    note("curves/" + stem + ".csv");
  };
  std::filesystem::create_directories(out_dir / "models");
  std::filesystem::create_directories(out_dir / "curves");
  save(o.models.nn, "nn");
  save(o.models.linear, "linear");
  for (const auto& s : o.models.sensitivity) save(s, "sensitivity_" + s.name);

  say("generating test features");
  ExtractOptions eo;
  eo.with_depnorm = config.depnorm;
  eo.depnorm_window = config.depnorm_window;
  eo.alpha = config.alpha;
  eo.estimated_per_beta = config.beta_mode == BetaMode::known ? 0 : config.estimated_per_beta;
  eo.mle_nu = config.nu_train;
  const std::vector<FeatureRecord> test = extract(config, Split::test, eo);
  {
    auto f = io::open_output(out_dir / "features_test.csv");
    write_features_csv(f, test);
    note("features_test.csv");
  }
  if (config.depnorm) {
    auto f = io::open_output(out_dir / "depnorm_test.csv");
    f << "id,";
    depnorm::write_result_header(f);
    for (const auto& r : test) {
      f << r.info.id << ",";
      depnorm::write_result_row(f, *r.dep);
    }
    note("depnorm_test.csv");
  }
  if (eo.estimated_per_beta > 0) {
    auto f = io::open_output(out_dir / "beta_estimates.csv");
    f << "id,beta,beta_hat,converged\n";
    for (const auto& r : test) {
      if (r.info.label != 0 || r.info.replicate >= static_cast<std::size_t>(eo.estimated_per_beta)) continue;
      f << r.info.id << "," << io::fmt(r.info.beta) << "," << (r.beta_hat ? io::fmt(*r.beta_hat) : "nan") << ","
        << (r.beta_hat ? 1 : 0) << "\n";
    }
    note("beta_estimates.csv");
  }

  std::optional<normstats::CriticalValues> critical;
  if (config.classical) {
    say("calibrating classical tests");
    critical = normstats::classical_critical_values(config.grid.size(), config.alpha,
                                                    static_cast<std::size_t>(config.n_null),
                                                    derive_seed(config.seed, {300}), out_dir / "classical_cache.csv");
    note("classical_cache.csv");
  }
  say("evaluating");
  o.results = evaluate(config, o.models, test, critical);
  if (config.beta_mode != BetaMode::estimated) {
    write_table_file(out_dir / "type1_known.csv", o.results.type1_known);
    write_table_file(out_dir / "power_by_p.csv", o.results.power_by_p);
    note("type1_known.csv");
    note("power_by_p.csv");
  }
  if (config.beta_mode != BetaMode::known) {
    write_table_file(out_dir / "type1_estimated.csv", o.results.type1_estimated);
    note("type1_estimated.csv");
  }
  if (config.classical) {
    write_table_file(out_dir / "classical_type1.csv", o.results.classical_type1);
    note("classical_type1.csv");
  }
  for (const auto& [name, t] : o.results.sensitivity) {
    write_table_file(out_dir / ("sensitivity_" + name + ".csv"), t);
    note("sensitivity_" + name + ".csv");
  }
  return o;
}

}  // namespace adnorm::study
