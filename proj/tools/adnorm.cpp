// adnorm command-line entry point. Every subcommand reads its settings from
// the `[<section>]` of --config, lets flags override them, writes into --out,
// and leaves a manifest.txt that reproduces the run when passed as --config.

#include <adnorm/adnorm.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace adnorm;

namespace {

struct Global {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> preset;
  unsigned threads = 0;
};

/// Flags bound to config keys of one section.
struct Flags {
  std::string section;
  std::vector<std::pair<CLI::Option*, std::string>> bound;
  std::map<std::string, std::string> storage;

  void opt(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    bound.emplace_back(app->add_option("--" + flag, storage[key], help), key);
  }
  void apply(Config& c) const {
    for (const auto& [o, key] : bound)
      if (o->count() > 0) c.set(section + "." + key, storage.at(key));
  }
};

class Run {
 public:
  Run(std::string command, std::string section, const Global& g, Config cfg)
      : command_(std::move(command)), section_(std::move(section)), g_(g), cfg_(std::move(cfg)) {
    if (g_.out.empty()) throw ConfigError("--out", "an output directory is required");
    out_ = g_.out;
    fs::create_directories(out_);
  }

  const Config& cfg() const { return cfg_; }
  std::string key(const std::string& name) const { return section_ + "." + name; }
  const fs::path& out() const { return out_; }

  std::string required(const std::string& name) const {
    const std::string v = cfg_.get_string(key(name), "");
    if (v.empty()) throw ConfigError(key(name), "is required");
    return v;
  }

  /// Rejects keys of this section that no reader consumed.
  void check_unused() const {
    const std::string prefix = section_ + ".";
    for (const auto& k : cfg_.unused_keys())
      if (k.rfind(prefix, 0) == 0) throw ConfigError(k, "unknown setting for '" + command_ + "'");
  }

  std::ofstream output(const std::string& rel) {
    outputs_.push_back(rel);
    return io::open_output(out_ / rel);
  }
  void note(const std::string& rel) { outputs_.push_back(rel); }

  void finish(const Config& effective, std::uint64_t seed) {
    Manifest m;
    m.command = command_;
    m.section = section_;
    m.effective = effective;
    m.seed = seed;
    m.threads = thread_limit();
    m.out = out_.string();
    m.outputs = outputs_;
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    m.write(out_ / "manifest.txt");
  }

 private:
  std::string command_;
  std::string section_;
  Global g_;
  Config cfg_;
  fs::path out_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void log_line(const std::string& s) { std::cerr << "[adnorm] " << s << "\n"; }

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + io::fmt(v[i]);
  return s;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

grf::GridSpec parse_grid(const Config& c, const std::string& key, const std::string& fallback) {
  try {
    return grf::GridSpec::parse(c.get_string(key, fallback));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key, e.what());
  }
}

std::vector<study::FeatureRecord> load_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  return study::read_features_csv(in, path);
}

// ---------------------------------------------------------------------------

void cmd_simulate(Run& r) {
  const Config& c = r.cfg();
  const grf::GridSpec grid = parse_grid(c, r.key("grid"), "30x30");
  grf::MaternParams params;
  params.sigma2 = c.get_double(r.key("sigma2"), 1.0);
  params.beta = c.get_double(r.key("beta"), 0.1);
  params.nu = c.get_double(r.key("nu"), 0.5);
  const double p = c.get_double(r.key("p"), 1.0);
  const long long count = c.get_int(r.key("count"), 10);
  const std::uint64_t seed = c.get_u64(r.key("seed"), 1);
  const bool csv = c.get_bool(r.key("csv"), false);
  r.check_unused();
  try {
    params.validate();
  } catch (const Error& e) {
    throw ConfigError(r.key("beta"), e.what());
  }
  if (count < 1) throw ConfigError(r.key("count"), "must be >= 1");
  if (!(p >= 1.0)) throw ConfigError(r.key("p"), "must be >= 1 (1 keeps the Gaussian field)");

  const grf::FieldSampler sampler(grid, params);
  const auto fields = sampler.draw(static_cast<std::size_t>(count), seed);
  std::vector<grf::FieldSample> samples(fields.size());
  for (std::size_t k = 0; k < fields.size(); ++k) {
    auto& s = samples[k];
    s.grid = grid;
    s.values = p > 1.0 ? grf::signed_power(fields[k], p) : fields[k];
    s.meta = grf::SampleMeta{params.beta, params.nu, p, seed, p > 1.0 ? grf::Label::H1 : grf::Label::H0};
  }
  {
    auto f = r.output("samples.grfs");
    io::write_samples(f, grid, samples);
  }
  if (csv) {
    auto f = r.output("samples.csv");
    io::write_samples_csv(f, samples);
  }
  Config eff;
  eff.set(r.key("grid"), grid.describe());
  eff.set(r.key("sigma2"), io::fmt(params.sigma2));
  eff.set(r.key("beta"), io::fmt(params.beta));
  eff.set(r.key("nu"), io::fmt(params.nu));
  eff.set(r.key("p"), io::fmt(p));
  eff.set(r.key("count"), std::to_string(count));
  eff.set(r.key("seed"), std::to_string(seed));
  eff.set(r.key("csv"), csv ? "true" : "false");
  r.finish(eff, seed);
}

void cmd_features(Run& r) {
  const std::string input = r.required("input");
  r.check_unused();
  const auto samples = io::load_samples(input);
  std::vector<study::FeatureRecord> recs(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto& s = samples[i];
    auto& rec = recs[i];
    rec.info.id = i;
    rec.info.beta = s.meta.beta;
    rec.info.nu = s.meta.nu;
    rec.info.p = s.meta.exponent_p;
    rec.info.label = static_cast<int>(s.meta.label);
    rec.info.seed = s.meta.seed;
    rec.info.replicate = i;
    rec.features = normstats::features(s.values).as_vector();
  });
  {
    auto f = r.output("features.csv");
    study::write_features_csv(f, recs);
  }
  Config eff;
  eff.set(r.key("input"), input);
  r.finish(eff, 0);
}

void cmd_train(Run& r) {
  const Config& c = r.cfg();
  const std::string input = r.required("input");
  const std::string model_name = c.get_string(r.key("model"), "model1");
  mlp::NetworkConfig nc;
  try {
    nc = mlp::preset(model_name);
  } catch (const DomainError& e) {
    throw ConfigError(r.key("model"), e.what());
  }
  nc.epochs = static_cast<int>(c.get_int(r.key("epochs"), nc.epochs));
  nc.batch_size = static_cast<int>(c.get_int(r.key("batch_size"), nc.batch_size));
  nc.learning_rate = c.get_double(r.key("learning_rate"), nc.learning_rate);
  const std::uint64_t seed = c.get_u64(r.key("seed"), 1);
  nc.seed = derive_seed(seed, {fnv1a(model_name)});
  r.check_unused();
  try {
    nc.validate();
  } catch (const Error& e) {
    throw ConfigError(r.key("model"), e.what());
  }
  const auto recs = load_features(input);
  const mlp::Dataset data = study::to_dataset(recs);
  if (static_cast<std::size_t>(nc.batch_size) > data.size()) throw ConfigError(r.key("batch_size"), "exceeds the dataset size");
  log_line("training " + model_name + " on " + std::to_string(data.size()) + " samples");
  const mlp::ClassifierModel model = mlp::train(nc, data);
  {
    auto f = r.output("classifier.model");
    mlp::write_model(f, model);
  }
  {
    auto f = r.output("loss_history.csv");
    f << "epoch,loss\n";
    for (std::size_t i = 0; i < model.loss_history.size(); ++i)
      f << (i + 1) * 10 << "," << io::fmt(model.loss_history[i]) << "\n";
  }
  Config eff;
  eff.set(r.key("input"), input);
  eff.set(r.key("model"), model_name);
  eff.set(r.key("epochs"), std::to_string(nc.epochs));
  eff.set(r.key("batch_size"), std::to_string(nc.batch_size));
  eff.set(r.key("learning_rate"), io::fmt(nc.learning_rate));
  eff.set(r.key("seed"), std::to_string(seed));
  r.finish(eff, seed);
}

void cmd_calibrate(Run& r) {
  const Config& c = r.cfg();
  const std::string input = r.required("input");
  const std::string model_path = r.required("model");
  const double alpha = c.get_double(r.key("alpha"), 0.05);
  const double bandwidth = c.get_double(r.key("bandwidth"), cutoff::kDefaultBandwidth);
  const std::string scale_text = c.get_string(r.key("beta_scale"), "auto");
  r.check_unused();
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError(r.key("alpha"), "must be in (0,1)");
  if (!(bandwidth > 0.0)) throw ConfigError(r.key("bandwidth"), "must be positive");
  const auto recs = load_features(input);
  const mlp::ClassifierModel model = mlp::load_model(model_path);
  const auto groups = study::h0_groups(recs, study::scores(model, recs));
  if (groups.empty()) throw DomainError("calibrate: input has no H0 records");
  double scale = 0.0;
  if (scale_text == "auto") {
    scale = groups.back().first;
  } else if (scale_text != "raw") {
    try {
      scale = std::stod(scale_text);
    } catch (const std::exception&) {
      throw ConfigError(r.key("beta_scale"), "expected auto, raw or a positive number");
    }
    if (!(scale > 0.0)) throw ConfigError(r.key("beta_scale"), "expected auto, raw or a positive number");
  }
  const cutoff::CutoffCurve curve = cutoff::fit_curve(groups, alpha, bandwidth, scale);
  {
    auto f = r.output("curve.csv");
    cutoff::write_curve(f, curve);
  }
  Config eff;
  eff.set(r.key("input"), input);
  eff.set(r.key("model"), model_path);
  eff.set(r.key("alpha"), io::fmt(alpha));
  eff.set(r.key("bandwidth"), io::fmt(bandwidth));
  eff.set(r.key("beta_scale"), scale_text);
  r.finish(eff, 0);
}

void cmd_evaluate(Run& r) {
  const Config& c = r.cfg();
  const std::string input = r.required("input");
  const std::string model_path = r.required("model");
  const std::string curve_path = r.required("curve");
  const std::string method = c.get_string(r.key("method"), "nn");
  r.check_unused();
  const auto recs = load_features(input);
  const study::CalibratedClassifier cc{method, mlp::load_model(model_path), cutoff::load_curve(curve_path)};
  const std::vector<double> s = study::scores(cc.model, recs);
  study::TableBuilder tb;
  {
    auto f = r.output("decisions.csv");
    f << "id,beta,p,label,score,cutoff,reject\n";
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const auto& rec = recs[i];
      const double cut = cutoff::predict_cutoff(cc.curve, rec.info.beta);
      const bool reject = s[i] > cut;
      tb.add(rec.info.beta, rec.info.label == 0 ? 1.0 : rec.info.p, method, reject);
      f << rec.info.id << "," << io::fmt(rec.info.beta) << "," << io::fmt(rec.info.p) << "," << rec.info.label << ","
        << io::fmt(s[i]) << "," << io::fmt(cut) << "," << (reject ? 1 : 0) << "\n";
    }
  }
  {
    auto f = r.output("rejection_rates.csv");
    study::write_eval_table(f, tb.table());
  }
  Config eff;
  eff.set(r.key("input"), input);
  eff.set(r.key("model"), model_path);
  eff.set(r.key("curve"), curve_path);
  eff.set(r.key("method"), method);
  r.finish(eff, 0);
}

void cmd_study(Run& r, const Global& g) {
  const Config& c = r.cfg();
  const std::string preset = c.get_string(r.key("preset"), g.preset.value_or("desk"));
  study::StudyConfig sc = study::StudyConfig::from_preset(preset);
  sc.apply(c, "study");
  r.check_unused();
  sc.validate();
  const auto o = study::run_study(sc, r.out(), log_line);
  for (const auto& f : o.files) r.note(f);
  // Headline averages, one line per (table, method, hypothesis).
  {
    auto f = r.output("summary.csv");
    f << "table,method,hypothesis,mean_rejection_rate\n";
    const auto emit = [&](const std::string& name, const study::EvalTable& t) {
      std::map<std::pair<std::string, double>, bool> seen;
      for (const auto& row : t) {
        if (seen[{row.method, row.p}]) continue;
        seen[{row.method, row.p}] = true;
        f << name << "," << row.method << "," << (row.p == 1.0 ? std::string("H0") : "p=" + io::fmt(row.p)) << ","
          << io::fmt(study::mean_rate(t, row.method, row.p)) << "\n";
      }
    };
    emit("type1_known", o.results.type1_known);
    emit("power_by_p", o.results.power_by_p);
    emit("type1_estimated", o.results.type1_estimated);
    emit("classical_type1", o.results.classical_type1);
    for (const auto& [name, t] : o.results.sensitivity) emit("sensitivity_" + name, t);
  }
  Config eff;
  sc.store(eff, "study");
  r.finish(eff, sc.seed);
}

void cmd_classical(Run& r) {
  const Config& c = r.cfg();
  study::ClassicalRunConfig rc;
  rc.grid = parse_grid(c, r.key("grid"), "30x30");
  rc.nu = c.get_double(r.key("nu"), rc.nu);
  rc.betas = c.get_doubles(r.key("betas"), {});
  rc.n = static_cast<int>(c.get_int(r.key("n"), rc.n));
  rc.n_null = static_cast<int>(c.get_int(r.key("n_null"), rc.n_null));
  rc.alpha = c.get_double(r.key("alpha"), rc.alpha);
  rc.seed = c.get_u64(r.key("seed"), rc.seed);
  r.check_unused();
  if (!(rc.nu > 0.0)) throw ConfigError(r.key("nu"), "must be positive");
  if (rc.n < 1) throw ConfigError(r.key("n"), "must be >= 1");
  if (rc.n_null < 1000) throw ConfigError(r.key("n_null"), "must be >= 1000");
  if (!(rc.alpha > 0.0 && rc.alpha < 1.0)) throw ConfigError(r.key("alpha"), "must be in (0,1)");
  for (double b : rc.betas)
    if (!(b >= 0.0)) throw ConfigError(r.key("betas"), "must be >= 0");
  const auto t = study::classical_type1(rc, r.out() / "classical_cache.csv");
  r.note("classical_cache.csv");
  {
    auto f = r.output("classical_type1.csv");
    study::write_eval_table(f, t);
  }
  Config eff;
  eff.set(r.key("grid"), rc.grid.describe());
  eff.set(r.key("nu"), io::fmt(rc.nu));
  if (!rc.betas.empty()) eff.set(r.key("betas"), join(rc.betas));
  eff.set(r.key("n"), std::to_string(rc.n));
  eff.set(r.key("n_null"), std::to_string(rc.n_null));
  eff.set(r.key("alpha"), io::fmt(rc.alpha));
  eff.set(r.key("seed"), std::to_string(rc.seed));
  r.finish(eff, rc.seed);
}

void cmd_depnorm(Run& r) {
  const Config& c = r.cfg();
  const std::string input = r.required("input");
  const double alpha = c.get_double(r.key("alpha"), 0.05);
  const long long window = c.get_int(r.key("window"), 0);
  r.check_unused();
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError(r.key("alpha"), "must be in (0,1)");
  if (window < 0) throw ConfigError(r.key("window"), "must be >= 0 (0 selects the default)");
  const auto samples = io::load_samples(input);
  std::vector<depnorm::DepTestResult> res(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto& s = samples[i];
    res[i] = depnorm::dep_normality_test(s.values, s.grid.rows(), s.grid.cols(), alpha, static_cast<int>(window));
  });
  std::size_t rejections = 0;
  {
    auto f = r.output("depnorm.csv");
    f << "sample_id,";
    depnorm::write_result_header(f);
    for (std::size_t i = 0; i < res.size(); ++i) {
      f << i << ",";
      depnorm::write_result_row(f, res[i]);
      rejections += res[i].reject;
    }
  }
  {
    auto f = r.output("depnorm_summary.csv");
    f << "n,rejections,rejection_rate\n";
    f << res.size() << "," << rejections << ","
      << io::fmt(res.empty() ? 0.0 : static_cast<double>(rejections) / static_cast<double>(res.size())) << "\n";
  }
  Config eff;
  eff.set(r.key("input"), input);
  eff.set(r.key("alpha"), io::fmt(alpha));
  eff.set(r.key("window"), std::to_string(window));
  r.finish(eff, 0);
}

void cmd_mle(Run& r) {
  const Config& c = r.cfg();
  const std::string input = r.required("input");
  const std::string nu_text = c.get_string(r.key("nu"), "0.5");
  r.check_unused();
  mle::NuMode mode = mle::NuMode::estimated();
  if (nu_text != "free") {
    double nu = 0.0;
    try {
      nu = std::stod(nu_text);
    } catch (const std::exception&) {
      throw ConfigError(r.key("nu"), "expected 'free' or a positive number");
    }
    if (!(nu > 0.0)) throw ConfigError(r.key("nu"), "expected 'free' or a positive number");
    mode = mle::NuMode::fixed(nu);
  }
  const auto samples = io::load_samples(input);
  if (samples.empty()) throw DomainError("mle-fit: input holds no samples");
  const grf::GridSpec grid = samples.front().grid;
  const mle::LikelihoodEngine engine(grid);
  const double diameter = grid.max_distance();
  std::vector<mle::FitResult> fits(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) { fits[i] = mle::fit(engine, diameter, samples[i].values, mode); });
  {
    auto f = r.output("fits.csv");
    mle::write_fit_header(f);
    for (std::size_t i = 0; i < fits.size(); ++i) mle::write_fit_row(f, i, fits[i]);
  }
  Config eff;
  eff.set(r.key("input"), input);
  eff.set(r.key("nu"), nu_text);
  r.finish(eff, 0);
}

void cmd_climate_synth(Run& r) {
  const Config& c = r.cfg();
  climate::SynthConfig sc;
  const grf::GridSpec grid = parse_grid(c, r.key("grid"), "sphere:32x64");
  if (!grid.is_sphere()) throw ConfigError(r.key("grid"), "climate cubes live on a sphere grid");
  sc.lat_count = grid.rows();
  sc.lon_count = grid.cols();
  sc.T = static_cast<int>(c.get_int(r.key("T"), sc.T));
  sc.start_month = static_cast<int>(c.get_int(r.key("start_month"), sc.start_month));
  sc.kind = c.get_string(r.key("kind"), sc.kind);
  sc.p = c.get_double(r.key("p"), sc.p);
  sc.range_km = c.get_double(r.key("range_km"), sc.range_km);
  sc.nu = c.get_double(r.key("nu"), sc.nu);
  sc.seasonal = c.get_bool(r.key("seasonal"), sc.seasonal);
  sc.arma = c.get_bool(r.key("arma"), sc.arma);
  sc.seed = c.get_u64(r.key("seed"), sc.seed);
  const bool csv = c.get_bool(r.key("csv"), false);
  r.check_unused();
  try {
    sc.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.key(e.key()), e.detail());
  }
  const auto cube = climate::synthesize(sc);
  {
    auto f = r.output("cube.gts");
    climate::write_series(f, cube);
  }
  if (csv) {
    auto f = r.output("cube.csv");
    climate::write_series_csv(f, cube);
  }
  Config eff;
  eff.set(r.key("grid"), grid.describe());
  eff.set(r.key("T"), std::to_string(sc.T));
  eff.set(r.key("start_month"), std::to_string(sc.start_month));
  eff.set(r.key("kind"), sc.kind);
  eff.set(r.key("p"), io::fmt(sc.p));
  eff.set(r.key("range_km"), io::fmt(sc.range_km));
  eff.set(r.key("nu"), io::fmt(sc.nu));
  eff.set(r.key("seasonal"), sc.seasonal ? "true" : "false");
  eff.set(r.key("arma"), sc.arma ? "true" : "false");
  eff.set(r.key("seed"), std::to_string(sc.seed));
  eff.set(r.key("csv"), csv ? "true" : "false");
  r.finish(eff, sc.seed);
}

void cmd_climate_bank(Run& r, const std::string& section) {
  climate::BankConfig bc;
  bc.apply(r.cfg(), section);
  r.check_unused();
  try {
    bc.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.key(e.key()), e.detail());
  }
  const auto bank = climate::train_bank(bc, log_line);
  bank.save(r.out());
  r.note("bank.csv");
  for (const auto& e : bank.entries()) {
    const std::string s = climate::ClassifierBank::stem(e.block, e.nu);
    for (const char* suffix : {"_nn.model", "_nn_curve.csv", "_linear.model", "_linear_curve.csv"}) r.note(s + suffix);
  }
  Config eff;
  bc.store(eff, section);
  r.finish(eff, bc.seed);
}

void cmd_climate_run(Run& r) {
  const Config& c = r.cfg();
  const std::string input = r.required("input");
  const std::string bank_dir = r.required("bank");
  std::vector<int> blocks;
  for (double b : c.get_doubles(r.key("blocks"), {1, 2, 4, 8})) {
    if (b != std::floor(b) || b < 1) throw ConfigError(r.key("blocks"), "expected positive integers");
    blocks.push_back(static_cast<int>(b));
  }
  const double alpha = c.get_double(r.key("alpha"), 0.05);
  const int max_p = static_cast<int>(c.get_int(r.key("max_p"), 3));
  const int max_q = static_cast<int>(c.get_int(r.key("max_q"), 2));
  const bool divide_by_sd = c.get_bool(r.key("divide_by_sd"), true);
  r.check_unused();
  if (max_p < 0 || max_p > 10) throw ConfigError(r.key("max_p"), "must be in 0..10");
  if (max_q < 0 || max_q > 10) throw ConfigError(r.key("max_q"), "must be in 0..10");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError(r.key("alpha"), "must be in (0,1)");
  if (!divide_by_sd) log_line("dividing by the monthly variance instead of the standard deviation");

  const auto series = climate::load_series(input);
  for (int b : blocks) {
    if (series.lat_count % b != 0 || series.lon_count % b != 0)
      throw ConfigError(r.key("blocks"), "block " + std::to_string(b) + " does not divide the grid");
  }
  const auto bank = climate::ClassifierBank::load(bank_dir);
  log_line("deseasonalizing");
  const auto ds = climate::deseasonalize(series, divide_by_sd);
  log_line("ARMA whitening");
  const auto rc = climate::arma_whiten(ds.residuals, max_p, max_q);
  {
    auto f = r.output("arma_orders.csv");
    f << "location,p,q,ar,ma,sigma2,bic\n";
    for (std::size_t i = 0; i < rc.models.size(); ++i) {
      const auto& m = rc.models[i];
      const auto coef = [](const std::vector<double>& v) {
        std::string s;
        for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ";" : "") + io::fmt(v[k]);
        return s;
      };
      f << i << "," << m.p << "," << m.q << "," << coef(m.ar) << "," << coef(m.ma) << "," << io::fmt(m.sigma2) << ","
        << io::fmt(m.bic) << "\n";
    }
  }
  const auto res = climate::run_normality_scan(rc.eta, bank, blocks, alpha, log_line);
  {
    auto f = r.output("rejection_rates.csv");
    climate::write_scan_table(f, res.table);
  }
  {
    auto f = r.output("decisions.csv");
    climate::write_scan_log(f, res.log);
  }
  Config eff;
  eff.set(r.key("input"), input);
  eff.set(r.key("bank"), bank_dir);
  eff.set(r.key("blocks"), join(blocks));
  eff.set(r.key("alpha"), io::fmt(alpha));
  eff.set(r.key("max_p"), std::to_string(max_p));
  eff.set(r.key("max_q"), std::to_string(max_q));
  eff.set(r.key("divide_by_sd"), divide_by_sd ? "true" : "false");
  r.finish(eff, 0);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive-cutoff normality testing for spatially dependent fields"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--config", g.config_path, "config file (a previous manifest.txt works)");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--preset", g.preset, "study scale: desk or paper");
  app.add_option("--threads", g.threads, "worker threads (default: all cores)");
  app.set_version_flag("--version", kVersion);

  std::map<std::string, Flags> flags;
  std::map<CLI::App*, std::string> section_of_app;
  const auto sub = [&](CLI::App* parent, const std::string& name, const std::string& section, const std::string& help) {
    CLI::App* s = parent->add_subcommand(name, help);
    flags[section].section = section;
    section_of_app[s] = section;
    return s;
  };

  auto* simulate = sub(&app, "simulate", "simulate", "draw Matérn fields (optionally signed-power) into a GRFS1 file");
  auto& fs_ = flags["simulate"];
  fs_.opt(simulate, "grid", "grid", "RxC or sphere:LATxLON");
  fs_.opt(simulate, "beta", "beta", "range");
  fs_.opt(simulate, "nu", "nu", "smoothness");
  fs_.opt(simulate, "sigma2", "sigma2", "variance");
  fs_.opt(simulate, "p", "p", "signed-power exponent (1 = Gaussian)");
  fs_.opt(simulate, "count", "count", "number of fields");
  fs_.opt(simulate, "csv", "csv", "also write samples.csv (true/false)");

  auto* features = sub(&app, "features", "features", "normality statistics for every field in a GRFS1 file");
  flags["features"].opt(features, "input", "input", "GRFS1 file");

  auto* train = sub(&app, "train", "train", "train a classifier on a features CSV");
  auto& ft = flags["train"];
  ft.opt(train, "input", "input", "features CSV");
  ft.opt(train, "model", "model", "architecture preset (model1..model6, linear)");
  ft.opt(train, "epochs", "epochs", "epochs");
  ft.opt(train, "batch-size", "batch_size", "mini-batch size");
  ft.opt(train, "learning-rate", "learning_rate", "Adam step size");

  auto* calibrate = sub(&app, "calibrate", "calibrate", "fit the range-adaptive cutoff curve from H0 records");
  auto& fc = flags["calibrate"];
  fc.opt(calibrate, "input", "input", "features CSV");
  fc.opt(calibrate, "model", "model", "classifier file");
  fc.opt(calibrate, "alpha", "alpha", "nominal level");
  fc.opt(calibrate, "bandwidth", "bandwidth", "kernel bandwidth");
  fc.opt(calibrate, "beta-scale", "beta_scale", "auto, raw, or a number");

  auto* evaluate = sub(&app, "evaluate", "evaluate", "decisions and rejection rates for a features CSV");
  auto& fe = flags["evaluate"];
  fe.opt(evaluate, "input", "input", "features CSV");
  fe.opt(evaluate, "model", "model", "classifier file");
  fe.opt(evaluate, "curve", "curve", "cutoff curve CSV");
  fe.opt(evaluate, "method", "method", "method label in the output table");

  auto* study_cmd = sub(&app, "study", "study", "full simulation study (train, calibrate, evaluate)");
  auto& fst = flags["study"];
  for (const char* k : {"grid", "nu_train", "nu_test", "n_beta_train", "n_beta_test", "beta_max", "p_train", "p_test",
                        "n_sample", "h0_multiplier", "alpha", "nn_model", "sensitivity_models", "epochs", "batch_size",
                        "bandwidth", "raw_beta_scale", "beta_mode", "estimated_per_beta", "classical", "n_null",
                        "depnorm", "depnorm_window"}) {
    std::string flag = k;
    std::replace(flag.begin(), flag.end(), '_', '-');
    fst.opt(study_cmd, flag, k, std::string("study setting ") + k);
  }

  auto* classical = sub(&app, "classical-type1", "classical-type1", "classical tests' rejection rates under H0");
  auto& fcl = flags["classical-type1"];
  fcl.opt(classical, "grid", "grid", "grid");
  fcl.opt(classical, "nu", "nu", "smoothness");
  fcl.opt(classical, "betas", "betas", "comma-separated ranges (default 0 and the maximum)");
  fcl.opt(classical, "n", "n", "fields per range");
  fcl.opt(classical, "n-null", "n_null", "i.i.d. draws for critical values");
  fcl.opt(classical, "alpha", "alpha", "nominal level");

  auto* dep = sub(&app, "depnorm-test", "depnorm-test", "dependence-adjusted moment test on each field");
  auto& fd = flags["depnorm-test"];
  fd.opt(dep, "input", "input", "GRFS1 file");
  fd.opt(dep, "alpha", "alpha", "nominal level");
  fd.opt(dep, "window", "window", "Bartlett window (0 = default)");

  auto* mlefit = sub(&app, "mle-fit", "mle-fit", "Matérn maximum-likelihood fit per field");
  auto& fm = flags["mle-fit"];
  fm.opt(mlefit, "input", "input", "GRFS1 file");
  fm.opt(mlefit, "nu", "nu", "fixed smoothness or 'free'");

  CLI::App* climate_cmd = app.add_subcommand("climate", "gridded monthly series pipeline");
  climate_cmd->require_subcommand(1);
  auto* csynth = sub(climate_cmd, "synth", "climate-synth", "synthetic seasonal ARMA cube");
  auto& fcs = flags["climate-synth"];
  for (const char* k : {"grid", "T", "start_month", "kind", "p", "range_km", "nu", "seasonal", "arma", "csv"}) {
    std::string flag = k;
    std::replace(flag.begin(), flag.end(), '_', '-');
    fcs.opt(csynth, flag, k, std::string("synthesis setting ") + k);
  }
  auto* cbank = sub(climate_cmd, "bank", "climate-bank", "train the (block, smoothness) classifier bank");
  auto& fcb = flags["climate-bank"];
  for (const char* k : {"grid", "blocks", "nu_keys", "n_beta_train", "p_train", "n_sample", "alpha", "nn_model",
                        "epochs", "batch_size", "bandwidth"}) {
    std::string flag = k;
    std::replace(flag.begin(), flag.end(), '_', '-');
    fcb.opt(cbank, flag, k, std::string("bank setting ") + k);
  }
  auto* crun = sub(climate_cmd, "run", "climate-run", "deseasonalize, whiten, and scan a cube");
  auto& fcr = flags["climate-run"];
  fcr.opt(crun, "input", "input", "GTS1 or CSV cube");
  fcr.opt(crun, "bank", "bank", "bank directory");
  fcr.opt(crun, "blocks", "blocks", "aggregation blocks");
  fcr.opt(crun, "alpha", "alpha", "nominal level");
  fcr.opt(crun, "max-p", "max_p", "largest AR order");
  fcr.opt(crun, "max-q", "max_q", "largest MA order");
  fcr.opt(crun, "divide-by-sd", "divide_by_sd", "scale by the monthly sd (true) or variance (false)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  if (chosen == climate_cmd) chosen = climate_cmd->get_subcommands().front();
  const std::string section = section_of_app.at(chosen);
  const std::string command = chosen == csynth || chosen == cbank || chosen == crun
                                  ? "climate " + chosen->get_name()
                                  : chosen->get_name();

  try {
    if (g.threads > 0) set_thread_limit(g.threads);
    Config cfg = g.config_path.empty() ? Config{} : Config::load(g.config_path);
    flags.at(section).apply(cfg);
    if (g.seed) {
      if (section == "features" || section == "calibrate" || section == "evaluate" || section == "depnorm-test" ||
          section == "mle-fit" || section == "climate-run") {
        throw ConfigError("--seed", "'" + command + "' is deterministic and takes no seed");
      }
      cfg.set(section + ".seed", std::to_string(*g.seed));
    }
    if (g.preset) {
      if (section != "study") throw ConfigError("--preset", "applies to 'study' only");
      cfg.set("study.preset", *g.preset);
    }
    Run run(command, section, g, cfg);
    if (section == "simulate") cmd_simulate(run);
    else if (section == "features") cmd_features(run);
    else if (section == "train") cmd_train(run);
    else if (section == "calibrate") cmd_calibrate(run);
    else if (section == "evaluate") cmd_evaluate(run);
    else if (section == "study") cmd_study(run, g);
    else if (section == "classical-type1") cmd_classical(run);
    else if (section == "depnorm-test") cmd_depnorm(run);
    else if (section == "mle-fit") cmd_mle(run);
    else if (section == "climate-synth") cmd_climate_synth(run);
    else if (section == "climate-bank") cmd_climate_bank(run, section);
    else if (section == "climate-run") cmd_climate_run(run);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
