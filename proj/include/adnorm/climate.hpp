#pragma once

// Gridded monthly series: month-of-year standardisation, per-location ARMA
// whitening, block aggregation, and per-time-point normality scans with
// classifiers chosen by the estimated smoothness.

#include <adnorm/config.hpp>
#include <adnorm/errors.hpp>
#include <adnorm/grf.hpp>
#include <adnorm/io.hpp>
#include <adnorm/mle.hpp>
#include <adnorm/normstats.hpp>
#include <adnorm/parallel.hpp>
#include <adnorm/study.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace adnorm::climate {

struct GriddedSeries {
  int lat_count = 0;
  int lon_count = 0;
  int T = 0;
  int start_month = 0;        // month-of-year (0..11) of t = 0
  std::vector<double> values;  // T x M, row-major by time

  std::size_t locations() const { return static_cast<std::size_t>(lat_count) * lon_count; }
  double& at(int t, std::size_t i) { return values[static_cast<std::size_t>(t) * locations() + i]; }
  double at(int t, std::size_t i) const { return values[static_cast<std::size_t>(t) * locations() + i]; }
  std::span<const double> field(int t) const {
    return {values.data() + static_cast<std::size_t>(t) * locations(), locations()};
  }
  int month(int t) const { return (start_month + t) % 12; }
  grf::GridSpec grid() const { return grf::GridSpec::sphere(lat_count, lon_count); }

  /// Time points [first, first + count); month labels follow.
  GriddedSeries window(int first, int count) const {
    if (first < 0 || count < 1 || first + count > T) throw DomainError("gridded series: window outside the series");
    GriddedSeries w{lat_count, lon_count, count, (start_month + first) % 12, {}};
    w.values.assign(values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(first) * locations()),
                    values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(first + count) * locations()));
    return w;
  }

  void validate() const {
    if (lat_count < 1 || lon_count < 1 || T < 1) throw DimensionError("gridded series: empty dimensions");
    if (start_month < 0 || start_month > 11) throw DomainError("gridded series: start month must be 0..11");
    if (values.size() != static_cast<std::size_t>(T) * locations()) throw DimensionError("gridded series: size mismatch");
    for (double v : values)
      if (!std::isfinite(v)) throw DomainError("gridded series: non-finite value (missing values unsupported)");
  }
};

// GTS1: "GTS1", u32 lat, u32 lon, u32 T, u32 start month, T*M f64 (row-major by time).
inline void write_series(std::ostream& out, const GriddedSeries& s) {
  out.write("GTS1", 4);
  io::write_u32(out, static_cast<std::uint32_t>(s.lat_count));
  io::write_u32(out, static_cast<std::uint32_t>(s.lon_count));
  io::write_u32(out, static_cast<std::uint32_t>(s.T));
  io::write_u32(out, static_cast<std::uint32_t>(s.start_month));
  for (double v : s.values) io::write_f64(out, v);
}

inline GriddedSeries read_series(std::istream& in) {
  io::expect_magic(in, "GTS1");
  GriddedSeries s;
  s.lat_count = static_cast<int>(io::read_u32(in));
  s.lon_count = static_cast<int>(io::read_u32(in));
  s.T = static_cast<int>(io::read_u32(in));
  s.start_month = static_cast<int>(io::read_u32(in));
  const std::size_t n = static_cast<std::size_t>(s.T) * s.locations();
  if (n > (std::size_t{1} << 31)) throw FormatError("GTS1: implausible dimensions");
  s.values.resize(n);
  for (double& v : s.values) v = io::read_f64(in);
  s.validate();
  return s;
}

/// CSV form: "# lat=..,lon=..,start_month=.." then "t,v0,..,v{M-1}" rows.
inline void write_series_csv(std::ostream& out, const GriddedSeries& s) {
  out << "# lat=" << s.lat_count << ",lon=" << s.lon_count << ",start_month=" << s.start_month << "\n";
  out << "t";
  for (std::size_t i = 0; i < s.locations(); ++i) out << ",v" << i;
  out << "\n";
  for (int t = 0; t < s.T; ++t) {
    out << t;
    for (std::size_t i = 0; i < s.locations(); ++i) out << "," << io::fmt(s.at(t, i));
    out << "\n";
  }
}

inline GriddedSeries read_series_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw FormatError("series CSV: missing '# lat=..' line");
  GriddedSeries s;
  std::map<std::string, std::string> kv;
  for (const auto& item : io::split_csv(line.substr(2))) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw FormatError("series CSV: malformed header");
    kv[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
  }
  try {
    s.lat_count = std::stoi(kv.at("lat"));
    s.lon_count = std::stoi(kv.at("lon"));
    s.start_month = kv.count("start_month") ? std::stoi(kv.at("start_month")) : 0;
  } catch (const std::exception&) {
    throw FormatError("series CSV: header needs lat and lon");
  }
  if (!std::getline(in, line)) throw FormatError("series CSV: missing column header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = io::split_csv(line);
    if (f.size() != s.locations() + 1) throw FormatError("series CSV: row width does not match lat*lon");
    for (std::size_t i = 1; i < f.size(); ++i) s.values.push_back(io::parse_double(f[i], "series CSV"));
    ++s.T;
  }
  s.validate();
  return s;
}

inline void save_series(const std::string& path, const GriddedSeries& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  write_series(out, s);
}

inline GriddedSeries load_series(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") return read_series_csv(in);
  return read_series(in);
}

// ---------------------------------------------------------------------------
// Month-of-year standardisation.

struct Deseasonalized {
  std::vector<double> month_mean;  // M x 12
  std::vector<double> month_var;   // M x 12, 1/n normalisation
  GriddedSeries residuals;
  bool divide_by_sd = true;

  double mean(std::size_t i, int m) const { return month_mean[i * 12 + static_cast<std::size_t>(m)]; }
  double var(std::size_t i, int m) const { return month_var[i * 12 + static_cast<std::size_t>(m)]; }

  /// Inverse map back to the original series.
  GriddedSeries reconstruct() const {
    GriddedSeries y = residuals;
    for (int t = 0; t < y.T; ++t)
      for (std::size_t i = 0; i < y.locations(); ++i) {
        const int m = y.month(t);
        const double scale = divide_by_sd ? std::sqrt(var(i, m)) : var(i, m);
        y.at(t, i) = mean(i, m) + scale * residuals.at(t, i);
      }
    return y;
  }
};

/// ε = (Y − μ_month) / σ_month, or / σ²_month when divide_by_sd is false.
inline Deseasonalized deseasonalize(const GriddedSeries& y, bool divide_by_sd = true) {
  y.validate();
  if (y.T < 24) throw DomainError("deseasonalize: needs at least 24 time points");
  const std::size_t M = y.locations();
  Deseasonalized d;
  d.divide_by_sd = divide_by_sd;
  d.month_mean.assign(M * 12, 0.0);
  d.month_var.assign(M * 12, 0.0);
  std::array<int, 12> count{};
  for (int t = 0; t < y.T; ++t) ++count[static_cast<std::size_t>(y.month(t))];
  for (int t = 0; t < y.T; ++t)
    for (std::size_t i = 0; i < M; ++i) d.month_mean[i * 12 + static_cast<std::size_t>(y.month(t))] += y.at(t, i);
  for (std::size_t i = 0; i < M; ++i)
    for (int m = 0; m < 12; ++m) d.month_mean[i * 12 + static_cast<std::size_t>(m)] /= count[static_cast<std::size_t>(m)];
  for (int t = 0; t < y.T; ++t)
    for (std::size_t i = 0; i < M; ++i) {
      const double e = y.at(t, i) - d.mean(i, y.month(t));
      d.month_var[i * 12 + static_cast<std::size_t>(y.month(t))] += e * e;
    }
  for (std::size_t i = 0; i < M; ++i)
    for (int m = 0; m < 12; ++m) {
      double& v = d.month_var[i * 12 + static_cast<std::size_t>(m)];
      v /= count[static_cast<std::size_t>(m)];
      if (!(v > 1e-24 * std::max(1.0, d.mean(i, m) * d.mean(i, m)))) {
        throw ZeroVarianceError("deseasonalize: location " + std::to_string(i) + " (lat " +
                                std::to_string(i / static_cast<std::size_t>(y.lon_count)) + ", lon " +
                                std::to_string(i % static_cast<std::size_t>(y.lon_count)) + "), month " +
                                std::to_string(m));
      }
    }
  d.residuals = y;
  for (int t = 0; t < y.T; ++t)
    for (std::size_t i = 0; i < M; ++i) {
      const int m = y.month(t);
      const double scale = divide_by_sd ? std::sqrt(d.var(i, m)) : d.var(i, m);
      d.residuals.at(t, i) = (y.at(t, i) - d.mean(i, m)) / scale;
    }
  return d;
}

// ---------------------------------------------------------------------------
// ARMA whitening by conditional sum of squares.
//
// x_t = Σ ψ_j x_{t−j} + η_t + Σ θ_k η_{t−k}, innovations before the
// conditioning start t0 set to zero, sums over t ≥ t0.

struct ArmaFit {
  int p = 0;
  int q = 0;
  std::vector<double> ar;
  std::vector<double> ma;
  double sigma2 = 0.0;
  double loglik = -std::numeric_limits<double>::infinity();
  double bic = std::numeric_limits<double>::infinity();
  bool valid = false;
};

/// Innovations for t ≥ t0 (length T − t0).
inline std::vector<double> arma_innovations(std::span<const double> x, std::span<const double> ar,
                                            std::span<const double> ma, int t0) {
  const int T = static_cast<int>(x.size());
  std::vector<double> e(static_cast<std::size_t>(T), 0.0);
  for (int t = t0; t < T; ++t) {
    double v = x[static_cast<std::size_t>(t)];
    for (std::size_t j = 0; j < ar.size(); ++j) {
      const int s = t - 1 - static_cast<int>(j);
      if (s >= 0) v -= ar[j] * x[static_cast<std::size_t>(s)];
    }
    for (std::size_t k = 0; k < ma.size(); ++k) {
      const int s = t - 1 - static_cast<int>(k);
      if (s >= t0) v -= ma[k] * e[static_cast<std::size_t>(s)];
    }
    e[static_cast<std::size_t>(t)] = v;
  }
  return {e.begin() + t0, e.end()};
}

/// Largest root modulus of z^n − c1 z^{n−1} − ... − cn (sign = +1) or
/// z^n + c1 z^{n−1} + ... + cn (sign = −1). Below 1 means stationary (AR) or
/// invertible (MA).
inline double companion_radius(std::span<const double> c, double sign) {
  const auto n = static_cast<Eigen::Index>(c.size());
  if (n == 0) return 0.0;
  if (n == 1) return std::abs(c[0]);
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) comp(0, j) = sign * c[static_cast<std::size_t>(j)];
  for (Eigen::Index i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline constexpr double kRootLimit = 0.999;

namespace detail {

// Least squares of x_t on the given regressor columns for rows t ≥ start.
inline Eigen::VectorXd ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  return X.colPivHouseholderQr().solve(y);
}

}  // namespace detail

inline ArmaFit fit_arma(std::span<const double> x, int p, int q, int t0) {
  const int T = static_cast<int>(x.size());
  if (p < 0 || q < 0 || t0 < p) throw DomainError("fit_arma: invalid orders or conditioning start");
  const int n = T - t0;
  if (n <= p + q + 2) throw DomainError("fit_arma: series too short for the requested orders");
  ArmaFit f;
  f.p = p;
  f.q = q;
  std::vector<double> theta(static_cast<std::size_t>(p + q), 0.0);

  if (p > 0) {
    // AR part by OLS (the exact CSS minimiser when q = 0; the starting point otherwise).
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n);
    for (int t = t0; t < T; ++t) {
      y(t - t0) = x[static_cast<std::size_t>(t)];
      for (int j = 0; j < p; ++j) X(t - t0, j) = x[static_cast<std::size_t>(t - 1 - j)];
    }
    const Eigen::VectorXd b = detail::ols(X, y);
    for (int j = 0; j < p; ++j) theta[static_cast<std::size_t>(j)] = b(j);
  }
  if (q > 0) {
    // Hannan-Rissanen start: long AR residuals as proxies for past innovations.
    const int m = std::min(std::max(8, p + q + 2), std::max(1, n / 4));
    std::vector<double> proxy(static_cast<std::size_t>(T), 0.0);
    if (T - m > m + 2) {
      Eigen::MatrixXd X(T - m, m);
      Eigen::VectorXd y(T - m);
      for (int t = m; t < T; ++t) {
        y(t - m) = x[static_cast<std::size_t>(t)];
        for (int j = 0; j < m; ++j) X(t - m, j) = x[static_cast<std::size_t>(t - 1 - j)];
      }
      const Eigen::VectorXd b = detail::ols(X, y);
      const Eigen::VectorXd r = y - X * b;
      for (int t = m; t < T; ++t) proxy[static_cast<std::size_t>(t)] = r(t - m);
      const int start = std::max(t0, m + q);
      if (T - start > p + q + 2) {
        Eigen::MatrixXd Z(T - start, p + q);
        Eigen::VectorXd w(T - start);
        for (int t = start; t < T; ++t) {
          w(t - start) = x[static_cast<std::size_t>(t)];
          for (int j = 0; j < p; ++j) Z(t - start, j) = x[static_cast<std::size_t>(t - 1 - j)];
          for (int k = 0; k < q; ++k) Z(t - start, p + k) = proxy[static_cast<std::size_t>(t - 1 - k)];
        }
        const Eigen::VectorXd c = detail::ols(Z, w);
        for (int i = 0; i < p + q; ++i) theta[static_cast<std::size_t>(i)] = c(i);
      }
    }
    const std::span<const double> ma0(theta.data() + p, static_cast<std::size_t>(q));
    if (!(companion_radius(ma0, -1.0) < kRootLimit))
      for (int k = 0; k < q; ++k) theta[static_cast<std::size_t>(p + k)] = 0.0;
    const std::span<const double> ar0(theta.data(), static_cast<std::size_t>(p));
    if (!(companion_radius(ar0, 1.0) < kRootLimit))
      for (int j = 0; j < p; ++j) theta[static_cast<std::size_t>(j)] = 0.0;

    const auto css = [&](const std::vector<double>& th) {
      const std::span<const double> ar(th.data(), static_cast<std::size_t>(p));
      const std::span<const double> ma(th.data() + p, static_cast<std::size_t>(q));
      if (!(companion_radius(ma, -1.0) < kRootLimit) || !(companion_radius(ar, 1.0) < kRootLimit)) {
        return std::numeric_limits<double>::infinity();
      }
      double s = 0.0;
      for (double e : arma_innovations(x, ar, ma, t0)) s += e * e;
      return s;
    };
    double scale = 0.0;
    for (int t = t0; t < T; ++t) scale += x[static_cast<std::size_t>(t)] * x[static_cast<std::size_t>(t)];
    const mle::SimplexResult r = mle::nelder_mead(css, theta, 0.1, 1e-10 * std::max(scale, 1e-300), 200 * (p + q));
    if (std::isfinite(r.value) && r.value <= css(theta)) theta = r.x;
  }

  f.ar.assign(theta.begin(), theta.begin() + p);
  f.ma.assign(theta.begin() + p, theta.end());
  const std::vector<double> e = arma_innovations(x, f.ar, f.ma, t0);
  double s = 0.0;
  for (double v : e) s += v * v;
  f.sigma2 = s / n;
  f.valid = std::isfinite(s) && s > 0.0 && companion_radius(f.ar, 1.0) < kRootLimit &&
            companion_radius(f.ma, -1.0) < kRootLimit;
  if (f.valid) {
    f.loglik = -0.5 * n * (mle::kLogTwoPi + std::log(f.sigma2) + 1.0);
    f.bic = -2.0 * f.loglik + (p + q + 1) * std::log(static_cast<double>(T));
  }
  return f;
}

/// Minimum-BIC order over p ≤ max_p, q ≤ max_q on the common conditioning
/// start t0 = max_p; falls back to (0,0) when every candidate is invalid.
inline ArmaFit select_arma(std::span<const double> x, int max_p, int max_q) {
  ArmaFit best;
  for (int p = 0; p <= max_p; ++p)
    for (int q = 0; q <= max_q; ++q) {
      ArmaFit f = fit_arma(x, p, q, max_p);
      if (f.valid && f.bic < best.bic) best = std::move(f);
    }
  if (!best.valid) best = fit_arma(x, 0, 0, max_p);
  return best;
}

struct ResidualCube {
  GriddedSeries eta;              // T − max_p time points, unit innovation variance per location
  std::vector<ArmaFit> models;    // per location
  int max_p = 3;
  int max_q = 2;
};

inline ResidualCube arma_whiten(const GriddedSeries& eps, int max_p = 3, int max_q = 2) {
  eps.validate();
  if (max_p < 0 || max_q < 0) throw DomainError("arma_whiten: orders must be >= 0");
  const std::size_t M = eps.locations();
  ResidualCube rc;
  rc.max_p = max_p;
  rc.max_q = max_q;
  rc.models.resize(M);
  rc.eta.lat_count = eps.lat_count;
  rc.eta.lon_count = eps.lon_count;
  rc.eta.T = eps.T - max_p;
  rc.eta.start_month = (eps.start_month + max_p) % 12;
  rc.eta.values.assign(static_cast<std::size_t>(rc.eta.T) * M, 0.0);
  parallel_for(M, [&](std::size_t i) {
    std::vector<double> x(static_cast<std::size_t>(eps.T));
    for (int t = 0; t < eps.T; ++t) x[static_cast<std::size_t>(t)] = eps.at(t, i);
    rc.models[i] = select_arma(x, max_p, max_q);
    const std::vector<double> e = arma_innovations(x, rc.models[i].ar, rc.models[i].ma, max_p);
    const double scale = 1.0 / std::sqrt(rc.models[i].sigma2);
    for (int t = 0; t < rc.eta.T; ++t) rc.eta.at(t, i) = e[static_cast<std::size_t>(t)] * scale;
  });
  return rc;
}

// ---------------------------------------------------------------------------
// Aggregation.

/// Non-overlapping block means of a rows x cols field.
inline std::vector<double> aggregate(std::span<const double> field, int rows, int cols, int block) {
  if (block < 1 || rows % block != 0 || cols % block != 0) {
    throw DomainError("aggregate: block " + std::to_string(block) + " does not divide " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  if (field.size() != static_cast<std::size_t>(rows) * cols) throw DimensionError("aggregate: size mismatch");
  const int R = rows / block;
  const int C = cols / block;
  std::vector<double> out(static_cast<std::size_t>(R) * C, 0.0);
  const double inv = 1.0 / (static_cast<double>(block) * block);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int i = 0; i < block; ++i)
        for (int j = 0; j < block; ++j)
          s += field[static_cast<std::size_t>(r * block + i) * cols + static_cast<std::size_t>(c * block + j)];
      out[static_cast<std::size_t>(r) * C + c] = s * inv;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Classifier bank keyed by (aggregation block, smoothness).

inline const std::vector<double>& default_nu_keys() {
  static const std::vector<double> keys{0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  return keys;
}

/// Nearest key; ties go to the smaller key.
inline double snap_nu(double nu_hat, const std::vector<double>& keys) {
  if (keys.empty()) throw DomainError("snap_nu: no keys");
  double best = keys.front();
  for (double k : keys)
    if (std::abs(k - nu_hat) < std::abs(best - nu_hat) ||
        (std::abs(k - nu_hat) == std::abs(best - nu_hat) && k < best)) {
      best = k;
    }
  return best;
}

/// Effective range: 2R · 0.7/√2 (≈ 6307 km for R = 6371 km).
inline double effective_range_km(double radius_km = grf::kEarthRadiusKm) {
  return 2.0 * radius_km * 0.7 / std::sqrt(2.0);
}

struct BankConfig {
  int lat_count = 32;
  int lon_count = 64;
  std::vector<int> blocks{1, 2, 4, 8};
  std::vector<double> nu_keys = default_nu_keys();
  int n_beta_train = 10;
  std::vector<double> p_train{1.2, 1.4, 1.6, 1.8};
  int n_sample = 25;
  double alpha = 0.05;
  std::string nn_model = "model1";
  int epochs = 100;
  int batch_size = 128;
  double bandwidth = cutoff::kDefaultBandwidth;
  std::uint64_t seed = 1;

  void validate() const {
    if (lat_count < 2 || lon_count < 2) throw ConfigError("grid", "sphere grid needs at least 2x2");
    if (blocks.empty()) throw ConfigError("blocks", "must not be empty");
    for (int b : blocks) {
      if (b < 1 || lat_count % b != 0 || lon_count % b != 0)
        throw ConfigError("blocks", "block " + std::to_string(b) + " does not divide the grid");
      if ((lat_count / b) * (lon_count / b) < 25)
        throw ConfigError("blocks", "block " + std::to_string(b) + " leaves fewer than 25 locations");
    }
    if (nu_keys.empty()) throw ConfigError("nu_keys", "must not be empty");
    for (double k : nu_keys)
      if (!(k > 0.0)) throw ConfigError("nu_keys", "must be positive");
  }

  study::StudyConfig study_for(int block, std::size_t key_index) const {
    study::StudyConfig c;
    c.preset = "bank";
    c.grid = grf::GridSpec::sphere(lat_count / block, lon_count / block);
    c.nu_train = c.nu_test = nu_keys[key_index];
    c.n_beta_train = n_beta_train;
    c.n_beta_test = 1;
    c.beta_max = grf::beta_max(nu_keys[key_index], effective_range_km());
    c.p_train = p_train;
    c.n_sample = n_sample;
    c.alpha = alpha;
    c.nn_model = nn_model;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.bandwidth = bandwidth;
    c.classical = false;
    c.depnorm = false;
    c.seed = derive_seed(seed, {static_cast<std::uint64_t>(block), key_index});
    return c;
  }

  void apply(const Config& c, const std::string& section) {
    const auto k = [&](const char* name) { return section + "." + name; };
    const std::string grid_text = c.get_string(k("grid"), "sphere:" + std::to_string(lat_count) + "x" +
                                                              std::to_string(lon_count));
    try {
      const grf::GridSpec g = grf::GridSpec::parse(grid_text);
      if (!g.is_sphere()) throw ConfigError(k("grid"), "bank grid must be a sphere grid");
      lat_count = g.rows();
      lon_count = g.cols();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(k("grid"), e.what());
    }
    std::vector<int> b;
    for (double v : c.get_doubles(k("blocks"), std::vector<double>(blocks.begin(), blocks.end())))
      b.push_back(static_cast<int>(v));
    blocks = b;
    nu_keys = c.get_doubles(k("nu_keys"), nu_keys);
    n_beta_train = static_cast<int>(c.get_int(k("n_beta_train"), n_beta_train));
    p_train = c.get_doubles(k("p_train"), p_train);
    n_sample = static_cast<int>(c.get_int(k("n_sample"), n_sample));
    alpha = c.get_double(k("alpha"), alpha);
    nn_model = c.get_string(k("nn_model"), nn_model);
    epochs = static_cast<int>(c.get_int(k("epochs"), epochs));
    batch_size = static_cast<int>(c.get_int(k("batch_size"), batch_size));
    bandwidth = c.get_double(k("bandwidth"), bandwidth);
    seed = c.get_u64(k("seed"), seed);
  }

  void store(Config& c, const std::string& section) const {
    const auto k = [&](const char* name) { return section + "." + name; };
    std::string bl;
    for (std::size_t i = 0; i < blocks.size(); ++i) bl += (i ? "," : "") + std::to_string(blocks[i]);
    const auto list = [](const std::vector<double>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + io::fmt(v[i]);
      return s;
    };
    c.set(k("grid"), "sphere:" + std::to_string(lat_count) + "x" + std::to_string(lon_count));
    c.set(k("blocks"), bl);
    c.set(k("nu_keys"), list(nu_keys));
    c.set(k("n_beta_train"), std::to_string(n_beta_train));
    c.set(k("p_train"), list(p_train));
    c.set(k("n_sample"), std::to_string(n_sample));
    c.set(k("alpha"), io::fmt(alpha));
    c.set(k("nn_model"), nn_model);
    c.set(k("epochs"), std::to_string(epochs));
    c.set(k("batch_size"), std::to_string(batch_size));
    c.set(k("bandwidth"), io::fmt(bandwidth));
    c.set(k("seed"), std::to_string(seed));
  }
};

struct BankEntry {
  int block = 1;
  double nu = 0.5;
  study::CalibratedClassifier nn;
  study::CalibratedClassifier linear;
};

/// Immutable after construction; shared read-only during scans.
class ClassifierBank {
 public:
  void add(BankEntry e) { entries_.push_back(std::move(e)); }
  const std::vector<BankEntry>& entries() const { return entries_; }

  std::vector<double> keys(int block) const {
    std::vector<double> k;
    for (const auto& e : entries_)
      if (e.block == block) k.push_back(e.nu);
    std::sort(k.begin(), k.end());
    return k;
  }

  std::vector<int> blocks() const {
    std::vector<int> b;
    for (const auto& e : entries_)
      if (std::find(b.begin(), b.end(), e.block) == b.end()) b.push_back(e.block);
    std::sort(b.begin(), b.end());
    return b;
  }

  const BankEntry& at(int block, double nu) const {
    for (const auto& e : entries_)
      if (e.block == block && e.nu == nu) return e;
    throw DomainError("classifier bank has no entry for block " + std::to_string(block));
  }

  static std::string stem(int block, double nu) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "block%d_nu%.2f", block, nu);
    return buf;
  }

  /// Writes bank.csv (block,nu) plus one model and one curve per classifier.
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    auto index = io::open_output(dir / "bank.csv");
    index << "block,nu,nn_model,nn_curve,linear_model,linear_curve\n";
    for (const auto& e : entries_) {
      const std::string s = stem(e.block, e.nu);
      mlp::save_model((dir / (s + "_nn.model")).string(), e.nn.model);
      cutoff::save_curve((dir / (s + "_nn_curve.csv")).string(), e.nn.curve);
      mlp::save_model((dir / (s + "_linear.model")).string(), e.linear.model);
      cutoff::save_curve((dir / (s + "_linear_curve.csv")).string(), e.linear.curve);
      index << e.block << "," << io::fmt(e.nu) << "," << s << "_nn.model," << s << "_nn_curve.csv," << s
            << "_linear.model," << s << "_linear_curve.csv\n";
    }
  }

  static ClassifierBank load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "bank.csv");
    if (!in) throw Error("cannot read " + (dir / "bank.csv").string());
    std::string line;
    std::getline(in, line);
    ClassifierBank bank;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = io::split_csv(line);
      if (f.size() != 6) throw FormatError("bank.csv: ragged row");
      BankEntry e;
      e.block = std::stoi(f[0]);
      e.nu = io::parse_double(f[1], "bank.csv");
      e.nn = {"nn", mlp::load_model((dir / f[2]).string()), cutoff::load_curve((dir / f[3]).string())};
      e.linear = {"linear", mlp::load_model((dir / f[4]).string()), cutoff::load_curve((dir / f[5]).string())};
      bank.add(std::move(e));
    }
    if (bank.entries_.empty()) throw FormatError("bank.csv lists no classifiers");
    return bank;
  }

 private:
  std::vector<BankEntry> entries_;
};

inline ClassifierBank train_bank(const BankConfig& config, const std::function<void(const std::string&)>& log = {}) {
  config.validate();
  ClassifierBank bank;
  for (int block : config.blocks) {
    for (std::size_t k = 0; k < config.nu_keys.size(); ++k) {
      if (log) log("bank: block " + std::to_string(block) + ", nu " + io::fmt(config.nu_keys[k]));
      const study::StudyConfig sc = config.study_for(block, k);
      sc.validate();
      const auto train = study::extract(sc, study::Split::train, {});
      study::TrainedModels t = study::run_training(sc, train);
      bank.add(BankEntry{block, config.nu_keys[k], std::move(t.nn), std::move(t.linear)});
    }
  }
  return bank;
}

// ---------------------------------------------------------------------------
// Scan.

struct ScanRecord {
  int t = 0;
  int block = 1;
  mle::FitResult fit;
  double nu_key = 0.0;
  double nn_score = 0.0;
  double nn_cutoff = 0.0;
  bool nn_reject = false;
  double linear_score = 0.0;
  double linear_cutoff = 0.0;
  bool linear_reject = false;
};

struct ScanRow {
  int block = 1;
  std::size_t locations = 0;
  std::string method;
  std::size_t rejections = 0;
  std::size_t n = 0;
  std::size_t excluded = 0;
  double rate() const { return n ? static_cast<double>(rejections) / static_cast<double>(n) : 0.0; }
};

struct ScanResult {
  std::vector<ScanRow> table;
  std::vector<ScanRecord> log;
};

/// Per time point and block: aggregate, fit (σ², β, ν), snap ν to the bank,
/// and decide with that entry's classifiers at β̂. Time points whose fit does
/// not converge are excluded and counted.
inline ScanResult run_normality_scan(const GriddedSeries& eta, const ClassifierBank& bank, const std::vector<int>& blocks,
                                     double alpha, const std::function<void(const std::string&)>& log = {}) {
  eta.validate();
  for (const auto& e : bank.entries()) {
    if (std::abs(e.nn.curve.alpha - alpha) > 1e-12 || std::abs(e.linear.curve.alpha - alpha) > 1e-12) {
      throw ConfigError("alpha", "does not match the level the bank was calibrated at (" + io::fmt(e.nn.curve.alpha) +
                                     ")");
    }
  }
  ScanResult res;
  const grf::GridSpec native = eta.grid();
  for (int block : blocks) {
    const std::vector<double> keys = bank.keys(block);
    if (keys.empty()) throw ConfigError("blocks", "bank has no classifiers for block " + std::to_string(block));
    const grf::GridSpec g = native.aggregated(block);
    if (log) log("scan: block " + std::to_string(block) + " (" + std::to_string(g.size()) + " locations)");
    const mle::LikelihoodEngine engine(g);
    const double diameter = g.max_distance();
    std::vector<ScanRecord> recs(static_cast<std::size_t>(eta.T));
    parallel_for(recs.size(), [&](std::size_t t) {
      ScanRecord& r = recs[t];
      r.t = static_cast<int>(t);
      r.block = block;
      const std::vector<double> field = aggregate(eta.field(static_cast<int>(t)), eta.lat_count, eta.lon_count, block);
      r.fit = mle::fit(engine, diameter, field, mle::NuMode::estimated());
      if (!r.fit.converged) return;
      r.nu_key = snap_nu(r.fit.params.nu, keys);
      const BankEntry& e = bank.at(block, r.nu_key);
      const std::vector<double> f = normstats::features(field).as_vector();
      r.nn_score = e.nn.model.forward(f);
      r.nn_cutoff = cutoff::predict_cutoff(e.nn.curve, r.fit.params.beta);
      r.nn_reject = r.nn_score > r.nn_cutoff;
      r.linear_score = e.linear.model.forward(f);
      r.linear_cutoff = cutoff::predict_cutoff(e.linear.curve, r.fit.params.beta);
      r.linear_reject = r.linear_score > r.linear_cutoff;
    });
    ScanRow nn{block, g.size(), "nn", 0, 0, 0};
    ScanRow lin{block, g.size(), "linear", 0, 0, 0};
    for (const auto& r : recs) {
      if (!r.fit.converged) {
        ++nn.excluded;
        ++lin.excluded;
        continue;
      }
      ++nn.n;
      ++lin.n;
      nn.rejections += r.nn_reject;
      lin.rejections += r.linear_reject;
    }
    res.table.push_back(nn);
    res.table.push_back(lin);
    res.log.insert(res.log.end(), recs.begin(), recs.end());
  }
  return res;
}

inline void write_scan_table(std::ostream& out, const std::vector<ScanRow>& rows) {
  out << "method,block,locations,rejection_rate,rejections,n,excluded\n";
  for (const auto& r : rows)
    out << r.method << "," << r.block << "," << r.locations << "," << io::fmt(r.rate()) << "," << r.rejections << ","
        << r.n << "," << r.excluded << "\n";
}

inline std::vector<ScanRow> read_scan_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "method,block,locations,rejection_rate,rejections,n,excluded")
    throw FormatError("rejection_rates.csv: bad header");
  std::vector<ScanRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = io::split_csv(line);
    if (f.size() != 7) throw FormatError("rejection_rates.csv: ragged row");
    rows.push_back(ScanRow{std::stoi(f[1]), std::stoull(f[2]), f[0], std::stoull(f[4]), std::stoull(f[5]),
                           std::stoull(f[6])});
  }
  return rows;
}

inline void write_scan_log(std::ostream& out, const std::vector<ScanRecord>& log) {
  out << "t,block,sigma2,beta,nu,converged,nu_key,nn_score,nn_cutoff,nn_reject,linear_score,linear_cutoff,"
         "linear_reject\n";
  for (const auto& r : log) {
    out << r.t << "," << r.block << "," << io::fmt(r.fit.params.sigma2) << "," << io::fmt(r.fit.params.beta) << ","
        << io::fmt(r.fit.params.nu) << "," << (r.fit.converged ? 1 : 0) << "," << io::fmt(r.nu_key) << ","
        << io::fmt(r.nn_score) << "," << io::fmt(r.nn_cutoff) << "," << (r.nn_reject ? 1 : 0) << ","
        << io::fmt(r.linear_score) << "," << io::fmt(r.linear_cutoff) << "," << (r.linear_reject ? 1 : 0) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Synthetic cubes.

struct SynthConfig {
  int lat_count = 32;
  int lon_count = 64;
  int T = 240;
  int start_month = 0;
  std::string kind = "null";  // null: Gaussian innovations; power: signed power of Gaussian innovations
  double p = 1.8;
  double range_km = 0.0;  // spatial Matérn range of the innovations; 0 = independent
  double nu = 0.5;
  bool seasonal = true;
  bool arma = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (lat_count < 2 || lon_count < 2) throw ConfigError("grid", "sphere grid needs at least 2x2");
    if (T < 24) throw ConfigError("T", "must be >= 24");
    if (start_month < 0 || start_month > 11) throw ConfigError("start_month", "must be 0..11");
    if (kind != "null" && kind != "power") throw ConfigError("kind", "expected null or power");
    if (kind == "power" && !(p >= 1.0)) throw ConfigError("p", "must be >= 1");
    if (!(range_km >= 0.0)) throw ConfigError("range_km", "must be >= 0");
    if (!(nu > 0.0)) throw ConfigError("nu", "must be positive");
  }
};

/// Innovations η (unit variance; Gaussian or signed-power), ARMA(1,1)
/// dynamics with location-dependent coefficients, then month-specific
/// means and scales.
inline GriddedSeries synthesize(const SynthConfig& c) {
  c.validate();
  constexpr int kBurn = 50;
  const grf::GridSpec grid = grf::GridSpec::sphere(c.lat_count, c.lon_count);
  const std::size_t M = grid.size();
  const int total = c.T + kBurn;
  std::vector<std::vector<double>> eta;
  if (c.range_km > 0.0) {
    const grf::FieldSampler sampler(grid, grf::MaternParams{1.0, c.range_km, c.nu});
    eta = sampler.draw(static_cast<std::size_t>(total), derive_seed(c.seed, {1}));
  } else {
    eta.assign(static_cast<std::size_t>(total), std::vector<double>(M));
    for (int t = 0; t < total; ++t) {
      Rng rng = make_rng(c.seed, {1, static_cast<std::uint64_t>(t)});
      std::normal_distribution<double> normal;
      for (double& v : eta[static_cast<std::size_t>(t)]) v = normal(rng);
    }
  }
  if (c.kind == "power") {
    // E|Z|^{2p} = 2^p Γ(p + 1/2) / √π.
    const double sd = std::sqrt(std::exp(c.p * std::numbers::ln2 + std::lgamma(c.p + 0.5)) / std::sqrt(std::numbers::pi));
    for (auto& f : eta) {
      f = grf::signed_power(f, c.p);
      for (double& v : f) v /= sd;
    }
  }
  GriddedSeries s;
  s.lat_count = c.lat_count;
  s.lon_count = c.lon_count;
  s.T = c.T;
  s.start_month = c.start_month;
  s.values.assign(static_cast<std::size_t>(c.T) * M, 0.0);
  for (std::size_t i = 0; i < M; ++i) {
    const int r = static_cast<int>(i / static_cast<std::size_t>(c.lon_count));
    const int col = static_cast<int>(i % static_cast<std::size_t>(c.lon_count));
    const double lat = grid.latitude_rad(r);
    const double lon = grid.longitude_rad(col);
    const double psi = c.arma ? 0.2 + 0.5 * std::abs(std::sin(lat)) : 0.0;
    const double theta = c.arma ? 0.3 * std::cos(lon) : 0.0;
    double prev = 0.0;
    double prev_eta = 0.0;
    for (int t = 0; t < total; ++t) {
      const double e = eta[static_cast<std::size_t>(t)][i];
      const double x = psi * prev + e + theta * prev_eta;
      prev = x;
      prev_eta = e;
      if (t < kBurn) continue;
      const int tt = t - kBurn;
      const int month = (c.start_month + tt) % 12;
      const double phase = 2.0 * std::numbers::pi * (month + 0.5) / 12.0;
      const double mu = c.seasonal ? 14.0 + 12.0 * std::cos(lat) - 9.0 * std::sin(lat) * std::cos(phase) : 0.0;
      const double sigma = c.seasonal ? 1.0 + 0.5 * std::abs(std::sin(lat)) + 0.2 * std::cos(phase) : 1.0;
      s.at(tt, i) = mu + sigma * x;
    }
  }
  return s;
}

}  // namespace adnorm::climate
