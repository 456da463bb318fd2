#pragma once

// Matérn Gaussian random fields on regular grids.

#include <adnorm/errors.hpp>
#include <adnorm/numerics.hpp>
#include <adnorm/rng.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace adnorm::grf {

inline constexpr double kEarthRadiusKm = 6371.0;

/// Unique lag distances of a grid plus the lag id of every location pair.
struct DistanceTable {
  std::vector<double> values;
  std::vector<std::uint32_t> index;  // n*n, row-major
  std::size_t n = 0;

  std::uint32_t at(std::size_t i, std::size_t j) const { return index[i * n + j]; }
  double distance(std::size_t i, std::size_t j) const { return values[at(i, j)]; }
};

struct UnitSquare {
  int rows = 0;
  int cols = 0;
};

struct Sphere {
  int lat_count = 0;
  int lon_count = 0;
  double radius_km = kEarthRadiusKm;
};

/// Regular grid geometry. Unit-square points include both endpoints on each
/// axis; sphere points sit at latitude-band centres and evenly spaced
/// longitudes starting at 0, with chordal (3-D straight line) distances.
class GridSpec {
 public:
  GridSpec() = default;

  static GridSpec unit_square(int rows, int cols) {
    if (rows < 2 || cols < 2 || rows * cols < 4) {
      throw DomainError("unit_square grid needs at least 2 points per axis");
    }
    GridSpec g;
    g.geometry_ = UnitSquare{rows, cols};
    return g;
  }

  static GridSpec sphere(int lat_count, int lon_count, double radius_km = kEarthRadiusKm) {
    if (lat_count < 1 || lon_count < 1 || lat_count * lon_count < 4 || !(radius_km > 0.0)) {
      throw DomainError("sphere grid needs >= 4 points and a positive radius");
    }
    GridSpec g;
    g.geometry_ = Sphere{lat_count, lon_count, radius_km};
    return g;
  }

  /// Parses "square:RxC", "RxC" or "sphere:LATxLON[:radius_km]".
  static GridSpec parse(const std::string& text) {
    std::string body = text;
    bool sphere_kind = false;
    if (body.rfind("square:", 0) == 0) {
      body = body.substr(7);
    } else if (body.rfind("sphere:", 0) == 0) {
      body = body.substr(7);
      sphere_kind = true;
    }
    double radius = kEarthRadiusKm;
    if (const auto colon = body.find(':'); colon != std::string::npos) {
      if (!sphere_kind) throw DomainError("grid spec '" + text + "': radius only valid for sphere");
      radius = std::stod(body.substr(colon + 1));
      body = body.substr(0, colon);
    }
    const auto x = body.find('x');
    if (x == std::string::npos) throw DomainError("grid spec '" + text + "': expected RxC");
    int a = 0;
    int b = 0;
    try {
      std::size_t pos = 0;
      a = std::stoi(body.substr(0, x), &pos);
      if (pos != x) throw DomainError("");
      const std::string rest = body.substr(x + 1);
      b = std::stoi(rest, &pos);
      if (pos != rest.size()) throw DomainError("");
    } catch (const std::exception&) {
      throw DomainError("grid spec '" + text + "': expected integer dimensions");
    }
    return sphere_kind ? sphere(a, b, radius) : unit_square(a, b);
  }

  std::string describe() const {
    if (is_sphere()) {
      const auto& s = std::get<Sphere>(geometry_);
      std::string out = "sphere:" + std::to_string(s.lat_count) + "x" + std::to_string(s.lon_count);
      if (s.radius_km != kEarthRadiusKm) {
        char buf[64];
        std::snprintf(buf, sizeof buf, ":%.17g", s.radius_km);
        out += buf;
      }
      return out;
    }
    return "square:" + std::to_string(rows()) + "x" + std::to_string(cols());
  }

  bool is_sphere() const { return std::holds_alternative<Sphere>(geometry_); }
  bool valid() const { return size() > 0; }

  int rows() const {
    return is_sphere() ? std::get<Sphere>(geometry_).lat_count : std::get<UnitSquare>(geometry_).rows;
  }
  int cols() const {
    return is_sphere() ? std::get<Sphere>(geometry_).lon_count : std::get<UnitSquare>(geometry_).cols;
  }
  double radius_km() const { return is_sphere() ? std::get<Sphere>(geometry_).radius_km : 0.0; }
  std::size_t size() const { return static_cast<std::size_t>(rows()) * static_cast<std::size_t>(cols()); }

  /// Coarsened grid after averaging non-overlapping block x block cells.
  GridSpec aggregated(int block) const {
    if (block < 1 || rows() % block != 0 || cols() % block != 0) {
      throw DomainError("block size must divide both grid dimensions");
    }
    if (block == 1) return *this;
    if (is_sphere()) return sphere(rows() / block, cols() / block, radius_km());
    return unit_square(rows() / block, cols() / block);
  }

  /// Cartesian coordinates of location i (row-major).
  std::array<double, 3> coordinate(std::size_t i) const {
    const int r = static_cast<int>(i / cols());
    const int c = static_cast<int>(i % cols());
    if (is_sphere()) {
      const double lat = latitude_rad(r);
      const double lon = longitude_rad(c);
      const double R = radius_km();
      return {R * std::cos(lat) * std::cos(lon), R * std::cos(lat) * std::sin(lon), R * std::sin(lat)};
    }
    return {c / static_cast<double>(cols() - 1), r / static_cast<double>(rows() - 1), 0.0};
  }

  double latitude_rad(int r) const {
    const double step = std::numbers::pi / rows();
    return -0.5 * std::numbers::pi + (r + 0.5) * step;
  }
  double longitude_rad(int c) const { return c * 2.0 * std::numbers::pi / cols(); }

  /// Chordal distance between latitude bands a, b at longitude offset k.
  double sphere_lag_distance(int a, int b, int k) const {
    const double pa = latitude_rad(a);
    const double pb = latitude_rad(b);
    const double dlon = k * 2.0 * std::numbers::pi / cols();
    const double s1 = std::sin(0.5 * (pa - pb));
    const double s2 = std::sin(0.5 * dlon);
    const double h = s1 * s1 + std::cos(pa) * std::cos(pb) * s2 * s2;
    return 2.0 * radius_km() * std::sqrt(std::min(1.0, std::max(0.0, h)));
  }

  /// Lag id of a sphere pair; shared by pairs with equal (lat pair, |dlon|).
  std::uint32_t sphere_lag_id(int a, int b, int k) const {
    if (a > b) std::swap(a, b);
    const int n = cols();
    k = ((k % n) + n) % n;
    k = std::min(k, n - k);
    const int tri = b * (b + 1) / 2 + a;
    return static_cast<std::uint32_t>(tri * (n / 2 + 1) + k);
  }

  DistanceTable distance_table() const {
    DistanceTable t;
    const std::size_t m = size();
    t.n = m;
    t.index.resize(m * m);
    const int R = rows();
    const int C = cols();
    if (is_sphere()) {
      const int half = C / 2 + 1;
      t.values.assign(static_cast<std::size_t>(R) * (R + 1) / 2 * half, 0.0);
      for (int b = 0; b < R; ++b)
        for (int a = 0; a <= b; ++a)
          for (int k = 0; k < half; ++k) t.values[sphere_lag_id(a, b, k)] = sphere_lag_distance(a, b, k);
      for (std::size_t i = 0; i < m; ++i) {
        const int ri = static_cast<int>(i / C);
        const int ci = static_cast<int>(i % C);
        for (std::size_t j = 0; j < m; ++j) {
          const int rj = static_cast<int>(j / C);
          const int cj = static_cast<int>(j % C);
          t.index[i * m + j] = sphere_lag_id(ri, rj, cj - ci);
        }
      }
    } else {
      const double hx = 1.0 / (C - 1);
      const double hy = 1.0 / (R - 1);
      t.values.resize(static_cast<std::size_t>(R) * C);
      for (int di = 0; di < R; ++di)
        for (int dj = 0; dj < C; ++dj) {
          const double dx = dj * hx;
          const double dy = di * hy;
          t.values[static_cast<std::size_t>(di) * C + dj] = std::sqrt(dx * dx + dy * dy);
        }
      for (std::size_t i = 0; i < m; ++i) {
        const int ri = static_cast<int>(i / C);
        const int ci = static_cast<int>(i % C);
        for (std::size_t j = 0; j < m; ++j) {
          const int rj = static_cast<int>(j / C);
          const int cj = static_cast<int>(j % C);
          t.index[i * m + j] = static_cast<std::uint32_t>(std::abs(ri - rj) * C + std::abs(ci - cj));
        }
      }
    }
    return t;
  }

  double max_distance() const {
    if (!is_sphere()) return std::sqrt(2.0);
    double best = 0.0;
    const int half = cols() / 2 + 1;
    for (int b = 0; b < rows(); ++b)
      for (int a = 0; a <= b; ++a)
        for (int k = 0; k < half; ++k) best = std::max(best, sphere_lag_distance(a, b, k));
    return best;
  }

  friend bool operator==(const GridSpec& a, const GridSpec& b) { return a.describe() == b.describe(); }

 private:
  std::variant<UnitSquare, Sphere> geometry_;
};

struct MaternParams {
  double sigma2 = 1.0;
  double beta = 0.0;
  double nu = 0.5;

  void validate() const {
    if (!(sigma2 > 0.0) || !(beta >= 0.0) || !(nu > 0.0) || !std::isfinite(sigma2) ||
        !std::isfinite(beta) || !std::isfinite(nu)) {
      throw DomainError("Matern parameters need sigma2 > 0, beta >= 0, nu > 0");
    }
  }
};

/// Matérn covariance at distance d; equals sigma2 at d = 0 by continuity.
inline double matern_cov(const MaternParams& p, double distance) {
  if (!(distance >= 0.0) || !std::isfinite(distance)) throw DomainError("matern_cov: negative distance");
  if (distance == 0.0) return p.sigma2;
  if (p.beta == 0.0) return 0.0;
  const double t = distance / p.beta;
  if (std::abs(p.nu - 0.5) < 1e-12) return p.sigma2 * std::exp(-t);
  if (t < 1e-50) return p.sigma2;
  if (t > 750.0) return 0.0;
  const double log_scale = (1.0 - p.nu) * std::numbers::ln2 - std::lgamma(p.nu) + p.nu * std::log(t);
  const double value = p.sigma2 * std::exp(log_scale) * numerics::bessel_k(p.nu, t);
  return std::min(p.sigma2, value);
}

inline double matern_corr(double beta, double nu, double distance) {
  return matern_cov(MaternParams{1.0, beta, nu}, distance);
}

/// matern_corr over many distances; the gamma constant is computed once.
/// Results equal matern_corr bitwise.
inline void matern_corr_many(std::span<const double> distances, double beta, double nu, std::span<double> out) {
  if (out.size() != distances.size()) throw DimensionError("matern_corr_many: size mismatch");
  const bool exponential = std::abs(nu - 0.5) < 1e-12;
  const double c0 = exponential ? 0.0 : (1.0 - nu) * std::numbers::ln2 - std::lgamma(nu);
  for (std::size_t k = 0; k < distances.size(); ++k) {
    const double d = distances[k];
    if (!(d >= 0.0) || !std::isfinite(d)) throw DomainError("matern_corr_many: negative distance");
    if (d == 0.0) {
      out[k] = 1.0;
      continue;
    }
    if (beta == 0.0) {
      out[k] = 0.0;
      continue;
    }
    const double t = d / beta;
    if (exponential) {
      out[k] = std::exp(-t);
    } else if (t < 1e-50) {
      out[k] = 1.0;
    } else if (t > 750.0) {
      out[k] = 0.0;
    } else {
      const double log_scale = c0 + nu * std::log(t);
      out[k] = std::min(1.0, 1.0 * std::exp(log_scale) * numerics::bessel_k(nu, t));
    }
  }
}

/// Range at which the correlation at `effective_range` equals 0.05.
inline double beta_max(double nu, double effective_range) {
  if (!(nu > 0.0) || !(effective_range > 0.0)) throw DomainError("beta_max: need nu > 0, range > 0");
  constexpr double kTarget = 0.05;
  double lo = effective_range * 1e-6;
  double hi = effective_range;
  while (matern_corr(hi, nu, effective_range) < kTarget) hi *= 2.0;
  for (int it = 0; it < 300; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (!(mid > lo && mid < hi)) break;
    if (matern_corr(mid, nu, effective_range) < kTarget) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::sqrt(lo * hi);
}

/// Covariance evaluated on every unique lag of a distance table.
inline std::vector<double> lag_covariances(const DistanceTable& table, const MaternParams& params) {
  std::vector<double> out(table.values.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = matern_cov(params, table.values[k]);
  return out;
}

inline Eigen::MatrixXd cov_matrix(const DistanceTable& table, const MaternParams& params) {
  params.validate();
  const std::vector<double> lag = lag_covariances(table, params);
  const std::size_t m = table.n;
  Eigen::MatrixXd cov(m, m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < m; ++i) cov(i, j) = lag[table.index[i * m + j]];
  return cov;
}

inline Eigen::MatrixXd cov_matrix(const GridSpec& grid, const MaternParams& params) {
  return cov_matrix(grid.distance_table(), params);
}

/// Lower Cholesky factor; adds 1e-10*scale to the diagonal on failure and
/// grows it tenfold up to 1e-6*scale.
struct Factorization {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

inline Factorization factorize(const Eigen::MatrixXd& cov, double scale) {
  Factorization f;
  f.llt.compute(cov);
  if (f.llt.info() == Eigen::Success) return f;
  for (double rel = 1e-10; rel <= 1.0000001e-6; rel *= 10.0) {
    Eigen::MatrixXd jittered = cov;
    jittered.diagonal().array() += rel * scale;
    f.llt.compute(jittered);
    if (f.llt.info() == Eigen::Success) {
      f.jitter = rel * scale;
      return f;
    }
  }
  throw FactorizationError("covariance matrix not positive definite after maximum jitter");
}

enum class Label : std::uint8_t { H0 = 0, H1 = 1 };

struct SampleMeta {
  double beta = 0.0;
  double nu = 0.5;
  double exponent_p = 1.0;
  std::uint64_t seed = 0;
  Label label = Label::H0;
};

struct FieldSample {
  GridSpec grid;
  std::vector<double> values;
  SampleMeta meta;
};

/// f(z; p) = |z|^p sign(z), applied elementwise.
inline std::vector<double> signed_power(std::span<const double> values, double p) {
  if (!(p >= 1.0)) throw DomainError("signed_power: exponent must be >= 1");
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double z = values[i];
    out[i] = z == 0.0 ? 0.0 : std::copysign(std::pow(std::abs(z), p), z);
  }
  return out;
}

/// Draws fields L*u with u i.i.d. N(0,1). The factor is computed once, so one
/// sampler serves any number of draws for the same (grid, params).
class FieldSampler {
 public:
  FieldSampler(const GridSpec& grid, const MaternParams& params)
      : FieldSampler(grid, grid.distance_table(), params) {}

  FieldSampler(const GridSpec& grid, const DistanceTable& table, const MaternParams& params)
      : grid_(grid), params_(params) {
    params_.validate();
    if (params_.beta == 0.0) {
      identity_scale_ = std::sqrt(params_.sigma2);
      return;
    }
    Factorization f = factorize(cov_matrix(table, params_), params_.sigma2);
    lower_ = f.llt.matrixL();
  }

  const GridSpec& grid() const { return grid_; }
  const MaternParams& params() const { return params_; }

  /// Gaussian draws for sample indices [first, first+count); sample k uses the
  /// stream derive_seed(seed, {k}). Bit-reproducible for a fixed
  /// (seed, first, count).
  std::vector<std::vector<double>> draw(std::size_t count, std::uint64_t seed, std::size_t first = 0) const {
    const std::size_t m = grid_.size();
    Eigen::MatrixXd u(m, count);
    for (std::size_t s = 0; s < count; ++s) {
      Rng rng = make_rng(seed, {static_cast<std::uint64_t>(first + s)});
      std::normal_distribution<double> normal(0.0, 1.0);
      for (std::size_t i = 0; i < m; ++i) u(i, s) = normal(rng);
    }
    std::vector<std::vector<double>> out(count, std::vector<double>(m));
    if (identity_scale_ > 0.0) {
      for (std::size_t s = 0; s < count; ++s)
        for (std::size_t i = 0; i < m; ++i) out[s][i] = identity_scale_ * u(i, s);
      return out;
    }
    const Eigen::MatrixXd fields = lower_.triangularView<Eigen::Lower>() * u;
    for (std::size_t s = 0; s < count; ++s)
      for (std::size_t i = 0; i < m; ++i) out[s][i] = fields(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s));
    return out;
  }

 private:
  GridSpec grid_;
  MaternParams params_;
  Eigen::MatrixXd lower_;
  double identity_scale_ = 0.0;
};

/// `count` zero-mean H0 fields with derived per-sample seeds.
inline std::vector<FieldSample> sample_field(const GridSpec& grid, const MaternParams& params,
                                             std::size_t count, std::uint64_t seed) {
  if (count == 0) throw DomainError("sample_field: count must be positive");
  FieldSampler sampler(grid, params);
  auto draws = sampler.draw(count, seed);
  std::vector<FieldSample> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    FieldSample fs;
    fs.grid = grid;
    fs.values = std::move(draws[s]);
    fs.meta = SampleMeta{params.beta, params.nu, 1.0, derive_seed(seed, {s}), Label::H0};
    out.push_back(std::move(fs));
  }
  return out;
}

/// Applies the signed power transform to an H0 sample, producing an H1 sample
/// (or the same H0 sample when p == 1).
inline FieldSample to_alternative(const FieldSample& base, double p) {
  FieldSample out = base;
  out.values = signed_power(base.values, p);
  out.meta.exponent_p = p;
  out.meta.label = p == 1.0 ? Label::H0 : Label::H1;
  return out;
}

}  // namespace adnorm::grf
