#pragma once

// Gaussian likelihood of zero-mean Matérn fields and its maximisation.
//
// Two exact routes: a dense Cholesky on the M x M correlation matrix, and for
// sphere grids a block-circulant route. On a regular lat/lon grid the
// correlation between (a, j) and (b, j + k) depends only on (a, b, k), so a
// DFT along longitude splits the matrix into lon/2 + 1 distinct real
// symmetric lat x lat blocks.

#include <adnorm/errors.hpp>
#include <adnorm/grf.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace adnorm::mle {

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// yᵀR⁻¹y and ln|R| for a unit-variance correlation matrix R.
struct QuadLogdet {
  double quad = 0.0;
  double logdet = 0.0;
  bool ok = false;
};

enum class Route { automatic, dense, circulant };

class LikelihoodEngine {
 public:
  explicit LikelihoodEngine(const grf::GridSpec& grid, Route route = Route::automatic)
      : grid_(grid), m_(grid.size()) {
    if (route == Route::automatic) route = grid.is_sphere() ? Route::circulant : Route::dense;
    if (route == Route::circulant && !grid.is_sphere()) throw DomainError("circulant route needs a sphere grid");
    route_ = route;
    if (route_ == Route::dense) {
      table_ = grid.distance_table();
    } else {
      prepare_circulant();
    }
  }

  /// Dense route over an explicit distance table (any location order).
  explicit LikelihoodEngine(grf::DistanceTable table) : m_(table.n), route_(Route::dense), table_(std::move(table)) {}

  Route route() const { return route_; }
  std::size_t size() const { return m_; }

  QuadLogdet correlation_terms(double beta, double nu, std::span<const double> y) const {
    if (y.size() != m_) throw DimensionError("likelihood: value count does not match grid");
    if (!(beta >= 0.0) || !(nu > 0.0)) throw DomainError("likelihood: need beta >= 0, nu > 0");
    QuadLogdet r;
    if (beta == 0.0) {
      for (double v : y) r.quad += v * v;
      r.ok = true;
      return r;
    }
    return route_ == Route::dense ? dense_terms(beta, nu, y) : circulant_terms(beta, nu, y);
  }

  /// −½ yᵀΣ⁻¹y − ½ ln|Σ| − (M/2) ln 2π; −inf when Σ cannot be factorised.
  double log_likelihood(const grf::MaternParams& p, std::span<const double> y) const {
    p.validate();
    const QuadLogdet t = correlation_terms(p.beta, p.nu, y);
    if (!t.ok) return -std::numeric_limits<double>::infinity();
    const double m = static_cast<double>(m_);
    return -0.5 * t.quad / p.sigma2 - 0.5 * (t.logdet + m * std::log(p.sigma2)) - 0.5 * m * kLogTwoPi;
  }

  /// σ̂² = yᵀR⁻¹y / M.
  double profile_sigma2(double beta, double nu, std::span<const double> y) const {
    const QuadLogdet t = correlation_terms(beta, nu, y);
    if (!t.ok) throw FactorizationError("profile_sigma2: correlation matrix not factorisable");
    return t.quad / static_cast<double>(m_);
  }

  /// Log-likelihood at (σ̂²(β,ν), β, ν); writes σ̂² when requested.
  double profiled_log_likelihood(double beta, double nu, std::span<const double> y, double* sigma2 = nullptr) const {
    const QuadLogdet t = correlation_terms(beta, nu, y);
    const double m = static_cast<double>(m_);
    if (!t.ok || !(t.quad > 0.0) || !std::isfinite(t.quad) || !std::isfinite(t.logdet)) {
      return -std::numeric_limits<double>::infinity();
    }
    const double s2 = t.quad / m;
    if (sigma2) *sigma2 = s2;
    return -0.5 * m * (kLogTwoPi + std::log(s2) + 1.0) - 0.5 * t.logdet;
  }

 private:
  QuadLogdet dense_terms(double beta, double nu, std::span<const double> y) const {
    std::vector<double> lag(table_.values.size());
    grf::matern_corr_many(table_.values, beta, nu, lag);
    Eigen::MatrixXd R(m_, m_);
    for (std::size_t j = 0; j < m_; ++j)
      for (std::size_t i = j; i < m_; ++i) R(i, j) = lag[table_.index[i * m_ + j]];
    QuadLogdet r;
    Eigen::LLT<Eigen::MatrixXd> llt;
    if (!factor(R, llt)) return r;
    Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(m_));
    const Eigen::VectorXd w = llt.matrixL().solve(yv);
    r.quad = w.squaredNorm();
    r.logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    r.ok = true;
    return r;
  }

  // Cholesky of the lower triangle; diagonal jitter 1e-10 growing tenfold to
  // 1e-6 on failure.
  static bool factor(Eigen::MatrixXd& R, Eigen::LLT<Eigen::MatrixXd>& llt) {
    llt.compute(R);
    if (llt.info() == Eigen::Success) return true;
    double applied = 0.0;
    for (double rel = 1e-10; rel <= 1.0000001e-6; rel *= 10.0) {
      R.diagonal().array() += rel - applied;
      applied = rel;
      llt.compute(R);
      if (llt.info() == Eigen::Success) return true;
    }
    return false;
  }

  void prepare_circulant() {
    const int L = grid_.rows();
    const int C = grid_.cols();
    half_ = C / 2 + 1;
    lat_pairs_ = static_cast<std::size_t>(L) * (L + 1) / 2;
    lag_distance_.assign(lat_pairs_ * half_, 0.0);
    for (int b = 0; b < L; ++b)
      for (int a = 0; a <= b; ++a)
        for (int k = 0; k < half_; ++k) lag_distance_[grid_.sphere_lag_id(a, b, k)] = grid_.sphere_lag_distance(a, b, k);
    // Block f = Σ_{k=0}^{C-1} B_k cos(2πfk/C), folded onto k ≤ C/2.
    fold_.assign(static_cast<std::size_t>(half_) * half_, 0.0);
    for (int f = 0; f < half_; ++f)
      for (int k = 0; k < half_; ++k) {
        const double mult = (k == 0 || 2 * k == C) ? 1.0 : 2.0;
        fold_[static_cast<std::size_t>(f) * half_ + k] = mult * std::cos(2.0 * std::numbers::pi * f * k / C);
      }
    cos_.resize(static_cast<std::size_t>(half_) * C);
    sin_.resize(static_cast<std::size_t>(half_) * C);
    for (int f = 0; f < half_; ++f)
      for (int j = 0; j < C; ++j) {
        const double ang = 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(f) * j) % C) / C;
        cos_[static_cast<std::size_t>(f) * C + j] = std::cos(ang);
        sin_[static_cast<std::size_t>(f) * C + j] = std::sin(ang);
      }
  }

  QuadLogdet circulant_terms(double beta, double nu, std::span<const double> y) const {
    const int L = grid_.rows();
    const int C = grid_.cols();
    std::vector<double> lag(lag_distance_.size());
    grf::matern_corr_many(lag_distance_, beta, nu, lag);

    std::vector<Eigen::MatrixXd> blocks(static_cast<std::size_t>(half_), Eigen::MatrixXd(L, L));
    for (int b = 0; b < L; ++b)
      for (int a = 0; a <= b; ++a) {
        const double* c = &lag[grid_.sphere_lag_id(a, b, 0)];
        for (int f = 0; f < half_; ++f) {
          const double* w = &fold_[static_cast<std::size_t>(f) * half_];
          double s = 0.0;
          for (int k = 0; k < half_; ++k) s += w[k] * c[k];
          blocks[static_cast<std::size_t>(f)](b, a) = s;
          blocks[static_cast<std::size_t>(f)](a, b) = s;
        }
      }

    Eigen::MatrixXd re(L, half_);
    Eigen::MatrixXd im(L, half_);
    for (int a = 0; a < L; ++a) {
      const double* row = y.data() + static_cast<std::size_t>(a) * C;
      for (int f = 0; f < half_; ++f) {
        const double* cs = &cos_[static_cast<std::size_t>(f) * C];
        const double* sn = &sin_[static_cast<std::size_t>(f) * C];
        double sr = 0.0;
        double si = 0.0;
        for (int j = 0; j < C; ++j) {
          sr += row[j] * cs[j];
          si -= row[j] * sn[j];
        }
        re(a, f) = sr;
        im(a, f) = si;
      }
    }

    QuadLogdet r;
    for (double rel = 0.0; rel <= 1.0000001e-6; rel = rel == 0.0 ? 1e-10 : rel * 10.0) {
      double quad = 0.0;
      double logdet = 0.0;
      bool ok = true;
      for (int f = 0; f < half_ && ok; ++f) {
        Eigen::MatrixXd B = blocks[static_cast<std::size_t>(f)];
        // Jitter on Σ's diagonal shifts every block's diagonal by the same amount.
        if (rel > 0.0) B.diagonal().array() += rel;
        Eigen::LLT<Eigen::MatrixXd> llt(B);
        if (llt.info() != Eigen::Success) {
          ok = false;
          break;
        }
        const double mult = (f == 0 || 2 * f == C) ? 1.0 : 2.0;
        const Eigen::VectorXd wr = llt.matrixL().solve(re.col(f));
        const Eigen::VectorXd wi = llt.matrixL().solve(im.col(f));
        quad += mult * (wr.squaredNorm() + wi.squaredNorm());
        logdet += mult * 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      }
      if (ok) {
        r.quad = quad / C;
        r.logdet = logdet;
        r.ok = true;
        return r;
      }
    }
    return r;
  }

  grf::GridSpec grid_;
  std::size_t m_ = 0;
  Route route_ = Route::dense;
  grf::DistanceTable table_;
  int half_ = 0;
  std::size_t lat_pairs_ = 0;
  std::vector<double> lag_distance_;
  std::vector<double> fold_;
  std::vector<double> cos_;
  std::vector<double> sin_;
};

inline double log_likelihood(const grf::GridSpec& grid, const grf::MaternParams& params, std::span<const double> y) {
  return LikelihoodEngine(grid).log_likelihood(params, y);
}

inline double profile_sigma2(const grf::GridSpec& grid, double beta, double nu, std::span<const double> y) {
  return LikelihoodEngine(grid).profile_sigma2(beta, nu, y);
}

// ---------------------------------------------------------------------------
// Nelder-Mead minimiser.

struct SimplexResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

/// Minimises f from x0 with per-axis initial step; stops when the spread of
/// simplex values falls below `tolerance` or after `max_iterations`.
/// Non-finite values are treated as +inf.
template <class F>
SimplexResult nelder_mead(F&& f, std::vector<double> x0, double step, double tolerance, int max_iterations) {
  const std::size_t n = x0.size();
  const auto eval = [&](const std::vector<double>& x) {
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  std::vector<std::vector<double>> pts(n + 1, x0);
  for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += step;
  std::vector<double> val(n + 1);
  for (std::size_t i = 0; i <= n; ++i) val[i] = eval(pts[i]);

  SimplexResult res;
  std::vector<std::size_t> order(n + 1);
  for (int it = 0;; ++it) {
    for (std::size_t i = 0; i <= n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second = order[n - 1];
    res.iterations = it;
    const double spread = val[worst] - val[best];
    if (std::isfinite(val[best]) && spread < tolerance) {
      res.converged = true;
      break;
    }
    if (it >= max_iterations) break;

    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i)
      if (i != worst)
        for (std::size_t d = 0; d < n; ++d) centroid[d] += pts[i][d] / static_cast<double>(n);
    const auto along = [&](double t) {
      std::vector<double> x(n);
      for (std::size_t d = 0; d < n; ++d) x[d] = centroid[d] + t * (pts[worst][d] - centroid[d]);
      return x;
    };
    std::vector<double> xr = along(-1.0);
    const double fr = eval(xr);
    if (fr < val[best]) {
      std::vector<double> xe = along(-2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = std::move(xe);
        val[worst] = fe;
      } else {
        pts[worst] = std::move(xr);
        val[worst] = fr;
      }
    } else if (fr < val[second]) {
      pts[worst] = std::move(xr);
      val[worst] = fr;
    } else {
      const bool outside = fr < val[worst];
      std::vector<double> xc = along(outside ? -0.5 : 0.5);
      const double fc = eval(xc);
      if (fc < (outside ? fr : val[worst])) {
        pts[worst] = std::move(xc);
        val[worst] = fc;
      } else {
        for (std::size_t i = 0; i <= n; ++i) {
          if (i == best) continue;
          for (std::size_t d = 0; d < n; ++d) pts[i][d] = pts[best][d] + 0.5 * (pts[i][d] - pts[best][d]);
          val[i] = eval(pts[i]);
        }
      }
    }
  }
  const std::size_t best = *std::min_element(order.begin(), order.end(),
                                             [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
  res.x = pts[best];
  res.value = val[best];
  return res;
}

// ---------------------------------------------------------------------------
// Fitting.

struct NuMode {
  bool free = false;
  double nu = 0.5;     // fixed value, or starting value when free
  double lower = 0.1;  // bounds when free
  double upper = 5.0;

  static NuMode fixed(double nu) { return {false, nu, nu, nu}; }
  static NuMode estimated(double lower = 0.1, double upper = 5.0, double start = 1.0) {
    return {true, start, lower, upper};
  }
};

struct FitOptions {
  std::array<double, 3> start_fractions{0.02, 0.1, 0.5};  // β0 = fraction * diameter
  double step = 0.7;                                      // initial simplex step in log space
  double tolerance = 1e-6;
  int max_iterations = 400;
};

struct FitResult {
  grf::MaternParams params;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

/// Maximises the σ²-profiled likelihood over log β (and log ν when free).
/// Parameters are clamped to β ∈ [1e-6·diam, 2·diam], ν ∈ [lower, upper].
/// Deterministic: fixed starting points, no randomness.
inline FitResult fit(const LikelihoodEngine& engine, double diameter, std::span<const double> y, const NuMode& mode,
                     const FitOptions& options = {}) {
  if (engine.size() < 25) throw DomainError("mle fit needs at least 25 locations");
  if (y.size() != engine.size()) throw DimensionError("mle fit: value count does not match grid");
  if (mode.free && !(mode.lower > 0.0 && mode.lower <= mode.upper)) throw DomainError("mle fit: invalid nu bounds");
  if (!mode.free && !(mode.nu > 0.0)) throw DomainError("mle fit: nu must be positive");
  const double beta_lo = 1e-6 * diameter;
  const double beta_hi = 2.0 * diameter;
  const auto unpack = [&](const std::vector<double>& x, double& beta, double& nu) {
    beta = std::clamp(std::exp(x[0]), beta_lo, beta_hi);
    nu = mode.free ? std::clamp(std::exp(x[1]), mode.lower, mode.upper) : mode.nu;
  };
  const auto objective = [&](const std::vector<double>& x) {
    double beta = 0.0;
    double nu = 0.0;
    unpack(x, beta, nu);
    return -engine.profiled_log_likelihood(beta, nu, y);
  };

  FitResult best;
  double best_value = std::numeric_limits<double>::infinity();
  std::vector<double> best_x;
  bool best_converged = false;
  int total_iterations = 0;
  for (double frac : options.start_fractions) {
    std::vector<double> x0{std::log(frac * diameter)};
    if (mode.free) x0.push_back(std::log(std::clamp(mode.nu, mode.lower, mode.upper)));
    const SimplexResult r = nelder_mead(objective, x0, options.step, options.tolerance, options.max_iterations);
    total_iterations += r.iterations;
    if (r.value < best_value) {
      best_value = r.value;
      best_x = r.x;
      best_converged = r.converged;
    }
  }
  best.iterations = total_iterations;
  if (best_x.empty() || !std::isfinite(best_value)) {
    best.params = {1.0, options.start_fractions[0] * diameter, mode.nu};
    best.converged = false;
    return best;
  }
  double beta = 0.0;
  double nu = 0.0;
  unpack(best_x, beta, nu);
  double sigma2 = 0.0;
  best.log_likelihood = engine.profiled_log_likelihood(beta, nu, y, &sigma2);
  best.params = {sigma2, beta, nu};
  best.converged = best_converged;
  return best;
}

inline FitResult fit(const grf::GridSpec& grid, std::span<const double> y, const NuMode& mode,
                     const FitOptions& options = {}) {
  return fit(LikelihoodEngine(grid), grid.max_distance(), y, mode, options);
}

inline void write_fit_header(std::ostream& out) { out << "sample_id,sigma2,beta,nu,loglik,converged,iterations\n"; }

inline void write_fit_row(std::ostream& out, std::size_t sample_id, const FitResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%d,%d\n", sample_id, r.params.sigma2, r.params.beta,
                r.params.nu, r.log_likelihood, r.converged ? 1 : 0, r.iterations);
  out << buf;
}

}  // namespace adnorm::mle
