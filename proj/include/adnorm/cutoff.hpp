#pragma once

// Level-alpha decision thresholds for classifier scores, per dependence range
// and smoothed across ranges by Gaussian kernel regression.

#include <adnorm/errors.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace adnorm::cutoff {

inline constexpr double kDefaultBandwidth = 0.3;

struct CutoffPair {
  double beta = 0.0;
  double cutoff = 0.0;
};

/// Invariants: betas strictly increasing, cutoffs in [0,1], nonempty.
/// With beta_scale > 0 the kernel acts on beta / beta_scale.
struct CutoffCurve {
  std::vector<CutoffPair> pairs;
  double bandwidth = kDefaultBandwidth;
  double alpha = 0.05;
  double beta_scale = 0.0;  // 0 = raw betas

  void validate() const {
    if (pairs.empty()) throw DomainError("cutoff curve is empty");
    if (!(bandwidth > 0.0)) throw DomainError("cutoff curve bandwidth must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("cutoff curve alpha must be in (0,1)");
    if (!(beta_scale >= 0.0)) throw DomainError("cutoff curve beta_scale must be >= 0");
    for (std::size_t g = 0; g < pairs.size(); ++g) {
      if (!(pairs[g].cutoff >= 0.0 && pairs[g].cutoff <= 1.0)) throw DomainError("cutoff outside [0,1]");
      if (g > 0 && !(pairs[g].beta > pairs[g - 1].beta)) throw DomainError("cutoff curve betas must increase");
    }
  }

  double min_cutoff() const {
    double m = pairs.front().cutoff;
    for (const auto& p : pairs) m = std::min(m, p.cutoff);
    return m;
  }
  double max_cutoff() const {
    double m = pairs.front().cutoff;
    for (const auto& p : pairs) m = std::max(m, p.cutoff);
    return m;
  }
};

/// Smallest q with #{score > q} <= alpha*N: the ceil(N(1-alpha))-th order
/// statistic (1-based).
inline double empirical_cutoff(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw DomainError("empirical_cutoff: no scores");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("empirical_cutoff: alpha must be in (0,1)");
  std::vector<double> s(scores.begin(), scores.end());
  const double n = static_cast<double>(s.size());
  auto k = static_cast<std::size_t>(std::ceil(n * (1.0 - alpha) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, s.size());
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k - 1), s.end());
  return s[k - 1];
}

/// groups: beta -> H0 scores at that beta.
inline CutoffCurve fit_curve(const std::vector<std::pair<double, std::vector<double>>>& groups, double alpha,
                             double bandwidth = kDefaultBandwidth, double beta_scale = 0.0) {
  if (groups.empty()) throw DomainError("fit_curve: no groups");
  CutoffCurve curve;
  curve.alpha = alpha;
  curve.bandwidth = bandwidth;
  curve.beta_scale = beta_scale;
  for (const auto& [beta, scores] : groups) {
    if (scores.empty()) throw DomainError("fit_curve: empty score group");
    curve.pairs.push_back({beta, empirical_cutoff(scores, alpha)});
  }
  std::sort(curve.pairs.begin(), curve.pairs.end(),
            [](const CutoffPair& a, const CutoffPair& b) { return a.beta < b.beta; });
  for (std::size_t g = 1; g < curve.pairs.size(); ++g)
    if (curve.pairs[g].beta == curve.pairs[g - 1].beta) throw DomainError("fit_curve: duplicate beta");
  curve.validate();
  return curve;
}

/// Nadaraya-Watson estimate with a Gaussian kernel. Exponents are shifted by
/// their maximum, so the largest weight is exactly 1.
inline double predict_cutoff(const CutoffCurve& curve, double beta) {
  const double scale = curve.beta_scale > 0.0 ? curve.beta_scale : 1.0;
  const double x = beta / scale;
  std::vector<double> expo(curve.pairs.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < curve.pairs.size(); ++g) {
    const double u = (x - curve.pairs[g].beta / scale) / curve.bandwidth;
    expo[g] = -0.5 * u * u;
    top = std::max(top, expo[g]);
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t g = 0; g < curve.pairs.size(); ++g) {
    const double w = std::exp(expo[g] - top);
    num += w * curve.pairs[g].cutoff;
    den += w;
  }
  return std::clamp(num / den, curve.min_cutoff(), curve.max_cutoff());
}

enum class Decision { retain_h0, reject_h0 };

inline Decision decide(double score, const CutoffCurve& curve, double beta) {
  return score > predict_cutoff(curve, beta) ? Decision::reject_h0 : Decision::retain_h0;
}

// ---------------------------------------------------------------------------
// Curve file: a "# alpha=..,h=..,scaling=..,beta_scale=.." comment, then
// "beta,cutoff" rows.

inline void write_curve(std::ostream& out, const CutoffCurve& curve) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "# alpha=%.17g,h=%.17g,scaling=%s,beta_scale=%.17g\n", curve.alpha,
                curve.bandwidth, curve.beta_scale > 0.0 ? "normalized" : "raw", curve.beta_scale);
  out << buf << "beta,cutoff\n";
  for (const auto& p : curve.pairs) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.beta, p.cutoff);
    out << buf;
  }
}

inline CutoffCurve read_curve(std::istream& in) {
  CutoffCurve curve;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw FormatError("curve file: missing header comment");
  std::map<std::string, std::string> kv;
  std::stringstream hs(line.substr(2));
  std::string item;
  while (std::getline(hs, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw FormatError("curve file: malformed header field '" + item + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  try {
    curve.alpha = std::stod(kv.at("alpha"));
    curve.bandwidth = std::stod(kv.at("h"));
    curve.beta_scale = std::stod(kv.at("beta_scale"));
  } catch (const std::exception&) {
    throw FormatError("curve file: header needs alpha, h, beta_scale");
  }
  if (!std::getline(in, line) || line != "beta,cutoff") throw FormatError("curve file: missing column header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError("curve file: malformed row '" + line + "'");
    curve.pairs.push_back({std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  curve.validate();
  return curve;
}

inline void save_curve(const std::string& path, const CutoffCurve& curve) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write curve file " + path);
  write_curve(out, curve);
}

inline CutoffCurve load_curve(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read curve file " + path);
  return read_curve(in);
}

}  // namespace adnorm::cutoff
