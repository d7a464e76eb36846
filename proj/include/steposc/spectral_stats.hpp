#pragma once

// Unfolding, nearest-neighbour spacing statistics and level counting.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "steposc/error.hpp"

namespace steposc::stats {

enum class Law { poisson, semi_poisson, goe_wigner };

inline const char* to_string(Law l) {
  switch (l) {
    case Law::poisson: return "poisson";
    case Law::semi_poisson: return "semi-poisson";
    case Law::goe_wigner: return "goe-wigner";
  }
  return "?";
}

inline double reference_cdf(Law law, double s) {
  if (s < 0.0) throw DomainError("spacing must be nonnegative");
  switch (law) {
    case Law::poisson: return -std::expm1(-s);
    case Law::semi_poisson: return 1.0 - std::exp(-2.0 * s) * (2.0 * s + 1.0);
    case Law::goe_wigner: return -std::expm1(-std::numbers::pi * s * s / 4.0);
  }
  return 0.0;
}

inline double reference_pdf(Law law, double s) {
  if (s < 0.0) throw DomainError("spacing must be nonnegative");
  switch (law) {
    case Law::poisson: return std::exp(-s);
    case Law::semi_poisson: return 4.0 * s * std::exp(-2.0 * s);
    case Law::goe_wigner: return 0.5 * std::numbers::pi * s * std::exp(-std::numbers::pi * s * s / 4.0);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Unfolding

enum class UnfoldMethod { mean_spacing, weyl, polynomial };

inline const char* to_string(UnfoldMethod m) {
  switch (m) {
    case UnfoldMethod::mean_spacing: return "mean-spacing";
    case UnfoldMethod::weyl: return "weyl";
    case UnfoldMethod::polynomial: return "polynomial";
  }
  return "?";
}

struct UnfoldOptions {
  UnfoldMethod method = UnfoldMethod::mean_spacing;
  /// Smooth counting function for the weyl method.
  std::function<double(double)> counting;
  int degree = 3;
  /// Rescale weyl/polynomial output to unit mean spacing.
  bool renormalize = true;
};

inline void check_sorted(const std::vector<double>& levels) {
  if (levels.size() < 2) throw DomainError("unfolding needs at least 2 levels");
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (!(levels[i] >= levels[i - 1])) throw DomainError("levels must be sorted ascending");
  }
}

/// Least-squares polynomial fit of the staircase k + 1/2 against E.
inline std::vector<double> staircase_fit(const std::vector<double>& levels, int degree) {
  const auto n = static_cast<Eigen::Index>(levels.size());
  const double lo = levels.front(), hi = levels.back();
  const double mid = 0.5 * (lo + hi), half = std::max(0.5 * (hi - lo), 1e-300);
  Eigen::MatrixXd A(n, degree + 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = (levels[static_cast<std::size_t>(i)] - mid) / half;
    double p = 1.0;
    for (int d = 0; d <= degree; ++d, p *= x) A(i, d) = p;
    y[i] = static_cast<double>(i) + 0.5;
  }
  const Eigen::VectorXd c = A.colPivHouseholderQr().solve(y);
  std::vector<double> out(levels.size());
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = A.row(i).dot(c);
  return out;
}

inline std::vector<double> unfold(const std::vector<double>& levels, const UnfoldOptions& opt = {}) {
  check_sorted(levels);
  const std::size_t n = levels.size();
  std::vector<double> u(n);
  switch (opt.method) {
    case UnfoldMethod::mean_spacing: {
      const double mean = (levels.back() - levels.front()) / static_cast<double>(n - 1);
      if (!(mean > 0.0)) throw DomainError("all levels coincide");
      for (std::size_t i = 0; i < n; ++i) u[i] = (levels[i] - levels.front()) / mean;
      return u;
    }
    case UnfoldMethod::weyl:
      if (!opt.counting) throw DomainError("weyl unfolding needs a counting function");
      for (std::size_t i = 0; i < n; ++i) u[i] = opt.counting(levels[i]);
      break;
    case UnfoldMethod::polynomial:
      if (opt.degree < 1) throw DomainError("polynomial degree must be >= 1");
      u = staircase_fit(levels, opt.degree);
      break;
  }
  if (opt.renormalize) {
    const double mean = (u.back() - u.front()) / static_cast<double>(n - 1);
    if (!(mean > 0.0)) throw DomainError("unfolded levels do not increase");
    const double first = u.front();
    for (double& x : u) x = (x - first) / mean;
  }
  return u;
}

// ---------------------------------------------------------------------------
// Degeneracies

struct Cluster {
  double energy = 0.0;  // mean of members
  int first = 0;        // index of the first member
  int multiplicity = 0;
};

/// Greedy clustering: a new cluster starts whenever the gap to the previous level exceeds tol.
inline std::vector<Cluster> degeneracy_count(const std::vector<double>& levels, double tol) {
  std::vector<Cluster> out;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (out.empty() || levels[i] - levels[i - 1] > tol) {
      out.push_back({0.0, static_cast<int>(i), 0});
    }
    auto& c = out.back();
    c.energy += levels[i];
    ++c.multiplicity;
  }
  for (auto& c : out) c.energy /= c.multiplicity;
  return out;
}

inline std::vector<double> collapse_degenerate(const std::vector<double>& levels, double tol) {
  std::vector<double> out;
  for (const auto& c : degeneracy_count(levels, tol)) out.push_back(c.energy);
  return out;
}

// ---------------------------------------------------------------------------
// Spacing samples

struct SpacingSample {
  std::vector<double> spacings;
  int first_index = 0;  // window in the input level list, inclusive
  int last_index = 0;
  double e_lo = 0.0;
  double e_hi = 0.0;
  UnfoldMethod method = UnfoldMethod::mean_spacing;
};

struct SpacingOptions {
  UnfoldOptions unfold;
  /// Fraction of the lowest levels dropped before unfolding.
  double trim_fraction = 0.1;
  /// Collapse levels closer than collapse_tol * mean spacing (resonant spectra).
  bool collapse = false;
  double collapse_tol = 1e-6;
};

inline SpacingSample spacing_sample(const std::vector<double>& levels, const SpacingOptions& opt = {}) {
  check_sorted(levels);
  const auto skip = static_cast<std::size_t>(std::floor(opt.trim_fraction * static_cast<double>(levels.size())));
  std::vector<double> window(levels.begin() + static_cast<std::ptrdiff_t>(skip), levels.end());
  if (opt.collapse) {
    const double mean = (window.back() - window.front()) / static_cast<double>(window.size() - 1);
    window = collapse_degenerate(window, opt.collapse_tol * mean);
  } else {
    for (std::size_t i = 1; i < window.size(); ++i) {
      if (window[i] == window[i - 1]) {
        throw DomainError("duplicate levels in a statistics window; enable collapse for resonant spectra");
      }
    }
  }
  const auto u = unfold(window, opt.unfold);
  SpacingSample s;
  s.method = opt.unfold.method;
  s.first_index = static_cast<int>(skip);
  s.last_index = static_cast<int>(levels.size()) - 1;
  s.e_lo = window.front();
  s.e_hi = window.back();
  s.spacings.resize(u.size() - 1);
  for (std::size_t i = 0; i + 1 < u.size(); ++i) s.spacings[i] = u[i + 1] - u[i];
  return s;
}

struct SpacingDistribution {
  double bin_width = 0.1;
  /// Histogram density per bin on [0, bins * bin_width).
  std::vector<double> density;
  /// Sorted spacings; the empirical CDF at sorted[i] is (i + 1) / n.
  std::vector<double> sorted;

  double cdf(double s) const {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), s);
    return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
  }
};

inline SpacingDistribution spacing_distribution(const std::vector<double>& spacings, int bins = 40,
                                                double s_max = 4.0) {
  if (spacings.empty()) throw DomainError("empty spacing sample");
  SpacingDistribution d;
  d.bin_width = s_max / bins;
  d.density.assign(static_cast<std::size_t>(bins), 0.0);
  const double w = 1.0 / (static_cast<double>(spacings.size()) * d.bin_width);
  for (double s : spacings) {
    const auto b = static_cast<long>(std::floor(s / d.bin_width));
    if (b >= 0 && b < bins) d.density[static_cast<std::size_t>(b)] += w;
  }
  d.sorted = spacings;
  std::sort(d.sorted.begin(), d.sorted.end());
  return d;
}

/// Largest |F_emp(s_i) - F(s_i)| over the sample points, with the right-continuous empirical CDF.
inline double ks_distance(const std::vector<double>& spacings, Law law) {
  if (spacings.empty()) throw DomainError("empty spacing sample");
  std::vector<double> s = spacings;
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::size_t j = i;
    while (j + 1 < s.size() && s[j + 1] == s[i]) ++j;
    d = std::max(d, std::abs(static_cast<double>(j + 1) / n - reference_cdf(law, s[i])));
    i = j;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Weyl check

struct WeylPoint {
  double E = 0.0;
  double n_empirical = 0.0;  // number of levels <= E
  double n_weyl = 0.0;
  double ratio = 0.0;
};

/// Staircase against the smooth count at every distinct level.
inline std::vector<WeylPoint> weyl_check(const std::vector<double>& levels,
                                         const std::function<double(double)>& counting) {
  check_sorted(levels);
  std::vector<WeylPoint> out;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (i + 1 < levels.size() && levels[i + 1] == levels[i]) continue;
    WeylPoint p;
    p.E = levels[i];
    p.n_empirical = static_cast<double>(i + 1);
    p.n_weyl = counting(p.E);
    p.ratio = p.n_weyl > 0.0 ? p.n_empirical / p.n_weyl : std::numeric_limits<double>::infinity();
    out.push_back(p);
  }
  return out;
}

}  // namespace steposc::stats
