#pragma once

// Product eigenstates, WKB envelopes, perturbative mixing and concentration diagnostics.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "steposc/classical.hpp"
#include "steposc/error.hpp"
#include "steposc/grid.hpp"
#include "steposc/model.hpp"
#include "steposc/schrodinger.hpp"
#include "steposc/spectral_stats.hpp"

namespace steposc::wavefn {

struct ProductState {
  int k1 = 0;
  int k2 = 0;
  double energy = 0.0;
  /// Full-grid field, zero on the closed step, sum |psi|^2 h1 h2 = 1.
  Eigen::VectorXd field;
};

/// Odd-odd products psi_{k1}(q1) psi_{k2}(q2) restricted to the complement of
/// the step at the origin. The 1D spectra must live on the grid's own axes.
inline std::vector<ProductState> product_states(const Spectrum1D& s1, const Spectrum1D& s2, const fd::Grid2D& grid,
                                                const StepRegion& step, double e_max) {
  if (!step.at_origin()) throw DomainError("product eigenstates exist only for the step at the origin");
  if (!(s1.axis == grid.x1) || !(s2.axis == grid.x2)) throw DomainError("1D spectra must use the grid axes");
  std::vector<ProductState> out;
  for (int k1 = 1; k1 < static_cast<int>(s1.values.size()); k1 += 2) {
    for (int k2 = 1; k2 < static_cast<int>(s2.values.size()); k2 += 2) {
      const double E = s1.values[k1] + s2.values[k2];
      if (E > e_max) continue;
      ProductState p{k1, k2, E, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()))};
      for (int j2 = 0; j2 < grid.x2.n; ++j2) {
        for (int j1 = 0; j1 < grid.x1.n; ++j1) {
          if (fd::in_closed_step(step, grid.x1.node(j1), grid.x2.node(j2), grid.x1.h, grid.x2.h)) continue;
          p.field[static_cast<Eigen::Index>(grid.index(j1, j2))] = s1.vectors(j1, k1) * s2.vectors(j2, k2);
        }
      }
      p.field /= std::sqrt(p.field.squaredNorm() * grid.cell_area());
      out.push_back(std::move(p));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.energy < b.energy; });
  return out;
}

/// ||H x - E x|| / ||x|| for a full-grid field restricted to the operator's unknowns.
inline double eigen_residual(const fd::DiscreteHamiltonian& H, const Eigen::VectorXd& field, double E) {
  const Eigen::VectorXd x = H.from_field(field);
  return (H.matrix * x - E * x).norm() / x.norm();
}

// ---------------------------------------------------------------------------
// WKB

struct WkbPoint {
  bool classically_allowed = true;
  /// (2 |E - V|)^{-1/4}: the density envelope is its square.
  double amplitude = 0.0;
  /// d log|psi| / dq outside the allowed region, -sqrt(2 (V - E)); 0 inside.
  double decay_rate = 0.0;
};

inline WkbPoint wkb_profile(const Potential& v, double E, double q, double cutoff = 1e-3) {
  const double k = E - v(q);
  if (std::abs(k) < cutoff * std::max(1.0, std::abs(E))) {
    throw DomainError("WKB breaks down near the turning point q=" + std::to_string(q));
  }
  WkbPoint w;
  w.classically_allowed = k > 0.0;
  w.amplitude = std::pow(2.0 * std::abs(k), -0.25);
  if (!w.classically_allowed) w.decay_rate = -std::sqrt(-2.0 * k);
  return w;
}

// ---------------------------------------------------------------------------
// Counting prediction

namespace detail {

/// Smooth 1D levels up to `limit` from I(E) = k + 1/2 (exact for harmonic axes).
inline std::vector<double> semiclassical_ladder(const Potential& v, double limit) {
  std::vector<double> out;
  if (v.is_harmonic()) {
    for (int k = 0;; ++k) {
      const double e = v.minimum() + v.omega() * (k + 0.5);
      if (e > limit) break;
      out.push_back(e);
    }
    return out;
  }
  for (int k = 0;; ++k) {
    auto f = [&](double e) { return classical::action_1d(v, e) - (k + 0.5); };
    double lo = v.minimum() + 1e-12, hi = v.minimum() + 1.0;
    while (f(hi) < 0.0) hi = v.minimum() + 2.0 * (hi - v.minimum());
    boost::uintmax_t iters = 200;
    auto r = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(50), iters);
    const double e = 0.5 * (r.first + r.second);
    if (e > limit) break;
    out.push_back(e);
  }
  return out;
}

}  // namespace detail

struct FractionPrediction {
  int odd_odd = 0;
  int smooth = 0;
  /// odd_odd / (3/4 smooth).
  double fraction = 0.0;
};

inline FractionPrediction concentrated_fraction_prediction(const Potential& v1, const Potential& v2,
                                                           const StepRegion& step, double E) {
  if (!step.at_origin()) throw DomainError("the product-state fraction is defined for the step at the origin");
  const auto l1 = detail::semiclassical_ladder(v1, E - v2.minimum());
  const auto l2 = detail::semiclassical_ladder(v2, E - v1.minimum());
  FractionPrediction r;
  for (std::size_t a = 0; a < l1.size(); ++a) {
    for (std::size_t b = 0; b < l2.size(); ++b) {
      if (l1[a] + l2[b] > E) break;
      ++r.smooth;
      if (a % 2 == 1 && b % 2 == 1) ++r.odd_odd;
    }
  }
  r.fraction = r.smooth ? r.odd_odd / (0.75 * r.smooth) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Overlaps and mixing

struct Overlaps {
  Eigen::VectorXd coefficients;
  double captured = 0.0;  // sum of squares
  bool parseval_ok = true;
};

/// <basis_j | psi> with the grid weight h1 h2.
inline Overlaps overlap_coefficients(const Eigen::VectorXd& psi, const Eigen::MatrixXd& basis, double cell_area) {
  if (psi.size() != basis.rows()) throw DomainError("overlap fields live on different grids");
  Overlaps o;
  o.coefficients = basis.transpose() * psi * cell_area;
  o.captured = o.coefficients.squaredNorm();
  o.parseval_ok = o.captured <= 1.0 + 1e-6;
  return o;
}

struct MixingParams {
  int N = 151;   // 1-based first state
  int dN = 10;   // states N..N+dN inclusive
  int J = 400;   // unperturbed basis size
  double delta = 0.01;
  /// Relative gap (in units of the mean unperturbed spacing) joining degenerate basis states.
  double cluster_tol = 1e-6;
};

struct MixingReport {
  double P = 0.0;
  double T = 0.0;
  MixingParams params;
  double min_captured = 1.0;
  std::vector<std::string> warnings;
};

inline MixingReport mixing_metrics(const Spectrum& perturbed, const Spectrum& unperturbed, const MixingParams& prm) {
  if (!(perturbed.grid == unperturbed.grid)) throw DomainError("mixing needs both spectra on one grid");
  if (!perturbed.has_fields() || !unperturbed.has_fields()) throw DomainError("mixing needs stored eigenvectors");
  if (prm.N < 1 || prm.N + prm.dN > perturbed.size()) {
    throw DomainError("need " + std::to_string(prm.N + prm.dN) + " perturbed states, have " +
                      std::to_string(perturbed.size()));
  }
  if (prm.J > unperturbed.size()) {
    throw DomainError("need J=" + std::to_string(prm.J) + " unperturbed states, have " +
                      std::to_string(unperturbed.size()));
  }
  std::vector<double> base(unperturbed.values.begin(), unperturbed.values.begin() + prm.J);
  const double mean = (base.back() - base.front()) / std::max(prm.J - 1, 1);
  const auto clusters = stats::degeneracy_count(base, prm.cluster_tol * mean);
  const Eigen::MatrixXd basis = unperturbed.fields.leftCols(prm.J);

  MixingReport r;
  r.params = prm;
  double above = 0.0, mass = 0.0, psum = 0.0;
  for (int n = prm.N; n <= prm.N + prm.dN; ++n) {
    const auto o = overlap_coefficients(perturbed.fields.col(n - 1), basis, perturbed.grid.cell_area());
    const Eigen::VectorXd c2 = o.coefficients.array().square();
    double best = 0.0;
    for (const auto& c : clusters) best = std::max(best, c2.segment(c.first, c.multiplicity).sum());
    psum += best;
    above += static_cast<double>((c2.array() > prm.delta).count());
    mass += o.captured;
    r.min_captured = std::min(r.min_captured, o.captured);
    if (!o.parseval_ok) r.warnings.push_back("state " + std::to_string(n) + " violates Parseval");
  }
  r.P = psum / (prm.dN + 1);
  r.T = above / mass;
  if (r.min_captured < 0.9) {
    r.warnings.push_back("basis of J=" + std::to_string(prm.J) + " captures only " + std::to_string(r.min_captured) +
                         " of some state");
  }
  return r;
}

// ---------------------------------------------------------------------------
// Marginals and concentration

struct Marginals {
  /// M^H(q2) = \int |psi|^2 dq1, on the q2 nodes.
  Eigen::VectorXd horizontal;
  /// M^V(q1) = \int |psi|^2 dq2, on the q1 nodes.
  Eigen::VectorXd vertical;
};

inline Marginals marginal_means(const Eigen::VectorXd& psi, const fd::Grid2D& grid) {
  Marginals m;
  m.horizontal = Eigen::VectorXd::Zero(grid.x2.n);
  m.vertical = Eigen::VectorXd::Zero(grid.x1.n);
  for (int j2 = 0; j2 < grid.x2.n; ++j2) {
    for (int j1 = 0; j1 < grid.x1.n; ++j1) {
      const double d = psi[static_cast<Eigen::Index>(grid.index(j1, j2))];
      m.horizontal[j2] += d * d * grid.x1.h;
      m.vertical[j1] += d * d * grid.x2.h;
    }
  }
  return m;
}

namespace detail {

inline double argmax_node(const Eigen::VectorXd& m, const fd::AxisGrid& axis) {
  int best = 0;
  for (int j = 1; j < m.size(); ++j) {
    const double tie = 1e-12 * std::max(m[j], m[best]);
    if (m[j] > m[best] + tie) {
      best = j;
    } else if (std::abs(m[j] - m[best]) <= tie && std::abs(axis.node(j)) > std::abs(axis.node(best))) {
      best = j;
    }
  }
  return axis.node(best);
}

}  // namespace detail

struct ConcentrationReport {
  int n = 0;  // 1-based level index
  double energy = 0.0;
  double e_tilde = 0.0;
  double argmax_q1 = 0.0;  // of M^V
  double argmax_q2 = 0.0;  // of M^H
  bool concentrated = false;
  bool product = false;
};

inline ConcentrationReport e_tilde(const Eigen::VectorXd& psi, const fd::Grid2D& grid, const Potential& v1,
                                   const Potential& v2, double E, double threshold = 0.7) {
  const auto m = marginal_means(psi, grid);
  ConcentrationReport r;
  r.energy = E;
  r.argmax_q1 = detail::argmax_node(m.vertical, grid.x1);
  r.argmax_q2 = detail::argmax_node(m.horizontal, grid.x2);
  r.e_tilde = (v1(r.argmax_q1) + v2(r.argmax_q2)) / E;
  r.concentrated = r.e_tilde >= threshold;
  return r;
}

struct Census {
  std::vector<ConcentrationReport> reports;
  double fraction_concentrated = 0.0;
  double fraction_product = 0.0;
  /// Histogram of e_tilde on [0, 1], 20 bins (values above 1 land in the last bin).
  std::vector<int> histogram;
};

/// Reports for levels first..last (1-based, inclusive). States whose squared
/// overlap with some product field reaches `product_overlap` are flagged.
inline Census concentration_census(const Spectrum& s, int first, int last, const Potential& v1, const Potential& v2,
                                   double threshold = 0.7, const std::vector<ProductState>* products = nullptr,
                                   double product_overlap = 0.9) {
  if (!s.has_fields()) throw DomainError("concentration census needs stored eigenvectors");
  if (first < 1 || last > s.size() || first > last) throw DomainError("census window outside the spectrum");
  Census c;
  c.histogram.assign(20, 0);
  int conc = 0, prod = 0;
  for (int n = first; n <= last; ++n) {
    auto r = e_tilde(s.fields.col(n - 1), s.grid, v1, v2, s.values[n - 1], threshold);
    r.n = n;
    if (products) {
      for (const auto& p : *products) {
        const double o = p.field.dot(s.fields.col(n - 1)) * s.grid.cell_area();
        if (o * o >= product_overlap) {
          r.product = true;
          break;
        }
      }
    }
    conc += r.concentrated;
    prod += r.product;
    const int bin = std::clamp(static_cast<int>(std::floor(r.e_tilde * 20.0)), 0, 19);
    ++c.histogram[bin];
    c.reports.push_back(r);
  }
  const double count = last - first + 1;
  c.fraction_concentrated = conc / count;
  c.fraction_product = prod / count;
  return c;
}

/// log(|psi| + max |psi|), the plotting transform for density maps.
inline Eigen::VectorXd log_density_export(const Eigen::VectorXd& psi) {
  const double mx = psi.cwiseAbs().maxCoeff();
  if (!(mx > 0.0)) throw DomainError("log-density export of an identically zero field");
  return (psi.cwiseAbs().array() + mx).log().matrix();
}

}  // namespace steposc::wavefn
