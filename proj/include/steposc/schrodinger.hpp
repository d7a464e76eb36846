#pragma once

// Finite-difference spectra of the step oscillator (2D) and of single axes (1D).

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <lapacke.h>

#include "steposc/eigensolver.hpp"
#include "steposc/grid.hpp"
#include "steposc/hamiltonian.hpp"
#include "steposc/model.hpp"
#include "steposc/semiclassics.hpp"

namespace steposc {

/// Sorted eigenvalues with full-grid fields normalized by sum |psi|^2 h1 h2 = 1.
struct Spectrum {
  fd::Grid2D grid;
  std::vector<double> values;
  /// Column k holds the field of values[k] in row-major grid order; may be empty.
  Eigen::MatrixXd fields;
  /// ||H x - E x|| for the unit (Euclidean) unknown vector x.
  std::vector<double> residuals;
  int factorizations = 0;
  int lanczos_steps = 0;

  int size() const { return static_cast<int>(values.size()); }
  bool has_fields() const { return fields.cols() == static_cast<Eigen::Index>(values.size()) && fields.size() > 0; }
};

namespace detail {

/// Flips v so its largest-magnitude entry (first one on ties) is positive.
inline void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index at = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > best * (1.0 + 1e-9)) {
      best = std::abs(v[i]);
      at = i;
    }
  }
  if (v[at] < 0.0) v = -v;
}

}  // namespace detail

/// Lowest K eigenpairs of an assembled discrete Hamiltonian.
inline Spectrum lowest_eigenpairs(const fd::DiscreteHamiltonian& H, int K, const fd::EigenOptions& opt = {},
                                  bool keep_fields = true) {
  double vmin = std::numeric_limits<double>::infinity();
  for (double v : H.potential) vmin = std::min(vmin, v);
  auto count = [&H](double E) { return H.estimated_count(E); };
  fd::EigenResult r = fd::lowest_eigenpairs(H.matrix, K, count, vmin, opt);

  Spectrum s;
  s.grid = H.grid;
  s.values = std::move(r.values);
  s.residuals = std::move(r.residuals);
  s.factorizations = r.factorizations;
  s.lanczos_steps = r.lanczos_steps;
  if (keep_fields) {
    const double scale = 1.0 / std::sqrt(H.grid.cell_area());
    s.fields.resize(static_cast<Eigen::Index>(H.grid.size()), K);
    for (int k = 0; k < K; ++k) {
      Eigen::VectorXd x = r.vectors.col(k);
      detail::fix_sign(x);
      s.fields.col(k) = H.to_field(x) * scale;
    }
  }
  return s;
}

struct SolveOptions {
  fd::GridOptions grid;
  fd::StepMode mode = fd::StepMode::excluded_nodes;
  fd::EigenOptions eigen;
  bool keep_fields = true;
  /// Grid sized for the energy where the Weyl count reaches margin * K + 10.
  double level_margin = 1.15;
};

/// Energy at which the leading Weyl count reaches `count`.
inline double weyl_energy(double count, const Potential& v1, const Potential& v2, const StepRegion& step) {
  const double vmin = v1.minimum() + v2.minimum();
  auto f = [&](double E) { return semiclassics::weyl_count(E, v1, v2, step) - count; };
  double lo = vmin, hi = vmin + 1.0;
  while (f(hi) < 0.0) {
    lo = hi;
    hi = vmin + 2.0 * (hi - vmin);
  }
  boost::uintmax_t iters = 100;
  auto r = boost::math::tools::toms748_solve(f, lo, hi, boost::math::tools::eps_tolerance<double>(30), iters);
  return 0.5 * (r.first + r.second);
}

/// Grid, operator and lowest K eigenpairs in one call.
inline Spectrum solve_spectrum(const Potential& v1, const Potential& v2, const StepRegion& step, int K,
                               const SolveOptions& opt = {}) {
  fd::GridOptions g = opt.grid;
  g.levels = K;
  const double e_max = weyl_energy(opt.level_margin * K + 10.0, v1, v2, step);
  const auto grid = fd::build_grid(v1, v2, step, e_max, g);
  const auto H = fd::build_hamiltonian(grid, v1, v2, step, opt.mode);
  return lowest_eigenpairs(H, K, opt.eigen, opt.keep_fields);
}

// ---------------------------------------------------------------------------
// One dimension

struct Spectrum1D {
  fd::AxisGrid axis;
  std::vector<double> values;
  /// Column k: psi_k at the interior nodes, sum psi^2 h = 1.
  Eigen::MatrixXd vectors;
  /// +1 even, -1 odd about the potential's minimum (index parity, k = 0 even).
  std::vector<int> parity;
  /// max |psi(c + u) - parity psi(c - u)| over mirrored nodes; NaN if the grid is not symmetric.
  std::vector<double> parity_defect;
};

/// Lowest K eigenpairs of -1/2 d^2/dq^2 + V on the interior nodes of `axis`
/// (Dirichlet at both ends), by LAPACK's tridiagonal MRRR solver.
inline Spectrum1D solve_1d(const Potential& v, int K, const fd::AxisGrid& axis) {
  const int n = axis.n;
  if (K <= 0 || K > n) throw DomainError("solve_1d needs 1 <= K <= grid size");
  const double h = axis.h;
  std::vector<double> d(n), e(std::max(n - 1, 1));
  for (int j = 0; j < n; ++j) d[j] = 1.0 / (h * h) + v(axis.node(j));
  for (int j = 0; j + 1 < n; ++j) e[j] = -0.5 / (h * h);

  std::vector<double> w(n);
  Eigen::MatrixXd z(n, K);
  std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(K));
  lapack_int found = 0;
  const lapack_int info = LAPACKE_dstevr(LAPACK_COL_MAJOR, 'V', 'I', n, d.data(), e.data(), 0.0, 0.0, 1, K, 0.0,
                                         &found, w.data(), z.data(), n, isuppz.data());
  if (info != 0 || found != K) {
    throw fd::ConvergenceError("dstevr failed (info=" + std::to_string(info) + ")", {});
  }

  Spectrum1D s;
  s.axis = axis;
  s.values.assign(w.begin(), w.begin() + K);
  s.vectors = z / std::sqrt(h);
  s.parity.resize(K);
  s.parity_defect.resize(K);
  // Mirror of node j about the centre, if it is a node.
  const double mirror0 = 2.0 * (v.center() - axis.lo) / h - 2.0;
  const long shift = std::lround(mirror0);
  const bool symmetric = std::abs(mirror0 - static_cast<double>(shift)) < 1e-6;
  for (int k = 0; k < K; ++k) {
    const int par = k % 2 == 0 ? 1 : -1;
    auto col = s.vectors.col(k);
    if (symmetric) {
      detail::fix_sign(col);
      double defect = 0.0;
      for (int j = 0; j < n; ++j) {
        const long m = shift - j;
        if (m < 0 || m >= n) continue;
        defect = std::max(defect, std::abs(col[j] - par * col[m]));
      }
      s.parity_defect[k] = defect;
      // Odd states: the largest lobe right of the centre is positive.
      if (par < 0) {
        Eigen::Index at = 0;
        col.cwiseAbs().maxCoeff(&at);
        if (axis.node(static_cast<int>(at)) < v.center()) {
          if (col[at] > 0) col = -col;
        } else if (col[at] < 0) {
          col = -col;
        }
      }
    } else {
      detail::fix_sign(col);
      s.parity_defect[k] = std::numeric_limits<double>::quiet_NaN();
    }
    s.parity[k] = par;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Convergence

struct ConvergenceReport {
  /// values[g][k]: level k on grid g (g = 0 coarsest, spacing halves each step).
  std::vector<std::vector<double>> values;
  /// Observed order log2(|E0 - E1| / |E1 - E2|) from the last three grids.
  std::vector<double> observed_order;
  /// Romberg extrapolation assuming an even expansion h^2, h^4.
  std::vector<double> extrapolated;
  /// Levels whose differences change sign or grow under refinement.
  std::vector<int> non_monotone;
};

/// `solve(g)` returns the eigenvalues on refinement level g (spacing h / 2^g).
inline ConvergenceReport convergence_study(const std::function<std::vector<double>(int)>& solve, int grids = 3) {
  if (grids < 3) throw DomainError("convergence study needs at least 3 grids");
  ConvergenceReport r;
  for (int g = 0; g < grids; ++g) r.values.push_back(solve(g));
  std::size_t K = r.values[0].size();
  for (const auto& v : r.values) K = std::min(K, v.size());
  const auto& a = r.values[grids - 3];
  const auto& b = r.values[grids - 2];
  const auto& c = r.values[grids - 1];
  r.observed_order.resize(K);
  r.extrapolated.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double d1 = a[k] - b[k];
    const double d2 = b[k] - c[k];
    r.observed_order[k] = std::log2(std::abs(d1) / std::abs(d2));
    if (d1 * d2 < 0.0 || std::abs(d2) > std::abs(d1)) r.non_monotone.push_back(static_cast<int>(k));
    const double r1 = (4.0 * b[k] - a[k]) / 3.0;
    const double r2 = (4.0 * c[k] - b[k]) / 3.0;
    r.extrapolated[k] = (16.0 * r2 - r1) / 15.0;
  }
  return r;
}

}  // namespace steposc
