#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>

#include "steposc/error.hpp"
#include "steposc/model.hpp"

namespace steposc::fd {

/// Uniform axis with Dirichlet boundary nodes at `lo` and `lo + (n + 1) h`.
/// Interior node j (0-based) sits at lo + (j + 1) h.
struct AxisGrid {
  double lo = 0.0;
  int n = 0;
  double h = 1.0;

  double node(int j) const { return lo + static_cast<double>(j + 1) * h; }
  double hi() const { return lo + static_cast<double>(n + 1) * h; }
  bool operator==(const AxisGrid&) const = default;
};

/// Tensor grid over [q1_lo, q1_hi] x [q2_lo, q2_hi]. Fields are stored row-major:
/// index = j2 * n1 + j1, so q1 varies fastest.
struct Grid2D {
  AxisGrid x1;
  AxisGrid x2;

  std::size_t size() const { return static_cast<std::size_t>(x1.n) * static_cast<std::size_t>(x2.n); }
  std::size_t index(int j1, int j2) const {
    return static_cast<std::size_t>(j2) * static_cast<std::size_t>(x1.n) + static_cast<std::size_t>(j1);
  }
  double cell_area() const { return x1.h * x2.h; }
  bool operator==(const Grid2D&) const = default;
};

struct GridOptions {
  double points_per_wavelength = 8.0;
  /// Outer boundary sits where the potential reaches this multiple of E_max.
  double confinement = 1.8;
  /// Eigenvector count used for the memory estimate.
  int levels = 0;
  double memory_budget_bytes = 3.0e9;
};

namespace detail {

inline AxisGrid anchored_axis(double edge_lo, double edge_hi, double anchor, double h) {
  const double k_lo = std::ceil((anchor - edge_lo) / h - 1e-9);
  const double k_hi = std::ceil((edge_hi - anchor) / h - 1e-9);
  AxisGrid a;
  a.h = h;
  a.lo = anchor - k_lo * h;
  a.n = static_cast<int>(k_lo + k_hi) - 1;
  return a;
}

inline double estimated_bytes(const Grid2D& g, int levels) {
  const double n = static_cast<double>(g.size());
  // Eigenvectors, Lanczos basis (about 200 vectors) and the sparse factor.
  const double factor = 40.0 * n * std::log2(std::max(n, 2.0));
  return 8.0 * n * (static_cast<double>(levels) + 200.0) + 12.0 * factor;
}

}  // namespace detail

/// Spacing and extents for a set of potential pairs sharing one grid.
///
/// Each axis extends until V_i plus the other axis' minimum reaches
/// Vmin + c (E_max - Vmin); the spacing resolves the shortest classical
/// de Broglie wavelength 2 pi / sqrt(2 (E_max - Vmin)) with the requested number
/// of points. Nodes are anchored on the step walls so the walls are grid lines.
inline Grid2D build_grid(std::span<const std::pair<Potential, Potential>> members, const StepRegion& step,
                         double e_max, const GridOptions& opt = {}) {
  if (members.empty()) throw DomainError("build_grid needs at least one potential pair");
  if (!(opt.points_per_wavelength >= 4.0)) throw DomainError("points_per_wavelength must be >= 4");
  if (!(opt.confinement > 1.0)) throw DomainError("confinement factor must exceed 1");

  double h = std::numeric_limits<double>::infinity();
  double lo1 = std::numeric_limits<double>::infinity(), hi1 = -lo1;
  double lo2 = lo1, hi2 = -lo1;
  for (const auto& [v1, v2] : members) {
    const double vmin = v1.minimum() + v2.minimum();
    if (!(e_max > vmin)) throw DomainError("E_max must exceed the potential minimum");
    const double kinetic = e_max - vmin;
    h = std::min(h, 2.0 * std::numbers::pi / std::sqrt(2.0 * kinetic) / opt.points_per_wavelength);
    const double target = vmin + opt.confinement * kinetic;
    const double u1 = v1.half_width(target - v2.minimum());
    const double u2 = v2.half_width(target - v1.minimum());
    lo1 = std::min(lo1, v1.center() - u1);
    hi1 = std::max(hi1, v1.center() + u1);
    lo2 = std::min(lo2, v2.center() - u2);
    hi2 = std::max(hi2, v2.center() + u2);
  }
  Grid2D g;
  g.x1 = detail::anchored_axis(lo1, hi1, step.q1_wall, h);
  g.x2 = detail::anchored_axis(lo2, hi2, step.q2_wall, h);

  const double bytes = detail::estimated_bytes(g, opt.levels);
  if (bytes > opt.memory_budget_bytes) {
    throw SizingError("grid " + std::to_string(g.x1.n) + "x" + std::to_string(g.x2.n) + " needs about " +
                      std::to_string(bytes / 1e9) + " GB (budget " + std::to_string(opt.memory_budget_bytes / 1e9) +
                      " GB); reduce the level count, E_max or points_per_wavelength");
  }
  return g;
}

inline Grid2D build_grid(const Potential& v1, const Potential& v2, const StepRegion& step, double e_max,
                         const GridOptions& opt = {}) {
  const std::pair<Potential, Potential> one[] = {{v1, v2}};
  return build_grid(one, step, e_max, opt);
}

/// Same extents, spacing divided by `factor` (nodes of the coarse grid are kept).
inline Grid2D refine(const Grid2D& g, int factor) {
  Grid2D r = g;
  r.x1.h = g.x1.h / factor;
  r.x1.n = (g.x1.n + 1) * factor - 1;
  r.x2.h = g.x2.h / factor;
  r.x2.n = (g.x2.n + 1) * factor - 1;
  return r;
}

}  // namespace steposc::fd
