#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "steposc/schrodinger.hpp"
#include "steposc/wavefn.hpp"

using namespace steposc;

namespace {

// Ground state of -1/2 psi'' + V psi by even shooting from q = 0 with RK4.
template <class V>
double shoot_even_ground(V v, double lo, double hi, double L) {
  auto end_value = [&](double E) {
    const int n = 40000;
    const double h = L / n;
    double y = 1.0, dy = 0.0, q = 0.0;
    auto f = [&](double qq, double yy) { return 2.0 * (v(qq) - E) * yy; };
    for (int i = 0; i < n; ++i) {
      const double k1y = dy, k1d = f(q, y);
      const double k2y = dy + 0.5 * h * k1d, k2d = f(q + 0.5 * h, y + 0.5 * h * k1y);
      const double k3y = dy + 0.5 * h * k2d, k3d = f(q + 0.5 * h, y + 0.5 * h * k2y);
      const double k4y = dy + h * k3d, k4d = f(q + h, y + h * k3y);
      y += h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y);
      dy += h / 6 * (k1d + 2 * k2d + 2 * k3d + k4d);
      q += h;
      if (std::abs(y) > 1e30) break;
    }
    return y;
  };
  const double s_lo = end_value(lo);
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((end_value(mid) > 0) == (s_lo > 0)) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

fd::Grid2D small_grid(const Potential& v1, const Potential& v2, const StepRegion& st, double e_max, double ppw) {
  fd::GridOptions g;
  g.points_per_wavelength = ppw;
  return fd::build_grid(v1, v2, st, e_max, g);
}

}  // namespace

TEST(Solve1D, MatchesDenseTridiagonal) {
  const auto v = Potential::harmonic(1.3, 0.4);
  const fd::AxisGrid ax{-6.0, 120, 12.0 / 121};
  const auto s = solve_1d(v, 8, ax);
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(ax.n, ax.n);
  for (int j = 0; j < ax.n; ++j) {
    T(j, j) = 1.0 / (ax.h * ax.h) + v(ax.node(j));
    if (j + 1 < ax.n) T(j, j + 1) = T(j + 1, j) = -0.5 / (ax.h * ax.h);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
  for (int k = 0; k < 8; ++k) EXPECT_NEAR(s.values[k], es.eigenvalues()[k], 1e-10);
  for (int k = 0; k < 8; ++k) EXPECT_NEAR(s.vectors.col(k).squaredNorm() * ax.h, 1.0, 1e-12);
}

TEST(Solve1D, HarmonicConvergesQuadratically) {
  const auto v = Potential::harmonic(1.0);
  double prev = 0.0;
  for (int g = 0; g < 3; ++g) {
    const int n = (81 << g) - 1 + (1 << g);
    const fd::AxisGrid ax{-8.0, n, 16.0 / (n + 1)};
    const auto s = solve_1d(v, 4, ax);
    const double err = std::abs(s.values[3] - 3.5);
    if (g > 0) EXPECT_NEAR(prev / err, 4.0, 0.2);
    prev = err;
  }
}

TEST(Solve1D, QuarticGroundStateAgainstShooting) {
  const auto v = Potential::tabulate([](double q) { return q * q * q * q; }, 0.0, 6.0, 6001);
  const double shot = shoot_even_ground([](double q) { return q * q * q * q; }, 0.3, 1.0, 4.0);
  EXPECT_NEAR(shot, 0.667986, 2e-6);
  const fd::AxisGrid ax{-5.0, 1999, 10.0 / 2000};
  EXPECT_NEAR(solve_1d(v, 1, ax).values[0], shot, 2e-5);
}

TEST(Solve1D, ParityAndSign) {
  const auto v = Potential::harmonic(1.0);
  const fd::AxisGrid ax{-8.0, 159, 16.0 / 160};
  const auto s = solve_1d(v, 6, ax);
  for (int k = 0; k < 6; ++k) {
    EXPECT_EQ(s.parity[k], k % 2 ? -1 : 1);
    EXPECT_LT(s.parity_defect[k], 1e-9);
  }
  EXPECT_THROW(solve_1d(v, 0, ax), DomainError);
}

TEST(Spectrum2D, SmoothSpectrumIsSumOf1DSpectra) {
  const auto v1 = Potential::harmonic(1.0), v2 = Potential::harmonic(std::sqrt(2.0), 0.3);
  const StepRegion none(-40, -40);
  const auto g = small_grid(v1, v2, none, 12.0, 8.0);
  const auto H = fd::build_hamiltonian(g, v1, v2, none);
  const auto s = lowest_eigenpairs(H, 20);
  const auto a = solve_1d(v1, 12, g.x1), b = solve_1d(v2, 12, g.x2);
  std::vector<double> sums;
  for (double x : a.values) for (double y : b.values) sums.push_back(x + y);
  std::sort(sums.begin(), sums.end());
  for (int k = 0; k < 20; ++k) EXPECT_NEAR(s.values[k], sums[k], 1e-8 * std::abs(sums[k])) << k;
}

TEST(Spectrum2D, FieldsNormalizedAndResidualsSmall) {
  const auto v = Potential::harmonic(1.0);
  const StepRegion st(0, 0);
  const auto g = small_grid(v, v, st, 10.0, 8.0);
  const auto s = lowest_eigenpairs(fd::build_hamiltonian(g, v, v, st), 15);
  ASSERT_TRUE(s.has_fields());
  EXPECT_TRUE(std::is_sorted(s.values.begin(), s.values.end()));
  for (int k = 0; k < 15; ++k) {
    EXPECT_NEAR(s.fields.col(k).squaredNorm() * g.cell_area(), 1.0, 1e-10);
    EXPECT_LT(s.residuals[k], 1e-8 * std::max(1.0, s.values[k]));
  }
}

TEST(Spectrum2D, PenaltyAgreesWithExcludedNodes) {
  const auto v1 = Potential::harmonic(1.0), v2 = Potential::harmonic(std::sqrt(2.0));
  const StepRegion st(-0.5, -0.5);
  const auto g = small_grid(v1, v2, st, 9.0, 8.0);
  const auto a = lowest_eigenpairs(fd::build_hamiltonian(g, v1, v2, st, fd::StepMode::excluded_nodes), 12, {}, false);
  const auto b = lowest_eigenpairs(fd::build_hamiltonian(g, v1, v2, st, fd::StepMode::penalty), 12, {}, false);
  for (int k = 0; k < 12; ++k) EXPECT_NEAR(a.values[k], b.values[k], 1e-8 * a.values[k]);
}

TEST(Spectrum2D, StepRaisesLevels) {
  const auto v = Potential::harmonic(1.0);
  const auto g = small_grid(v, v, StepRegion(0, 0), 8.0, 8.0);
  const auto s0 = lowest_eigenpairs(fd::build_hamiltonian(g, v, v, StepRegion(-40, -40)), 10, {}, false);
  const auto s1 = lowest_eigenpairs(fd::build_hamiltonian(g, v, v, StepRegion(0, 0)), 10, {}, false);
  for (int k = 0; k < 10; ++k) EXPECT_GE(s1.values[k], s0.values[k] - 1e-10);
}

TEST(Spectrum2D, ProductFieldsAreDiscreteEigenvectors) {
  const auto v = Potential::harmonic(1.0);
  const StepRegion st(0, 0);
  const auto g = small_grid(v, v, st, 12.0, 8.0);
  const auto H = fd::build_hamiltonian(g, v, v, st);
  const auto ps = wavefn::product_states(solve_1d(v, 12, g.x1), solve_1d(v, 12, g.x2), g, st, 12.0);
  ASSERT_GE(ps.size(), 6u);
  for (const auto& p : ps) EXPECT_LT(wavefn::eigen_residual(H, p.field, p.energy), 1e-9);
}

TEST(Spectrum2D, Deterministic) {
  const auto v1 = Potential::harmonic(1.0), v2 = Potential::harmonic(std::sqrt(2.0));
  const StepRegion st(0, 0);
  const auto g = small_grid(v1, v2, st, 10.0, 8.0);
  const auto H = fd::build_hamiltonian(g, v1, v2, st);
  const auto a = lowest_eigenpairs(H, 12), b = lowest_eigenpairs(H, 12);
  EXPECT_EQ(a.values, b.values);
  EXPECT_TRUE(a.fields == b.fields);
}

TEST(Spectrum2D, SolveSpectrumSizesGrid) {
  const auto v = Potential::harmonic(1.0);
  SolveOptions opt;
  opt.keep_fields = false;
  const auto s = solve_spectrum(v, v, StepRegion(0, 0), 25, opt);
  ASSERT_EQ(s.size(), 25);
  // Low levels sit on the EBK ladder 2k/3 + 5/3 within discretization error.
  EXPECT_NEAR(s.values[0], 5.0 / 3.0 + 1.0 / 3.0, 0.4);
  EXPECT_GT(weyl_energy(100, v, v, StepRegion(0, 0)), weyl_energy(50, v, v, StepRegion(0, 0)));
}

TEST(Spectrum2D, MemoryBudgetEnforced) {
  const auto v = Potential::harmonic(1.0);
  fd::GridOptions g;
  g.levels = 100;
  g.memory_budget_bytes = 1e5;
  EXPECT_THROW(fd::build_grid(v, v, StepRegion(0, 0), 40.0, g), SizingError);
}

TEST(Convergence, RombergIsExactForEvenPolynomial) {
  auto solve = [](int g) {
    const double h = 0.1 / (1 << g);
    return std::vector<double>{1.0 + 2.0 * h * h + 5.0 * std::pow(h, 4), 3.0 - h * h};
  };
  const auto r = convergence_study(solve, 3);
  EXPECT_NEAR(r.extrapolated[0], 1.0, 1e-12);
  EXPECT_NEAR(r.extrapolated[1], 3.0, 1e-12);
  EXPECT_NEAR(r.observed_order[1], 2.0, 1e-9);
  EXPECT_TRUE(r.non_monotone.empty());
  EXPECT_THROW(convergence_study(solve, 2), DomainError);
}
