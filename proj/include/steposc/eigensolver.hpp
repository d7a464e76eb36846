#pragma once

// Lowest eigenpairs of a large sparse symmetric matrix by spectrum slicing:
// shift-invert Lanczos with full reorthogonalization inside each slice, locking
// of converged pairs, and Sylvester-inertia counts from the LDL^T factor of
// (A - sigma I) to certify that no eigenvalue in a slice was missed
// (including copies of degenerate eigenvalues, which need restarts).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "steposc/error.hpp"

namespace steposc::fd {

struct EigenOptions {
  /// Residual bound ||A x - lambda x|| <= tol * max(1, |lambda|) for unit x.
  double tol = 1e-8;
  /// Target number of eigenvalues per slice.
  int slice_size = 60;
  /// Restarts allowed per slice before giving up.
  int max_restarts = 40;
  int check_interval = 10;
  std::uint64_t seed = 20240611;
};

struct EigenResult {
  std::vector<double> values;
  /// Column k is the unit-norm (Euclidean) eigenvector of values[k].
  Eigen::MatrixXd vectors;
  std::vector<double> residuals;
  int factorizations = 0;
  int lanczos_steps = 0;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, EigenResult partial_result)
      : Error(what), partial(std::move(partial_result)) {}
  EigenResult partial;
};

namespace detail {

class ShiftedFactor {
 public:
  explicit ShiftedFactor(const Eigen::SparseMatrix<double>& a) : a_(a) { ldlt_.analyzePattern(a_); }

  /// Factorizes A - sigma I, nudging sigma off near-singular pivots. Returns the shift used.
  double factor(double sigma, double scale) {
    for (int attempt = 0; attempt < 8; ++attempt) {
      ldlt_.setShift(-sigma);
      ldlt_.factorize(a_);
      if (ldlt_.info() == Eigen::Success) {
        const auto& d = ldlt_.vectorD();
        const double smallest = d.cwiseAbs().minCoeff();
        if (smallest > 1e-11 * scale) {
          negatives_ = static_cast<int>((d.array() < 0.0).count());
          return sigma;
        }
      }
      sigma += 1e-7 * scale * (attempt + 1);
    }
    throw Error("could not factor shifted matrix near sigma=" + std::to_string(sigma));
  }

  int negatives() const { return negatives_; }
  Eigen::VectorXd solve(const Eigen::VectorXd& x) const { return ldlt_.solve(x); }

 private:
  const Eigen::SparseMatrix<double>& a_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt_;
  int negatives_ = 0;
};

inline double gershgorin_lower(const Eigen::SparseMatrix<double>& a) {
  double lo = std::numeric_limits<double>::infinity();
  for (int k = 0; k < a.outerSize(); ++k) {
    double diag = 0.0, off = 0.0;
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it) {
      if (it.row() == it.col()) {
        diag = it.value();
      } else {
        off += std::abs(it.value());
      }
    }
    lo = std::min(lo, diag - off);
  }
  return lo;
}

}  // namespace detail

/// Computes the K algebraically smallest eigenpairs of the symmetric matrix A.
///
/// `estimate_count(E)` should approximate the number of eigenvalues below E; it
/// is only used to place slice boundaries (inertia counts are authoritative).
/// `lower_bound` must not exceed the smallest eigenvalue.
inline EigenResult lowest_eigenpairs(const Eigen::SparseMatrix<double>& A, int K,
                                     const std::function<double(double)>& estimate_count, double lower_bound,
                                     const EigenOptions& opt = {}) {
  const Eigen::Index n = A.rows();
  if (K <= 0 || K >= n) throw DomainError("requested eigenpair count must be in [1, dimension)");

  EigenResult out;
  Eigen::MatrixXd locked(n, 0);
  std::vector<double> locked_vals;
  std::vector<double> locked_res;

  detail::ShiftedFactor factor(A);
  double scale = 1.0;
  // Unknowns pinned by an enormous diagonal carry O(1/diag) amplitude; roundoff there
  // would otherwise dominate the Rayleigh quotients, so they are held at zero.
  std::vector<Eigen::Index> pinned;
  for (int k = 0; k < A.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it) {
      if (it.row() != it.col()) continue;
      scale = std::max(scale, std::min(std::abs(it.value()), 1e6));
      if (std::abs(it.value()) >= 1e20) pinned.push_back(it.row());
    }
  }
  auto unpin = [&](auto&& x) {
    for (Eigen::Index i : pinned) x.row(i).setZero();
  };

  double a = lower_bound;
  int count_a = 0;
  int slice = 0;
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss;

  auto solve_for_count = [&](double target) {
    // Smallest E with estimate_count(E) >= target.
    double lo = a, step = 1.0, hi = a + step;
    while (estimate_count(hi) < target) {
      lo = hi;
      step *= 2.0;
      hi = a + step;
      if (step > 1e12) break;
    }
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (estimate_count(mid) < target ? lo : hi) = mid;
    }
    return hi;
  };

  while (static_cast<int>(locked_vals.size()) < K) {
    const int have = static_cast<int>(locked_vals.size());
    const int want = std::min(opt.slice_size, K - have + 2);
    // Place b so the estimated slice holds about `want` eigenvalues, then adjust with inertia.
    double b = solve_for_count(estimate_count(a) + want);
    b = std::max(b, a + 1e-6 * scale);
    b = factor.factor(b, scale);
    ++out.factorizations;
    int count_b = factor.negatives();
    for (int adjust = 0; adjust < 12; ++adjust) {
      const int in_slice = count_b - count_a;
      if (in_slice > 2 * opt.slice_size) {
        b = a + 0.6 * (b - a) * std::sqrt(static_cast<double>(want) / in_slice);
      } else if (in_slice == 0) {
        b = a + 2.0 * (b - a);
      } else {
        break;
      }
      b = factor.factor(b, scale);
      ++out.factorizations;
      count_b = factor.negatives();
    }
    const int target = count_b - count_a;
    if (target <= 0) throw Error("spectrum slicing stalled above " + std::to_string(a));

    const int max_steps =
        static_cast<int>(std::min<Eigen::Index>(n - locked.cols() - 1, std::max(2 * target + 40, 80)));
    int found = 0;
    int restarts = 0;
    while (found < target) {
      if (restarts++ > opt.max_restarts) {
        out.values = locked_vals;
        out.residuals = locked_res;
        out.vectors = locked;
        throw ConvergenceError("slice [" + std::to_string(a) + ", " + std::to_string(b) + ") converged " +
                                   std::to_string(found) + " of " + std::to_string(target) + " eigenvalues",
                               std::move(out));
      }
      Eigen::MatrixXd Q(n, max_steps + 1);
      std::vector<double> alpha, beta;
      Eigen::VectorXd q(n);
      for (Eigen::Index i = 0; i < n; ++i) q[i] = gauss(rng);
      unpin(q);
      for (int pass = 0; pass < 2; ++pass) {
        if (locked.cols() > 0) q.noalias() -= locked * (locked.transpose() * q);
      }
      q.normalize();
      Q.col(0) = q;

      struct Candidate {
        double theta;
        int index;
      };
      std::vector<Candidate> converged;
      Eigen::MatrixXd ritz_vecs;
      int steps = 0;
      for (int j = 0; j < max_steps; ++j) {
        Eigen::VectorXd w = factor.solve(Q.col(j));
        unpin(w);
        ++out.lanczos_steps;
        if (j > 0) w -= beta[j - 1] * Q.col(j - 1);
        const double aj = Q.col(j).dot(w);
        w -= aj * Q.col(j);
        if (locked.cols() > 0) w.noalias() -= locked * (locked.transpose() * w);
        for (int pass = 0; pass < 2; ++pass) {
          w.noalias() -= Q.leftCols(j + 1) * (Q.leftCols(j + 1).transpose() * w);
        }
        alpha.push_back(aj);
        const double bj = w.norm();
        beta.push_back(bj);
        steps = j + 1;
        const bool exhausted = bj < 1e-13 * std::abs(aj);
        if (!exhausted) Q.col(j + 1) = w / bj;

        if (steps % opt.check_interval != 0 && steps != max_steps && !exhausted) continue;

        Eigen::VectorXd diag = Eigen::Map<Eigen::VectorXd>(alpha.data(), steps);
        Eigen::VectorXd sub = Eigen::Map<Eigen::VectorXd>(beta.data(), std::max(steps - 1, 0));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
        tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
        // ||(A - sigma) q_{j+1}|| turns the Lanczos residual estimate into an A-residual.
        double kq = 0.0;
        if (!exhausted) {
          Eigen::VectorXd next = Q.col(j + 1);
          kq = (A * next - b * next).norm();
        }
        converged.clear();
        int in_slice = 0;
        for (int i = 0; i < steps; ++i) {
          const double theta = tri.eigenvalues()[i];
          if (theta == 0.0) continue;
          const double lambda = b + 1.0 / theta;
          const double est = std::abs(bj * tri.eigenvectors()(steps - 1, i) / theta) * kq;
          if (est <= 0.1 * opt.tol * std::max(1.0, std::abs(lambda)) && lambda >= a && lambda < b) {
            converged.push_back({theta, i});
            ++in_slice;
          }
        }
        if (found + in_slice >= target || exhausted || steps == max_steps) {
          ritz_vecs = tri.eigenvectors();
          break;
        }
      }

      // Lock converged Ritz pairs, keeping the ones closest to the shift if there are too many.
      std::sort(converged.begin(), converged.end(),
                [](const Candidate& x, const Candidate& y) { return std::abs(x.theta) > std::abs(y.theta); });
      if (static_cast<int>(converged.size()) > target - found) converged.resize(target - found);
      const auto new_cols = static_cast<Eigen::Index>(converged.size());
      if (new_cols == 0) continue;
      Eigen::MatrixXd X(n, new_cols);
      for (Eigen::Index c = 0; c < new_cols; ++c) {
        X.col(c) = Q.leftCols(steps) * ritz_vecs.col(converged[c].index).head(steps);
      }
      // Re-orthonormalize against locked vectors and among themselves.
      if (locked.cols() > 0) X -= locked * (locked.transpose() * X);
      unpin(X);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
      X = qr.householderQ() * Eigen::MatrixXd::Identity(n, new_cols);
      unpin(X);
      // Rayleigh-Ritz on the new block diagonalizes any remaining mixing.
      Eigen::MatrixXd AX = A * X;
      Eigen::MatrixXd G = X.transpose() * AX;
      G = 0.5 * (G + G.transpose()).eval();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> rr(G);
      X = X * rr.eigenvectors();
      AX = AX * rr.eigenvectors();
      // Only pairs whose true residual meets tol are locked; pinned rows are
      // dropped since their exact amplitude (not zero) would cancel them.
      for (Eigen::Index c = 0; c < new_cols; ++c) {
        const double lambda = rr.eigenvalues()[c];
        Eigen::VectorXd r = AX.col(c) - lambda * X.col(c);
        unpin(r);
        const double res = r.norm();
        if (res > opt.tol * std::max(1.0, std::abs(lambda))) continue;
        locked.conservativeResize(n, locked.cols() + 1);
        locked.col(locked.cols() - 1) = X.col(c);
        locked_vals.push_back(lambda);
        locked_res.push_back(res);
        ++found;
      }
    }
    a = b;
    count_a = count_b;
    ++slice;
  }

  std::vector<int> order(locked_vals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return locked_vals[x] < locked_vals[y]; });
  order.resize(K);
  out.values.resize(K);
  out.residuals.resize(K);
  out.vectors.resize(n, K);
  for (int k = 0; k < K; ++k) {
    out.values[k] = locked_vals[order[k]];
    out.residuals[k] = locked_res[order[k]];
    out.vectors.col(k) = locked.col(order[k]);
  }
  return out;
}

/// Convenience overload: Gershgorin lower bound and a linear count guess.
inline EigenResult lowest_eigenpairs(const Eigen::SparseMatrix<double>& A, int K, const EigenOptions& opt = {}) {
  const double lo = detail::gershgorin_lower(A) - 1.0;
  // Without a model, assume unit density above the lower bound; inertia corrects it.
  auto guess = [lo](double E) { return E - lo; };
  return lowest_eigenpairs(A, K, guess, lo, opt);
}

}  // namespace steposc::fd
