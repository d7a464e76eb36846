#pragma once

// One-dimensional confining potentials and the impenetrable step region.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

// fpclassify must precede pchip.hpp: Boost 1.74's pchip calls an unqualified isnan.
#include <boost/math/special_functions/fpclassify.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/math/interpolators/pchip.hpp>

#include "steposc/error.hpp"

namespace steposc {

enum class PotentialKind { harmonic, tabulated_even };

/// A confining potential for one axis, even about its single minimum.
///
/// Harmonic potentials are stored in the "oscillator plus linear force" form
/// V(q) = omega^2 q^2 / 2 - f q, which is even about q = f / omega^2 and has
/// minimum value -f^2 / (2 omega^2). With f = 0 the minimum sits at the origin
/// with V = 0.
///
/// Tabulated potentials store V(center + u) for u >= 0 and are evaluated at
/// |q - center|, so evenness holds by construction. Between samples a monotone
/// C1 cubic (PCHIP) is used; beyond the last sample the end slope continues
/// linearly.
class Potential {
 public:
  static Potential harmonic(double omega, double linear_force = 0.0) {
    if (!(omega > 0.0) || !std::isfinite(omega)) {
      throw DomainError("harmonic potential needs omega > 0");
    }
    Potential v;
    v.kind_ = PotentialKind::harmonic;
    v.omega_ = omega;
    v.force_ = linear_force;
    v.center_ = linear_force / (omega * omega);
    v.minimum_ = -0.5 * linear_force * linear_force / (omega * omega);
    return v;
  }

  static Potential tabulated_even(double center, std::vector<double> offsets,
                                  std::vector<double> values) {
    if (offsets.size() != values.size() || offsets.size() < 4) {
      throw DomainError("tabulated potential needs at least 4 (u, V) samples");
    }
    if (offsets.front() != 0.0) {
      throw DomainError("tabulated potential offsets must start at u = 0");
    }
    for (std::size_t k = 1; k < offsets.size(); ++k) {
      if (!(offsets[k] > offsets[k - 1])) {
        throw DomainError("tabulated potential offsets must be strictly increasing");
      }
      if (!(values[k] > values[k - 1])) {
        throw DomainError("tabulated potential must increase away from its minimum");
      }
    }
    Potential v;
    v.kind_ = PotentialKind::tabulated_even;
    v.center_ = center;
    v.minimum_ = values.front();
    v.table_u_ = offsets;
    v.table_v_ = values;
    v.u_last_ = offsets.back();
    v.v_last_ = values.back();
    const auto n = offsets.size();
    // Left endpoint derivative 0 keeps the even extension C1 at the minimum.
    v.spline_ = std::make_shared<Spline>(std::move(offsets), std::move(values), 0.0,
                                         std::numeric_limits<double>::quiet_NaN());
    v.slope_last_ = v.spline_->prime(v.u_last_);
    if (!(v.slope_last_ > 0.0)) {
      // Fall back to the last secant so the extrapolation keeps confining.
      v.slope_last_ = (v.table_v_[n - 1] - v.table_v_[n - 2]) / (v.table_u_[n - 1] - v.table_u_[n - 2]);
    }
    return v;
  }

  /// Samples f on [0, u_max] at n points and tabulates it about `center`.
  template <class F>
  static Potential tabulate(F&& f, double center, double u_max, std::size_t n) {
    std::vector<double> u(n), val(n);
    for (std::size_t k = 0; k < n; ++k) {
      u[k] = u_max * static_cast<double>(k) / static_cast<double>(n - 1);
      val[k] = f(center + u[k]);
    }
    return tabulated_even(center, std::move(u), std::move(val));
  }

  double operator()(double q) const {
    if (kind_ == PotentialKind::harmonic) {
      return 0.5 * omega_ * omega_ * q * q - force_ * q;
    }
    return table_value(std::abs(q - center_));
  }

  double derivative(double q) const {
    if (kind_ == PotentialKind::harmonic) {
      return omega_ * omega_ * q - force_;
    }
    const double u = q - center_;
    const double s = u < 0.0 ? -1.0 : 1.0;
    const double au = std::abs(u);
    if (au > u_last_) return s * slope_last_;
    return s * spline_->prime(au);
  }

  /// Distance from the minimum to the turning point at energy E.
  double half_width(double E) const {
    if (!(E > minimum_)) {
      throw NoClassicalMotion("energy " + std::to_string(E) + " is not above the potential minimum " +
                              std::to_string(minimum_));
    }
    if (kind_ == PotentialKind::harmonic) {
      return std::sqrt(2.0 * (E - minimum_)) / omega_;
    }
    if (E >= v_last_) {
      return u_last_ + (E - v_last_) / slope_last_;
    }
    auto it = std::upper_bound(table_v_.begin(), table_v_.end(), E);
    const auto hi = static_cast<std::size_t>(it - table_v_.begin());
    double a = table_u_[hi - 1];
    double b = table_u_[hi];
    auto g = [&](double u) { return table_value(u) - E; };
    boost::uintmax_t iters = 200;
    auto r = boost::math::tools::toms748_solve(g, a, b, g(a), g(b),
                                               boost::math::tools::eps_tolerance<double>(52), iters);
    return 0.5 * (r.first + r.second);
  }

  PotentialKind kind() const { return kind_; }
  bool is_harmonic() const { return kind_ == PotentialKind::harmonic; }
  /// Harmonic frequency (harmonic kind only).
  double omega() const { return omega_; }
  /// Coefficient f of the linear term -f q (harmonic kind only).
  double linear_force() const { return force_; }
  double center() const { return center_; }
  double minimum() const { return minimum_; }
  const std::vector<double>& table_offsets() const { return table_u_; }
  const std::vector<double>& table_values() const { return table_v_; }

 private:
  using Spline = boost::math::interpolators::pchip<std::vector<double>>;

  Potential() = default;

  double table_value(double u) const {
    if (u > u_last_) return v_last_ + slope_last_ * (u - u_last_);
    return (*spline_)(u);
  }

  PotentialKind kind_ = PotentialKind::harmonic;
  double omega_ = 1.0;
  double force_ = 0.0;
  double center_ = 0.0;
  double minimum_ = 0.0;
  std::vector<double> table_u_;
  std::vector<double> table_v_;
  double u_last_ = 0.0;
  double v_last_ = 0.0;
  double slope_last_ = 0.0;
  std::shared_ptr<const Spline> spline_;
};

/// Impenetrable region {q1 < q1_wall and q2 < q2_wall}; both walls are <= 0.
struct StepRegion {
  double q1_wall = 0.0;
  double q2_wall = 0.0;

  StepRegion() = default;
  StepRegion(double w1, double w2) : q1_wall(w1), q2_wall(w2) {
    if (!(w1 <= 0.0) || !(w2 <= 0.0)) {
      throw DomainError("step walls must be nonpositive");
    }
  }

  bool at_origin() const { return q1_wall == 0.0 && q2_wall == 0.0; }
  /// Open interior of the step.
  bool contains(double q1, double q2) const { return q1 < q1_wall && q2 < q2_wall; }
  double wall(int axis) const { return axis == 0 ? q1_wall : q2_wall; }
};

}  // namespace steposc
