#pragma once

// EBK quantization of the resonant families and the Weyl phase-space volume.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "steposc/classical.hpp"
#include "steposc/error.hpp"
#include "steposc/model.hpp"

namespace steposc::semiclassics {

using classical::kPi;

enum class FamilyLabel { single, I, II };

inline const char* to_string(FamilyLabel f) {
  switch (f) {
    case FamilyLabel::single: return "single";
    case FamilyLabel::I: return "I";
    case FamilyLabel::II: return "II";
  }
  return "?";
}

struct EbkFamily {
  std::array<int, 2> mu{2, 2};
  std::array<int, 2> b{0, 0};
  FamilyLabel label = FamilyLabel::single;
};

/// Families of the resonance omega = (1, 1/m) with the step at the origin.
inline std::vector<EbkFamily> families(int m) {
  const auto counts = classical::resonant_family(m);
  std::vector<EbkFamily> out;
  if (counts.size() == 1) {
    out.push_back({counts[0].mu, counts[0].b, FamilyLabel::single});
  } else {
    out.push_back({counts[0].mu, counts[0].b, FamilyLabel::I});
    out.push_back({counts[1].mu, counts[1].b, FamilyLabel::II});
  }
  return out;
}

inline EbkFamily family(int m, FamilyLabel label) {
  const auto all = families(m);
  for (const auto& f : all) {
    if (f.label == label) return f;
  }
  throw DomainError(std::string("family ") + to_string(label) + " does not exist for m=" + std::to_string(m) +
                    (m % 2 ? " (odd m has a single family)" : " (even m has families I and II)"));
}

struct Axes {
  Potential v1;
  Potential v2;
  StepRegion step;
};

/// Sum over axes of b_i I_i^wall + (mu_i - b_i)/2 I_i.
/// With `direct_wall_integral` the wall action is the direct area integral
/// instead of the angle-fraction I theta_wall / pi.
inline double ebk_action(double E1, double E2, const EbkFamily& fam, const Axes& ax,
                         bool direct_wall_integral = false) {
  const Potential* v[2] = {&ax.v1, &ax.v2};
  const double e[2] = {E1, E2};
  double total = 0.0;
  for (int i = 0; i < 2; ++i) {
    const auto geom = classical::level_set(*v[i], e[i], ax.step.wall(i));
    double wall = 0.0;
    if (fam.b[i] > 0) {
      const auto w = classical::wall_action(*v[i], geom, ax.step.wall(i));
      wall = direct_wall_integral ? w.direct_integral : w.angle_fraction;
    }
    total += fam.b[i] * wall + 0.5 * (fam.mu[i] - fam.b[i]) * geom.action;
  }
  return total;
}

/// Right-hand side of the EBK condition, I = n + (mu1+mu2)/4 + (b1+b2)/2.
inline double ebk_target(int n, const EbkFamily& fam) {
  return n + 0.25 * (fam.mu[0] + fam.mu[1]) + 0.5 * (fam.b[0] + fam.b[1]);
}

/// Closed-form ladders in the frame omega = (1, 1/m).
inline double ebk_level(int k, int m, FamilyLabel label) {
  if (k < 0) throw DomainError("quantum number must be nonnegative");
  if (m <= 0) throw DomainError("resonance integer m must be positive");
  const double dm = m;
  if (m % 2 == 1) {
    if (label != FamilyLabel::single) throw DomainError("odd m has a single family");
    return k / (1.5 * dm) + 5.0 * (1.0 + dm) / (6.0 * dm);
  }
  if (label == FamilyLabel::I) return k / dm + (4.0 * dm + 2.0) / (4.0 * dm);
  if (label == FamilyLabel::II) return 2.0 * k / dm + (dm + 3.0) / (2.0 * dm);
  throw DomainError("even m needs family I or II");
}

/// Ladder for a spectrum computed at omega = scale * (1, 1/m) (or its axis swap).
/// A run at omega = (1, m) uses scale = m.
inline std::vector<double> ebk_ladder(int m, FamilyLabel label, int count, double scale = 1.0) {
  std::vector<double> out(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) out[static_cast<std::size_t>(k)] = scale * ebk_level(k, m, label);
  return out;
}

/// Inverts the EBK condition for the total energy. Partial energies are
/// E_i = Vmin_i + s_i (E - Vmin) with s = (split, 1 - split).
inline double ebk_energy(int n, const EbkFamily& fam, const Axes& ax, double split = 0.5,
                         bool direct_wall_integral = false) {
  const double m1 = ax.v1.minimum(), m2 = ax.v2.minimum();
  const double vmin = m1 + m2;
  const double target = ebk_target(n, fam);
  auto residual = [&](double E) {
    const double k = E - vmin;
    return ebk_action(m1 + split * k, m2 + (1.0 - split) * k, fam, ax, direct_wall_integral) - target;
  };
  // Bracket: the smallest energy at which every wall with b_i > 0 is reached.
  double lo = vmin;
  for (int i = 0; i < 2; ++i) {
    if (fam.b[i] == 0) continue;
    const Potential& v = i == 0 ? ax.v1 : ax.v2;
    const double s = i == 0 ? split : 1.0 - split;
    lo = std::max(lo, vmin + (v(ax.step.wall(i)) - v.minimum()) / s);
  }
  lo += 1e-12 * (1.0 + std::abs(lo));
  double hi = lo + 1.0;
  while (residual(hi) < 0.0) hi = lo + 2.0 * (hi - lo);
  const double f_lo = residual(lo);
  if (f_lo > 0.0) throw DomainError("EBK condition has no solution for n=" + std::to_string(n));
  boost::uintmax_t iters = 200;
  auto r = boost::math::tools::toms748_solve(residual, lo, hi, f_lo, residual(hi),
                                             boost::math::tools::eps_tolerance<double>(52), iters);
  return 0.5 * (r.first + r.second);
}

namespace detail {

/// pi times the fraction of the smooth orbit lying at q >= q_wall:
/// 0 if the orbit stays left of the wall, pi if it never reaches it.
inline double wall_angle_or_limit(const Potential& v, double E, double q_wall) {
  const auto [q_min, q_max] = classical::turning_points(v, E);
  if (q_max <= q_wall) return 0.0;
  if (q_min >= q_wall) return kPi;
  return classical::angle_at(v, E, q_wall);
}

/// dI/dE = 1 / omega(E).
inline double inverse_frequency(const Potential& v, double E) {
  if (v.is_harmonic()) return 1.0 / v.omega();
  return 1.0 / classical::frequency_1d(v, E);
}

/// Closed form of \int_{Vmin}^{X} (pi - theta_wall) dI for a harmonic axis,
/// written in the amplitude a: omega \int a acos((c - w) / a) da.
inline double harmonic_wall_integral(const Potential& v, double X, double q_wall) {
  if (!(X > v.minimum())) return 0.0;
  const double a = v.half_width(X), d = q_wall - v.center();
  double F;
  if (a <= std::abs(d)) {
    F = d > 0.0 ? 0.5 * kPi * a * a : 0.0;
  } else {
    F = 0.5 * a * a * std::acos(-d / a) + 0.5 * d * std::sqrt(a * a - d * d);
  }
  return v.omega() * F;
}

}  // namespace detail

/// Phase-space volume below E of the step oscillator, as an iterated integral
/// over the partial energies of 4 pi^2 - 4 (pi - theta1)(pi - theta2) dI1 dI2.
inline double phase_volume(double E, const Potential& v1, const Potential& v2, const StepRegion& step,
                           double rel_tol = 1e-10) {
  const double m1 = v1.minimum(), m2 = v2.minimum();
  if (!(E > m1 + m2)) return 0.0;
  const double kink1 = v1(step.q1_wall);
  const double kink2 = v2(step.q2_wall);

  // G1(X) = \int_{m1}^{X} (pi - theta1) dI1, and I1(X).
  auto g1 = [&](double X) {
    if (v1.is_harmonic()) return detail::harmonic_wall_integral(v1, X, step.q1_wall);
    // Equals half the phase area of {H1 <= X, q1 <= wall}.
    const auto [lo, hi] = classical::turning_points(v1, X);
    if (step.q1_wall <= lo) return 0.0;
    return classical::detail::area_integral(v1, X, lo, std::min(hi, step.q1_wall));
  };
  auto outer = [&](double e2) {
    const double X = E - e2;
    if (!(X > m1) || !(e2 > m2)) return 0.0;
    const double i1 = classical::action_1d(v1, X);
    const double th2 = detail::wall_angle_or_limit(v2, e2, step.q2_wall);
    double val = 4.0 * kPi * kPi * i1;
    if (th2 < kPi) val -= 4.0 * (kPi - th2) * g1(X);
    return val * detail::inverse_frequency(v2, e2);
  };
  // The integrand has kinks where the second axis reaches its wall and where
  // the first axis' remaining energy E - e2 does.
  using boost::math::quadrature::gauss_kronrod;
  std::vector<double> cuts = {m2, E - m1};
  for (double k : {kink2, E - kink1}) {
    if (k > m2 && k < E - m1) cuts.push_back(k);
  }
  std::sort(cuts.begin(), cuts.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    if (cuts[i + 1] > cuts[i]) total += gauss_kronrod<double, 31>::integrate(outer, cuts[i], cuts[i + 1], 12, rel_tol);
  }
  return total;
}

/// Smooth-system volume 4 pi^2 times the action-triangle area.
inline double smooth_phase_volume(double E, const Potential& v1, const Potential& v2) {
  const double m1 = v1.minimum(), m2 = v2.minimum();
  if (!(E > m1 + m2)) return 0.0;
  auto outer = [&](double e2) {
    const double X = E - e2;
    if (!(X > m1) || !(e2 > m2)) return 0.0;
    return 4.0 * kPi * kPi * classical::action_1d(v1, X) * detail::inverse_frequency(v2, e2);
  };
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(outer, m2, E - m1, 12, 1e-12);
}

/// Leading Weyl count N(E) = Vol(E) / (2 pi hbar)^2 with hbar = 1.
inline double weyl_count(double volume) { return volume / (4.0 * kPi * kPi); }

inline double weyl_count(double E, const Potential& v1, const Potential& v2, const StepRegion& step) {
  return weyl_count(phase_volume(E, v1, v2, step));
}

/// Closed form for harmonic axes with the step at the origin: 3 pi^2 E^2 / (2 w1 w2).
inline double harmonic_origin_volume(double E, double omega1, double omega2) {
  return E > 0.0 ? 1.5 * kPi * kPi * E * E / (omega1 * omega2) : 0.0;
}

}  // namespace steposc::semiclassics
