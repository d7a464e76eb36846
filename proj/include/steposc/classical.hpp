#pragma once

// Classical separable oscillator with elastic impacts off the step: level-set
// geometry (turning points, action, frequency, wall angle and wall action),
// an event-driven impact integrator, the action-angle image on the
// cross-shaped surface and its folding onto the L-shaped billiard.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "steposc/error.hpp"
#include "steposc/model.hpp"

namespace steposc::classical {

inline constexpr double kPi = std::numbers::pi;

struct LevelSetGeometry {
  double E = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double action = 0.0;
  double omega = 0.0;
  /// Angle of the wall crossing (theta = 0 at q_max); empty when the wall is not reached.
  std::optional<double> theta_wall;
  std::optional<double> action_wall;
};

std::pair<double, double> turning_points(const Potential& v, double E);

namespace detail {

inline double momentum(const Potential& v, double E, double q) {
  const double k = 2.0 * (E - v(q));
  return k > 0.0 ? std::sqrt(k) : 0.0;
}

/// Integral of g(p(q)) over [from, to] inside the classical region, with the
/// substitutions q = q_min + u^2 and q = q_max - u^2 on the two sides of the
/// minimum so the square-root endpoint behaviour becomes smooth in u.
/// Depth is capped: tabulated potentials are only C1 at their knots.
/// `limit_at_turn(q_t)` gives lim_{u->0} 2u g(p) at a turning point.
template <class G, class L>
double level_integral(const Potential& v, double E, double from, double to, G g, L limit_at_turn) {
  using boost::math::quadrature::gauss_kronrod;
  const auto [q_min, q_max] = turning_points(v, E);
  from = std::clamp(from, q_min, q_max);
  to = std::clamp(to, q_min, q_max);
  if (!(to > from)) return 0.0;
  const double c = v.center();
  double total = 0.0;
  if (from < c) {
    const double b = std::min(to, c);
    auto f = [&](double u) {
      const double p = momentum(v, E, q_min + u * u);
      return p > 0.0 ? 2.0 * u * g(p) : limit_at_turn(q_min);
    };
    total += gauss_kronrod<double, 31>::integrate(f, std::sqrt(from - q_min), std::sqrt(b - q_min), 8, 1e-10);
  }
  if (to > c) {
    const double a = std::max(from, c);
    auto f = [&](double u) {
      const double p = momentum(v, E, q_max - u * u);
      return p > 0.0 ? 2.0 * u * g(p) : limit_at_turn(q_max);
    };
    total += gauss_kronrod<double, 31>::integrate(f, std::sqrt(q_max - to), std::sqrt(q_max - a), 8, 1e-10);
  }
  return total;
}

inline double area_integral(const Potential& v, double E, double from, double to) {
  return level_integral(v, E, from, to, [](double p) { return p; }, [](double) { return 0.0; });
}

inline double time_integral(const Potential& v, double E, double from, double to) {
  return level_integral(
      v, E, from, to, [](double p) { return 1.0 / p; },
      [&v](double qt) { return 2.0 / std::sqrt(2.0 * std::abs(v.derivative(qt))); });
}

}  // namespace detail

/// Turning points q_min < q_max with V(q) = E.
inline std::pair<double, double> turning_points(const Potential& v, double E) {
  const double u = v.half_width(E);
  return {v.center() - u, v.center() + u};
}

/// I = (1 / 2 pi) \oint p dq.
inline double action_1d(const Potential& v, double E) {
  if (v.is_harmonic()) {
    if (!(E > v.minimum())) (void)v.half_width(E);  // raises NoClassicalMotion
    return (E - v.minimum()) / v.omega();
  }
  const auto [a, b] = turning_points(v, E);
  return detail::area_integral(v, E, a, b) / kPi;
}

/// Period of the smooth motion at energy E.
inline double period_1d(const Potential& v, double E) {
  if (v.is_harmonic()) {
    (void)v.half_width(E);
    return 2.0 * kPi / v.omega();
  }
  const auto [a, b] = turning_points(v, E);
  return 2.0 * detail::time_integral(v, E, a, b);
}

/// omega(E) = dE/dI, evaluated as 2 pi / period.
inline double frequency_1d(const Potential& v, double E) { return 2.0 * kPi / period_1d(v, E); }

/// Angle of the point q on the smooth level set, theta = 0 at q_max and
/// theta in [0, pi] on the branch with p <= 0.
inline double angle_at(const Potential& v, double E, double q) {
  const auto [q_min, q_max] = turning_points(v, E);
  if (v.is_harmonic()) {
    const double x = std::clamp((q - v.center()) / (0.5 * (q_max - q_min)), -1.0, 1.0);
    return std::acos(x);
  }
  return frequency_1d(v, E) * detail::time_integral(v, E, q, q_max);
}

inline double wall_angle(const Potential& v, double E, double q_wall) {
  if (!(E > v(q_wall))) {
    throw NoImpact("level set at E=" + std::to_string(E) + " does not reach the wall q=" + std::to_string(q_wall));
  }
  return angle_at(v, E, q_wall);
}

struct WallAction {
  /// I * 2 theta_wall / (2 pi): the value used in the EBK action.
  double angle_fraction = 0.0;
  /// (1 / 2 pi) \int_{q >= q_wall} p dq over both branches of the level set.
  double direct_integral = 0.0;
};

/// Builds the geometry of the smooth level set V(q) + p^2/2 = E against a wall at q_wall.
inline LevelSetGeometry level_set(const Potential& v, double E, double q_wall) {
  LevelSetGeometry g;
  g.E = E;
  std::tie(g.q_min, g.q_max) = turning_points(v, E);
  g.action = action_1d(v, E);
  g.omega = frequency_1d(v, E);
  if (E > v(q_wall)) {
    g.theta_wall = wall_angle(v, E, q_wall);
    g.action_wall = g.action * *g.theta_wall / kPi;
  }
  return g;
}

inline WallAction wall_action(const Potential& v, const LevelSetGeometry& geom, double q_wall) {
  if (!geom.theta_wall) {
    throw NoImpact("wall action undefined: level set at E=" + std::to_string(geom.E) + " misses the wall");
  }
  WallAction w;
  const double theta = *geom.theta_wall;
  w.angle_fraction = geom.action * theta / kPi;
  if (v.is_harmonic()) {
    w.direct_integral = geom.action / kPi * (theta - std::cos(theta) * std::sin(theta));
  } else {
    w.direct_integral = detail::area_integral(v, geom.E, q_wall, geom.q_max) / kPi;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Impact dynamics

struct ClassicalState {
  double q1 = 0.0, q2 = 0.0, p1 = 0.0, p2 = 0.0, t = 0.0;
};

enum class Event { none, impact1, impact2, turn1, turn2 };

inline const char* to_string(Event e) {
  switch (e) {
    case Event::impact1: return "impact1";
    case Event::impact2: return "impact2";
    case Event::turn1: return "turn1";
    case Event::turn2: return "turn2";
    default: return "none";
  }
}

struct Sample {
  ClassicalState state;
  Event event = Event::none;
};

struct Trajectory {
  /// Events (post-reflection state for impacts) interleaved with optional dense samples.
  std::vector<Sample> samples;
  int impacts = 0;
};

struct TrajectorySummary {
  std::array<int, 2> mu{0, 0};
  std::array<int, 2> b{0, 0};
  double period = 0.0;
  bool is_periodic = false;
};

struct Horizon {
  double time = 200.0;
  int max_impacts = std::numeric_limits<int>::max();
  /// Spacing of dense `none` samples; 0 records events only.
  double sample_dt = 0.0;
};

namespace detail {

struct Phase1 {
  double q, p;
};

/// Evolution of one separable axis. Harmonic axes rotate exactly in
/// (q - c, p / omega); other potentials use a fourth-order symplectic
/// (Yoshida) splitting with event times refined by bisection.
class AxisFlow {
 public:
  AxisFlow(const Potential& v, double energy) : v_(v) {
    if (!v.is_harmonic()) {
      dt_ = period_1d(v, energy) / 4000.0;
    }
  }

  Phase1 advance(Phase1 s, double dt) const {
    if (v_.is_harmonic()) {
      const double w = v_.omega();
      const double x = s.q - v_.center();
      const double c = std::cos(w * dt), sn = std::sin(w * dt);
      return {v_.center() + x * c + s.p / w * sn, -w * x * sn + s.p * c};
    }
    const double sign = dt < 0.0 ? -1.0 : 1.0;
    double left = std::abs(dt);
    while (left > 0.0) {
      const double h = std::min(left, dt_);
      s = yoshida(s, sign * h);
      left -= h;
    }
    return s;
  }

  /// Time until q next passes `level` while decreasing; infinity if never within `horizon`.
  double next_down_crossing(Phase1 s, double level, double horizon) const {
    if (v_.is_harmonic()) {
      const double w = v_.omega();
      const double x = s.q - v_.center();
      const double r = std::hypot(x, s.p / w);
      const double d = level - v_.center();
      if (!(std::abs(d) < r)) return std::numeric_limits<double>::infinity();
      const double psi0 = std::atan2(-s.p / w, x);
      const double target = std::acos(d / r);
      double dpsi = std::fmod(target - psi0, 2.0 * kPi);
      if (dpsi < 0.0) dpsi += 2.0 * kPi;
      if (dpsi < 1e-13) dpsi += 2.0 * kPi;
      double t = dpsi / w;
      // Newton polish on q(t) = level.
      for (int it = 0; it < 2; ++it) {
        const Phase1 at = advance(s, t);
        if (at.p == 0.0) break;
        t -= (at.q - level) / at.p;
      }
      return t <= horizon ? t : std::numeric_limits<double>::infinity();
    }
    return scan(s, horizon, [level](const Phase1& a, const Phase1& b) {
      return a.q > level && b.q <= level;
    }, [level](const Phase1& x) { return x.q - level; });
  }

  /// Time until the next turning point (p changes sign).
  double next_turn(Phase1 s, double horizon) const {
    if (v_.is_harmonic()) {
      const double w = v_.omega();
      const double x = s.q - v_.center();
      const double psi0 = std::atan2(-s.p / w, x);
      // Turning points at psi = 0 (q_max) and psi = pi (q_min).
      double dpsi = std::fmod(-psi0, kPi);
      if (dpsi < 0.0) dpsi += kPi;
      if (dpsi <= 1e-13) dpsi += kPi;
      const double t = dpsi / w;
      return t <= horizon ? t : std::numeric_limits<double>::infinity();
    }
    return scan(s, horizon, [](const Phase1& a, const Phase1& b) {
      return (a.p > 0.0 && b.p <= 0.0) || (a.p < 0.0 && b.p >= 0.0);
    }, [](const Phase1& x) { return x.p; });
  }

  double energy(Phase1 s) const { return 0.5 * s.p * s.p + v_(s.q); }

 private:
  Phase1 yoshida(Phase1 s, double h) const {
    constexpr double cbrt2 = 1.2599210498948732;
    constexpr double w1 = 1.0 / (2.0 - cbrt2);
    constexpr double w0 = -cbrt2 / (2.0 - cbrt2);
    const double ws[3] = {w1, w0, w1};
    for (double w : ws) {
      const double dt = w * h;
      s.p -= 0.5 * dt * v_.derivative(s.q);
      s.q += dt * s.p;
      s.p -= 0.5 * dt * v_.derivative(s.q);
    }
    return s;
  }

  template <class Crossed, class Residual>
  double scan(Phase1 s, double horizon, Crossed crossed, Residual residual) const {
    double t = 0.0;
    // Skip an event sitting exactly at the start.
    Phase1 cur = s;
    while (t < horizon) {
      const double h = std::min(dt_, horizon - t);
      const Phase1 nxt = yoshida(cur, h);
      if (crossed(cur, nxt) && !(t == 0.0 && residual(cur) == 0.0)) {
        double lo = 0.0, hi = h;
        const double r0 = residual(cur);
        for (int it = 0; it < 80 && hi - lo > 1e-14; ++it) {
          const double mid = 0.5 * (lo + hi);
          const double rm = residual(yoshida(cur, mid));
          if ((rm > 0.0) == (r0 > 0.0) && rm != 0.0) {
            lo = mid;
          } else {
            hi = mid;
          }
        }
        return t + hi;
      }
      cur = nxt;
      t += h;
    }
    return std::numeric_limits<double>::infinity();
  }

  const Potential& v_;
  double dt_ = 0.0;
};

}  // namespace detail

inline constexpr double kCornerTolerance = 1e-10;

/// Integrates the separable motion outside the step with elastic reflections:
/// at the wall q1 = q1_wall (for q2 < q2_wall) p1 flips, at q2 = q2_wall
/// (for q1 < q1_wall) p2 flips. Partial energies are conserved.
inline Trajectory integrate_with_impacts(const ClassicalState& start, const Potential& v1, const Potential& v2,
                                         const StepRegion& step, const Horizon& horizon) {
  if (step.contains(start.q1, start.q2)) {
    throw DomainError("initial state lies inside the step");
  }
  const double e1 = 0.5 * start.p1 * start.p1 + v1(start.q1);
  const double e2 = 0.5 * start.p2 * start.p2 + v2(start.q2);
  const detail::AxisFlow f1(v1, e1), f2(v2, e2);

  Trajectory tr;
  detail::Phase1 a{start.q1, start.p1}, b{start.q2, start.p2};
  double t = start.t;
  const double t_end = start.t + horizon.time;
  double next_sample = start.t;
  auto emit = [&](Event e) {
    tr.samples.push_back({ClassicalState{a.q, b.q, a.p, b.p, t}, e});
  };
  if (horizon.sample_dt > 0.0) {
    emit(Event::none);
    next_sample += horizon.sample_dt;
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  while (t < t_end && tr.impacts < horizon.max_impacts) {
    const double left = t_end - t;
    const double tc1 = f1.next_down_crossing(a, step.q1_wall, left);
    const double tc2 = f2.next_down_crossing(b, step.q2_wall, left);
    const double tt1 = f1.next_turn(a, left);
    const double tt2 = f2.next_turn(b, left);
    const double ts = horizon.sample_dt > 0.0 ? next_sample - t : inf;
    const double dt = std::min({tc1, tc2, tt1, tt2, ts, left});

    a = f1.advance(a, dt);
    b = f2.advance(b, dt);
    t += dt;

    // Events closer than this to the step end are treated as simultaneous.
    const double same = dt + 1e-12;
    const bool c1 = tc1 <= same, c2 = tc2 <= same;
    if (c1 && c2) throw CornerCollision(t);
    if (c1) {
      a.q = step.q1_wall;
      if (std::abs(b.q - step.q2_wall) < kCornerTolerance) throw CornerCollision(t);
    }
    if (c2) {
      b.q = step.q2_wall;
      if (std::abs(a.q - step.q1_wall) < kCornerTolerance) throw CornerCollision(t);
    }
    if (tt1 <= same) {
      a.p = 0.0;
      emit(Event::turn1);
    }
    if (tt2 <= same) {
      b.p = 0.0;
      emit(Event::turn2);
    }
    if (c1 && b.q < step.q2_wall) {
      a.p = -a.p;
      ++tr.impacts;
      emit(Event::impact1);
    }
    if (c2 && a.q < step.q1_wall) {
      b.p = -b.p;
      ++tr.impacts;
      emit(Event::impact2);
    }
    if (ts <= same) {
      emit(Event::none);
      next_sample += horizon.sample_dt;
    }
  }
  return tr;
}

/// Minimal period and per-period counts, using the first recorded event as the reference.
inline TrajectorySummary detect_periodicity(const Trajectory& tr, double tol = 1e-8) {
  TrajectorySummary s;
  const auto is_event = [](const Sample& x) { return x.event != Event::none; };
  const auto first = std::find_if(tr.samples.begin(), tr.samples.end(), is_event);
  if (first == tr.samples.end()) return s;
  const ClassicalState& ref = first->state;
  std::array<int, 4> counts{0, 0, 0, 0};
  for (auto it = std::next(first); it != tr.samples.end(); ++it) {
    if (!is_event(*it)) continue;
    switch (it->event) {
      case Event::impact1: ++counts[0]; break;
      case Event::impact2: ++counts[1]; break;
      case Event::turn1: ++counts[2]; break;
      case Event::turn2: ++counts[3]; break;
      default: break;
    }
    if (it->event != first->event) continue;
    const ClassicalState& x = it->state;
    const double d = std::max({std::abs(x.q1 - ref.q1), std::abs(x.q2 - ref.q2), std::abs(x.p1 - ref.p1),
                               std::abs(x.p2 - ref.p2)});
    if (d <= tol) {
      s.is_periodic = true;
      s.period = x.t - ref.t;
      s.b = {counts[0], counts[1]};
      s.mu = {counts[2], counts[3]};
      return s;
    }
  }
  return s;
}

/// Periodic-orbit families of the resonant harmonic step oscillator with the
/// step at the origin, omega_1 = 1 and omega_2 = 1/m.
struct FamilyCounts {
  std::array<int, 2> mu;
  std::array<int, 2> b;
  bool operator==(const FamilyCounts&) const = default;
};

inline std::vector<FamilyCounts> resonant_family(int m) {
  if (m <= 0) throw DomainError("resonance integer m must be positive");
  if (m % 2 == 1) return {{{3 * m, 3}, {m, 1}}};
  return {{{2 * m, 2}, {m, 0}}, {{m, 1}, {0, 1}}};
}

// ---------------------------------------------------------------------------
// Angle coordinates

/// Smooth level set of one axis, able to place phase points on its angle circle.
class AngleChart {
 public:
  AngleChart(const Potential& v, double E, double q_wall) : v_(v), geom_(level_set(v, E, q_wall)) {}

  const LevelSetGeometry& geometry() const { return geom_; }
  /// Wall angle, or pi when the level set never reaches the wall.
  double wall_or_pi() const { return geom_.theta_wall.value_or(kPi); }

  /// theta in [-pi, pi): positive on the p < 0 branch.
  double angle(double q, double p) const {
    // acos loses half the digits near the turning points; the harmonic phase is exact.
    if (v_.is_harmonic()) return std::remainder(std::atan2(-p / v_.omega(), q - v_.center()), 2.0 * kPi);
    double th = angle_at(v_, geom_.E, q);
    if (p > 0.0) th = -th;
    if (th >= kPi) th -= 2.0 * kPi;
    return th;
  }

 private:
  Potential v_;
  LevelSetGeometry geom_;
};

inline std::pair<double, double> to_angle_coords(const ClassicalState& s, const AngleChart& c1,
                                                 const AngleChart& c2) {
  return {c1.angle(s.q1, s.p1), c2.angle(s.q2, s.p2)};
}

/// Folding of the cross-shaped surface onto the quadrant [0, pi]^2.
inline std::pair<double, double> fold_to_L(double theta1, double theta2) {
  return {std::abs(theta1), std::abs(theta2)};
}

/// The L-shaped table: [0, pi]^2 minus (theta1_wall, pi] x (theta2_wall, pi].
inline bool inside_L(double x, double y, double theta1_wall, double theta2_wall, double tol = 1e-10) {
  if (x < -tol || y < -tol || x > kPi + tol || y > kPi + tol) return false;
  return !(x > theta1_wall + tol && y > theta2_wall + tol);
}

}  // namespace steposc::classical
