#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "steposc/classical.hpp"

using namespace steposc;
using namespace steposc::classical;

namespace {

Potential quartic() {
  return Potential::tabulate([](double q) { return q * q * q * q; }, 0.0, 3.0, 3001);
}

// Brute-force impact integrator: leapfrog with a tiny step, reflection at the sign change.
std::vector<double> brute_impact_times(ClassicalState s, const Potential& v1, const Potential& v2,
                                       const StepRegion& st, double T, double dt) {
  std::vector<double> times;
  for (double t = 0.0; t < T; t += dt) {
    s.p1 -= 0.5 * dt * v1.derivative(s.q1);
    s.p2 -= 0.5 * dt * v2.derivative(s.q2);
    const double q1 = s.q1 + dt * s.p1, q2 = s.q2 + dt * s.p2;
    const bool hit1 = q1 < st.q1_wall && s.q1 >= st.q1_wall && q2 < st.q2_wall;
    const bool hit2 = q2 < st.q2_wall && s.q2 >= st.q2_wall && q1 < st.q1_wall;
    s.q1 = q1;
    s.q2 = q2;
    if (hit1) {
      s.q1 = 2 * st.q1_wall - s.q1;
      s.p1 = -s.p1;
      times.push_back(t + dt);
    }
    if (hit2) {
      s.q2 = 2 * st.q2_wall - s.q2;
      s.p2 = -s.p2;
      times.push_back(t + dt);
    }
    s.p1 -= 0.5 * dt * v1.derivative(s.q1);
    s.p2 -= 0.5 * dt * v2.derivative(s.q2);
  }
  return times;
}

}  // namespace

TEST(LevelSet, HarmonicActionAndFrequency) {
  const auto v = Potential::harmonic(1.7, 0.4);
  const double E = 3.0;
  EXPECT_NEAR(action_1d(v, E), (E - v.minimum()) / 1.7, 1e-14);
  EXPECT_NEAR(frequency_1d(v, E), 1.7, 1e-14);
  const auto [a, b] = turning_points(v, E);
  EXPECT_NEAR(v(a), E, 1e-12);
  EXPECT_NEAR(v(b), E, 1e-12);
}

TEST(LevelSet, QuarticActionMatchesBetaFunction) {
  const auto v = quartic();
  for (double E : {0.5, 1.0, 4.0}) {
    const double exact = std::sqrt(2.0) * std::pow(E, 0.75) * std::beta(0.25, 1.5) / (2.0 * kPi);
    EXPECT_NEAR(action_1d(v, E), exact, 2e-5 * exact) << "E=" << E;
  }
}

TEST(LevelSet, QuarticFrequencyIsActionDerivative) {
  const auto v = quartic();
  const double E = 2.0, d = 1e-4;
  const double dIdE = (action_1d(v, E + d) - action_1d(v, E - d)) / (2 * d);
  EXPECT_NEAR(frequency_1d(v, E), 1.0 / dIdE, 1e-4);
}

TEST(LevelSet, WallAngleOfHarmonicOrbit) {
  const auto v = Potential::harmonic(1.0);
  const auto g = level_set(v, 2.0, -1.0);
  ASSERT_TRUE(g.theta_wall.has_value());
  EXPECT_NEAR(*g.theta_wall, 2.0 * kPi / 3.0, 1e-13);
  EXPECT_NEAR(*g.action_wall, 2.0 * (2.0 / 3.0), 1e-13);
}

TEST(LevelSet, MissedWallHasNoAngle) {
  const auto v = Potential::harmonic(1.0);
  const auto g = level_set(v, 0.1, -1.0);
  EXPECT_FALSE(g.theta_wall.has_value());
  EXPECT_THROW(wall_action(v, g, -1.0), NoImpact);
  EXPECT_THROW(wall_angle(v, 0.1, -1.0), NoImpact);
}

TEST(LevelSet, EnergyBelowMinimumThrows) {
  const auto v = Potential::harmonic(1.0, 1.0);
  EXPECT_THROW(level_set(v, -0.6, 0.0), NoClassicalMotion);
}

TEST(WallAction, DirectIntegralAgainstQuadrature) {
  const auto v = Potential::harmonic(1.0);
  const double E = 2.0, w = -1.0;
  const auto g = level_set(v, E, w);
  const auto wa = wall_action(v, g, w);
  // (1/pi) \int_w^{qmax} p dq with q = a cos(phi); midpoint rule in phi.
  const double a = std::sqrt(2 * E), phi_w = std::acos(w / a);
  const int n = 200000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double phi = (i + 0.5) * phi_w / n;
    const double q = a * std::cos(phi);
    sum += std::sqrt(std::max(0.0, 2 * (E - v(q)))) * a * std::sin(phi);
  }
  EXPECT_NEAR(wa.direct_integral, sum * phi_w / n / kPi, 1e-8);
  EXPECT_NEAR(wa.direct_integral, 1.60890, 1e-4);
  EXPECT_NEAR(wa.angle_fraction, 4.0 / 3.0, 1e-13);
}

TEST(WallAction, TabulatedMatchesHarmonic) {
  const auto h = Potential::harmonic(1.0);
  const auto t = Potential::tabulate([](double q) { return 0.5 * q * q; }, 0.0, 4.0, 801);
  const double E = 2.0, w = -1.0;
  const auto wh = wall_action(h, level_set(h, E, w), w);
  const auto wt = wall_action(t, level_set(t, E, w), w);
  EXPECT_NEAR(wt.direct_integral, wh.direct_integral, 1e-5);
  EXPECT_NEAR(wt.angle_fraction, wh.angle_fraction, 1e-5);
}

TEST(Impacts, EventTimesMatchBruteForce) {
  const auto v1 = Potential::harmonic(1.0), v2 = Potential::harmonic(std::sqrt(2.0));
  const StepRegion st(-1.0, -1.0);
  const ClassicalState s0{2.5, 0.2, -1.0, -2.5, 0.0};
  Horizon hz;
  hz.time = 12.0;
  const auto tr = integrate_with_impacts(s0, v1, v2, st, hz);
  std::vector<double> exact;
  for (const auto& x : tr.samples) {
    if (x.event == Event::impact1 || x.event == Event::impact2) exact.push_back(x.state.t);
  }
  const auto brute = brute_impact_times(s0, v1, v2, st, 12.0, 2e-6);
  ASSERT_GE(exact.size(), 3u);
  ASSERT_EQ(exact.size(), brute.size());
  for (std::size_t i = 0; i < exact.size(); ++i) EXPECT_NEAR(exact[i], brute[i], 1e-4) << "impact " << i;
}

TEST(Impacts, TabulatedAxisMatchesBruteForce) {
  const auto v1 = quartic(), v2 = Potential::harmonic(1.3);
  const StepRegion st(-0.3, -0.5);
  const ClassicalState s0{1.0, 0.5, -0.4, -1.5, 0.0};
  Horizon hz;
  hz.time = 10.0;
  const auto tr = integrate_with_impacts(s0, v1, v2, st, hz);
  std::vector<double> exact;
  for (const auto& x : tr.samples) {
    if (x.event == Event::impact1 || x.event == Event::impact2) exact.push_back(x.state.t);
  }
  const auto brute = brute_impact_times(s0, v1, v2, st, 10.0, 2e-6);
  ASSERT_GE(exact.size(), 2u);
  ASSERT_EQ(exact.size(), brute.size());
  for (std::size_t i = 0; i < exact.size(); ++i) EXPECT_NEAR(exact[i], brute[i], 1e-3) << "impact " << i;
}

TEST(Impacts, PartialEnergiesConserved) {
  const auto v1 = Potential::harmonic(1.0), v2 = Potential::harmonic(std::sqrt(2.0));
  const StepRegion st(-1.0, -1.0);
  const double E1 = 5.625, E2 = 5.5;
  const double a1 = std::sqrt(2 * E1), a2 = std::sqrt(2 * E2) / std::sqrt(2.0);
  const ClassicalState s0{a1 * std::cos(0.3), a2 * std::cos(0.7), -a1 * std::sin(0.3),
                          -std::sqrt(2.0) * a2 * std::sin(0.7), 0.0};
  const auto tr = integrate_with_impacts(s0, v1, v2, st, Horizon{});
  EXPECT_GE(tr.impacts, 30);
  for (const auto& x : tr.samples) {
    EXPECT_NEAR(0.5 * x.state.p1 * x.state.p1 + v1(x.state.q1), E1, 1e-10 * E1);
    EXPECT_NEAR(0.5 * x.state.p2 * x.state.p2 + v2(x.state.q2), E2, 1e-10 * E2);
    EXPECT_FALSE(st.contains(x.state.q1, x.state.q2));
  }
}

TEST(Impacts, StartInsideStepThrows) {
  const auto v = Potential::harmonic(1.0);
  EXPECT_THROW(integrate_with_impacts({-1.0, -1.0, 0.0, 0.0, 0.0}, v, v, StepRegion(0, 0), Horizon{}), DomainError);
}

TEST(Impacts, CornerHitThrows) {
  // Straight into the corner along the diagonal.
  const auto v = Potential::harmonic(1.0);
  const ClassicalState s{1.0, 1.0, -1.0, -1.0, 0.0};
  EXPECT_THROW(integrate_with_impacts(s, v, v, StepRegion(0, 0), Horizon{}), CornerCollision);
}

TEST(Impacts, NoStepMeansNoImpacts) {
  const auto v1 = Potential::harmonic(1.0), v2 = Potential::harmonic(1.3);
  const auto tr = integrate_with_impacts({1, 1, 0.5, -0.5, 0}, v1, v2, StepRegion(-50, -50), Horizon{50.0});
  EXPECT_EQ(tr.impacts, 0);
}

TEST(Families, ClosedFormCounts) {
  EXPECT_EQ(resonant_family(1).size(), 1u);
  EXPECT_EQ(resonant_family(2).size(), 2u);
  EXPECT_EQ(resonant_family(3)[0], (FamilyCounts{{9, 3}, {3, 1}}));
  EXPECT_THROW(resonant_family(0), DomainError);
}

TEST(Families, IntegrationReproducesFamilies) {
  for (int m = 1; m <= 4; ++m) {
    const auto v1 = Potential::harmonic(1.0), v2 = Potential::harmonic(1.0 / m);
    std::set<std::pair<std::array<int, 2>, std::array<int, 2>>> seen;
    for (double ph1 : {0.3, 0.8, 1.9, 2.6}) {
      for (double ph2 : {0.2, 1.1, 2.3}) {
        const double a1 = 2.0, a2 = 2.0 * m;
        const ClassicalState s{a1 * std::cos(ph1), a2 * std::cos(ph2), -a1 * std::sin(ph1),
                               -a2 / m * std::sin(ph2), 0.0};
        if (StepRegion(0, 0).contains(s.q1, s.q2)) continue;
        Horizon hz;
        hz.time = 4 * 2 * kPi * m + 1.0;
        const auto sum = detect_periodicity(integrate_with_impacts(s, v1, v2, StepRegion(0, 0), hz));
        ASSERT_TRUE(sum.is_periodic) << "m=" << m;
        seen.insert({sum.mu, sum.b});
      }
    }
    std::set<std::pair<std::array<int, 2>, std::array<int, 2>>> expect;
    for (const auto& f : resonant_family(m)) expect.insert({f.mu, f.b});
    EXPECT_EQ(seen, expect) << "m=" << m;
  }
}

TEST(AngleChart, HarmonicAnglesAdvanceLinearly) {
  const auto v1 = Potential::harmonic(1.0), v2 = Potential::harmonic(std::sqrt(2.0));
  const StepRegion st(-50, -50);
  const double E1 = 2.0, E2 = 3.0;
  const AngleChart c1(v1, E1, st.q1_wall), c2(v2, E2, st.q2_wall);
  const double a1 = std::sqrt(2 * E1), a2 = std::sqrt(2 * E2) / std::sqrt(2.0);
  const ClassicalState s{a1 * std::cos(0.1), a2 * std::cos(0.2), -a1 * std::sin(0.1), -std::sqrt(2.0) * a2 * std::sin(0.2), 0};
  Horizon hz;
  hz.time = 1.0;
  hz.sample_dt = 0.1;
  const auto tr = integrate_with_impacts(s, v1, v2, st, hz);
  for (const auto& x : tr.samples) {
    const auto [t1, t2] = to_angle_coords(x.state, c1, c2);
    EXPECT_NEAR(t1, std::remainder(0.1 + x.state.t, 2 * kPi), 1e-9);
    EXPECT_NEAR(t2, std::remainder(0.2 + std::sqrt(2.0) * x.state.t, 2 * kPi), 1e-9);
  }
}

TEST(AngleChart, FoldedPointsStayInL) {
  const auto v1 = Potential::harmonic(1.0), v2 = Potential::harmonic(std::sqrt(2.0));
  const StepRegion st(-1.0, -1.0);
  const double E1 = 5.625, E2 = 5.5;
  const AngleChart c1(v1, E1, st.q1_wall), c2(v2, E2, st.q2_wall);
  const double a1 = std::sqrt(2 * E1), a2 = std::sqrt(2 * E2) / std::sqrt(2.0);
  const ClassicalState s{a1 * std::cos(0.3), a2 * std::cos(0.7), -a1 * std::sin(0.3), -std::sqrt(2.0) * a2 * std::sin(0.7), 0};
  Horizon hz;
  hz.time = 100.0;
  hz.sample_dt = 0.05;
  const auto tr = integrate_with_impacts(s, v1, v2, st, hz);
  for (const auto& x : tr.samples) {
    const auto [t1, t2] = to_angle_coords(x.state, c1, c2);
    const auto [X, Y] = fold_to_L(t1, t2);
    EXPECT_TRUE(inside_L(X, Y, c1.wall_or_pi(), c2.wall_or_pi(), 1e-8)) << "t=" << x.state.t;
  }
}

TEST(AngleChart, InsideLGeometry) {
  EXPECT_TRUE(inside_L(0.1, 0.1, 2.0, 2.0));
  EXPECT_TRUE(inside_L(3.0, 1.0, 2.0, 2.0));
  EXPECT_FALSE(inside_L(3.0, 3.0, 2.0, 2.0));
  EXPECT_FALSE(inside_L(-0.1, 1.0, 2.0, 2.0));
}
