#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "kbm/invariant_stats.hpp"
#include "kbm/kinetic_sde.hpp"

using namespace kbm;

namespace {

CoeffVector unit(Eigen::Index n, Eigen::Index i) { return CoeffVector::Unit(n, i); }

struct Moments {
  double sum = 0.0, sum2 = 0.0;
  long n = 0;
  void add(double x) {
    sum += x;
    sum2 += x * x;
    ++n;
  }
  double mean() const { return sum / static_cast<double>(n); }
  double se() const {
    const double m = mean();
    return std::sqrt(std::max(0.0, sum2 / static_cast<double>(n) - m * m) / static_cast<double>(n));
  }
};

Weighted1D unweighted(std::vector<double> v) {
  Weighted1D w;
  w.values = std::move(v);
  w.weights.assign(w.values.size(), 1.0);
  return w;
}

}  // namespace

TEST(StepCount, CoversHorizon) {
  EXPECT_EQ(step_count(1.0, 1e-3), 1000);
  EXPECT_EQ(step_count(1.0, 0.3), 4);
  EXPECT_EQ(step_count(0.0, 0.1), 0);
  EXPECT_THROW(step_count(1.0, 0.0), Error);
}

TEST(DefaultDt, ContractionRule) {
  EXPECT_DOUBLE_EQ(default_dt(isotropic_spectrum(4), 1.0), 1e-3);
  EXPECT_DOUBLE_EQ(default_dt(isotropic_spectrum(4), 10.0), 0.1 / 400.0);
  EXPECT_DOUBLE_EQ(default_dt(isotropic_spectrum(4), 0.0), 1e-3);
}

TEST(VelocityStep, ZeroSigmaLeavesVelocity) {
  const auto spec = explicit_spectrum({1.0, 0.7, 0.4});
  const CoeffVector v = CoeffVector(Eigen::Vector3d(0.6, 0.0, 0.8));
  const CoeffVector dw = CoeffVector(Eigen::Vector3d(0.3, -0.2, 0.9));
  const CoeffVector out = velocity_step(v, spec, 0.0, 1e-3, dw);
  EXPECT_EQ(out, v);
}

TEST(VelocityStep, IsotropicDriftIsRadial) {
  const auto spec = isotropic_spectrum(4);
  const CoeffVector v = CoeffVector(Eigen::Vector4d(0.5, 0.5, 0.5, 0.5));
  const CoeffVector out = velocity_step(v, spec, 1.7, 1e-2, CoeffVector::Zero(4));
  EXPECT_LE((out - v).norm(), 1e-15);
}

TEST(VelocityStep, StaysOnSphere) {
  const auto spec = explicit_spectrum({1.0, 0.7, 0.4});
  Rng rng(2);
  const CoeffVector out = velocity_step(unit(3, 0), spec, 1.0, 1e-2, brownian_increment(spec, 1e-2, rng));
  EXPECT_NEAR(out.norm(), 1.0, 1e-15);
}

TEST(VelocityStep, CollapseRaisesStepFailure) {
  // Isotropic d=2, sigma=1, dt=2 makes the drift factor exactly zero.
  try {
    velocity_step(unit(2, 0), isotropic_spectrum(2), 1.0, 2.0, CoeffVector::Zero(2));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::StepFailure);
  }
}

TEST(VelocityStep, DimensionMismatch) {
  EXPECT_THROW(velocity_step(unit(3, 0), isotropic_spectrum(4), 1.0, 1e-3, CoeffVector::Zero(4)), Error);
}

TEST(SimulateVelocity, RejectsNonUnitStart) {
  Rng rng(1);
  EXPECT_THROW(simulate_velocity(CoeffVector::Constant(3, 1.0), isotropic_spectrum(3), 1.0, 1.0, 1e-3, rng), Error);
  EXPECT_THROW(simulate_velocity(unit(2, 0), isotropic_spectrum(3), 1.0, 1.0, 1e-3, rng), Error);
}

TEST(SimulateVelocity, ZeroSigmaIsConstant) {
  Rng rng(1);
  const auto tr = simulate_velocity(unit(4, 2), isotropic_spectrum(4), 0.0, 3.0, 1e-2, rng, 10);
  ASSERT_EQ(tr.size(), 31u);
  for (Eigen::Index c = 0; c < tr.v.cols(); ++c) EXPECT_EQ(tr.v.col(c), unit(4, 2));
  EXPECT_NEAR(tr.times.back(), 3.0, 1e-12);
}

TEST(SimulateVelocity, SphereDriftOverMillionSteps) {
  const auto spec = explicit_spectrum({1.0, 0.8, 0.5, 0.3});
  Rng rng(17);
  double worst = 0.0;
  integrate_kinetic(unit(4, 0), CoeffVector::Zero(4), spec, 1.0, 1000.0, 1e-3, rng,
                    [&](long, double, const CoeffVector& v, const CoeffVector&) {
                      worst = std::max(worst, std::abs(v.norm() - 1.0));
                    });
  EXPECT_LE(worst, 1e-10);
}

TEST(SimulateVelocity, IsotropicAutocorrelationDecay) {
  const auto spec = isotropic_spectrum(4);
  Rng rng(23);
  const long stride = 250;
  std::vector<Moments> m(5);
  for (int r = 0; r < 10000; ++r) {
    const auto tr = simulate_velocity(unit(4, 0), spec, 1.0, 2.0, 2e-3, rng, stride);
    for (Eigen::Index c = 0; c < tr.v.cols(); ++c) m[static_cast<std::size_t>(c)].add(tr.v(0, c));
  }
  for (std::size_t c = 0; c < m.size(); ++c) {
    const double t = 0.5 * static_cast<double>(c);
    EXPECT_NEAR(m[c].mean(), std::exp(-1.5 * t), 5.0 * m[c].se() + 2e-3) << "t=" << t;
  }
}

TEST(SimulateVelocity, TimeChangeMatchesSpeedOneLaw) {
  const auto spec = explicit_spectrum({1.0, 0.7, 0.4});
  Rng rng(29);
  const double sigma = 2.0;
  std::vector<std::vector<double>> fast(3), slow(3);
  for (int r = 0; r < 4000; ++r) {
    const auto a = simulate_velocity(unit(3, 0), spec, sigma, 0.3, 2.5e-4, rng, 400);
    const auto b = simulate_velocity(unit(3, 0), spec, 1.0, sigma * sigma * 0.3, 1e-3, rng, 400);
    ASSERT_EQ(a.size(), 4u);
    ASSERT_EQ(b.size(), 4u);
    for (std::size_t k = 0; k < 3; ++k) {
      fast[k].push_back(a.v(0, static_cast<Eigen::Index>(k + 1)));
      slow[k].push_back(b.v(0, static_cast<Eigen::Index>(k + 1)));
    }
  }
  for (std::size_t k = 0; k < 3; ++k) EXPECT_TRUE(ks_statistic(unweighted(fast[k]), unweighted(slow[k])).pass());
}

TEST(SimulatePosition, ZeroSigmaIsStraightLine) {
  Rng rng(1);
  const CoeffVector x0 = CoeffVector(Eigen::Vector3d(1.0, -2.0, 0.5));
  const CoeffVector v0 = CoeffVector(Eigen::Vector3d(0.0, 0.6, 0.8));
  const auto tr = simulate_position(v0, x0, isotropic_spectrum(3), 0.0, 2.0, 1e-2, rng, 20);
  for (std::size_t c = 0; c < tr.size(); ++c)
    EXPECT_LE((tr.x.col(static_cast<Eigen::Index>(c)) - (x0 + tr.times[c] * v0)).norm(), 1e-12);
}

TEST(SimulatePosition, TrapezoidQuadratureOfVelocity) {
  Rng rng(3);
  const auto tr = simulate_position(unit(3, 1), CoeffVector::Zero(3), explicit_spectrum({1.0, 0.7, 0.4}), 1.0, 0.5,
                                    1e-3, rng);
  for (Eigen::Index c = 1; c < tr.x.cols(); ++c) {
    const double h = tr.times[static_cast<std::size_t>(c)] - tr.times[static_cast<std::size_t>(c - 1)];
    const CoeffVector expect = tr.x.col(c - 1) + 0.5 * h * (tr.v.col(c - 1) + tr.v.col(c));
    ASSERT_LE((tr.x.col(c) - expect).norm(), 1e-14);
  }
}

TEST(SimulateRescaled, SpeedBound) {
  Rng rng(5);
  const double sigma = 2.0;
  const auto tr = simulate_rescaled(unit(4, 0), isotropic_spectrum(4), sigma, 1.0, 1e-2, rng, 4);
  EXPECT_NEAR(tr.times.back(), 1.0, 1e-12);
  for (Eigen::Index a = 0; a < tr.x.cols(); a += 7)
    for (Eigen::Index b = a + 1; b < tr.x.cols(); b += 5) {
      const double dt = tr.times[static_cast<std::size_t>(b)] - tr.times[static_cast<std::size_t>(a)];
      EXPECT_LE((tr.x.col(b) - tr.x.col(a)).norm(), sigma * sigma * dt * (1.0 + 1e-12));
    }
}

TEST(SimulateRescaled, IsotropicSecondMomentClosedForm) {
  // E|X_1|^2 = 4/3 - (8/9) sigma^-4 (1 - exp(-1.5 sigma^4)) for isotropic d=4.
  const auto spec = isotropic_spectrum(4);
  Rng rng(31);
  const double sigma = 1.0;
  Moments m;
  for (int r = 0; r < 10000; ++r) {
    const auto tr = simulate_rescaled(unit(4, 0), spec, sigma, 1.0, 2e-3, rng, 500);
    m.add(tr.x.col(tr.x.cols() - 1).squaredNorm());
  }
  const double expect = 4.0 / 3.0 - (8.0 / 9.0) * (1.0 - std::exp(-1.5));
  EXPECT_NEAR(m.mean(), expect, 5.0 * m.se() + 2e-3);
}

TEST(SimulateRescaled, RequiresPositiveSigma) {
  Rng rng(1);
  EXPECT_THROW(simulate_rescaled(unit(4, 0), isotropic_spectrum(4), 0.0, 1.0, 1e-3, rng), Error);
}

TEST(SimulateLift, ZeroSigmaIsConstant) {
  Rng rng(1);
  const CoeffVector u0 = CoeffVector(Eigen::Vector3d(0.3, 2.0, -1.0));
  const auto tr = simulate_lift(u0, explicit_spectrum({1.0, 0.7, 0.4}), 0.0, 1.0, 1e-2, rng);
  for (Eigen::Index c = 0; c < tr.u.cols(); ++c) EXPECT_EQ(tr.u.col(c), u0);
}

TEST(SimulateLift, RejectsZeroStart) {
  Rng rng(1);
  EXPECT_THROW(simulate_lift(CoeffVector::Zero(3), isotropic_spectrum(3), 1.0, 1.0, 1e-3, rng), Error);
}

TEST(SimulateLift, ProjectionMatchesVelocityLaw) {
  const auto spec = isotropic_spectrum(3);
  Rng rng(37);
  std::vector<double> lift, direct;
  for (int r = 0; r < 10000; ++r) {
    const auto a = simulate_lift(unit(3, 0), spec, 1.0, 1.0, 2e-3, rng, 500);
    lift.push_back(a.projected()(0, a.u.cols() - 1));
    const auto b = simulate_velocity(unit(3, 0), spec, 1.0, 1.0, 2e-3, rng, 500);
    direct.push_back(b.v(0, b.v.cols() - 1));
  }
  const auto ks = ks_statistic(unweighted(lift), unweighted(direct));
  EXPECT_TRUE(ks.pass()) << ks.statistic << " > " << ks.threshold;
}

TEST(SimulateLift, RadialLawStationaryUnderWeightedGaussian) {
  // With alpha = 1 the weighted measure |u|^-1 gamma(du) is invariant; its
  // radial part |u|^2 is Gamma((d-1)/2, 2) with mean d - 1.
  const int d = 3;
  const auto spec = isotropic_spectrum(d);
  Rng rng(41);
  std::gamma_distribution<double> radial(0.5 * (d - 1), 2.0);
  std::normal_distribution<double> normal;
  Moments m;
  for (int r = 0; r < 10000; ++r) {
    CoeffVector dir(d);
    for (int i = 0; i < d; ++i) dir[i] = normal(rng);
    const CoeffVector u0 = std::sqrt(radial(rng)) * dir.normalized();
    const auto tr = simulate_lift(u0, spec, 1.0, 0.5, 1e-3, rng, 500);
    m.add(tr.u.col(tr.u.cols() - 1).squaredNorm());
  }
  EXPECT_NEAR(m.mean(), d - 1.0, 5.0 * m.se() + 1e-2);
}

TEST(CoupledPair, EqualStartsStayEqual) {
  Rng rng(43);
  const auto p = simulate_coupled_pair(unit(4, 1), unit(4, 1), isotropic_spectrum(4), 2.0, 1e-3, rng, 100);
  for (double n : p.distance) EXPECT_EQ(n, 0.0);
  EXPECT_EQ(p.v, p.w);
}

TEST(CoupledPair, AntipodalStartAndIdentity) {
  Rng rng(47);
  const auto p = simulate_coupled_pair(unit(4, 0), -unit(4, 0), isotropic_spectrum(4), 1.0, 1e-3, rng, 50);
  EXPECT_DOUBLE_EQ(p.distance.front(), 2.0);
  for (std::size_t c = 0; c < p.times.size(); ++c) {
    const auto i = static_cast<Eigen::Index>(c);
    EXPECT_NEAR(p.distance[c], 1.0 - p.v.col(i).dot(p.w.col(i)), 1e-10);
    EXPECT_GE(p.distance[c], 0.0);
    EXPECT_LE(p.distance[c], 2.0);
  }
}

TEST(CoupledPair, ContractionInExpectation) {
  // E N_t <= exp(-t (Tr - 3 max alpha^2)) N_0; isotropic d=4 gives rate 1.
  const auto spec = isotropic_spectrum(4);
  Rng rng(53);
  Moments m;
  for (int r = 0; r < 2000; ++r) {
    const auto p = simulate_coupled_pair(unit(4, 0), unit(4, 1), spec, 1.0, 2e-3, rng, 500);
    m.add(p.distance.back());
  }
  EXPECT_LE(m.mean(), std::exp(-1.0) + 3.0 * m.se());
}

TEST(WriteTrajectory, LongFormat) {
  Rng rng(1);
  const auto tr = simulate_velocity(unit(2, 0), isotropic_spectrum(2), 0.0, 1.0, 0.5, rng);
  std::ostringstream os;
  write_trajectory(os, tr);
  const std::string body = os.str();
  EXPECT_EQ(body.rfind("t,mode_id,value\n", 0), 0u);
  EXPECT_EQ(std::count(body.begin(), body.end(), '\n'), 1 + 3 * 2);
}
