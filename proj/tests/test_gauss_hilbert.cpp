#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "kbm/gauss_hilbert.hpp"

using namespace kbm;

namespace {

// Mean and standard error of a sample stream.
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

}  // namespace

TEST(SobolevSpectrum, UnitShellHasUnitAlpha) {
  const auto table = torus::enumerate_modes(1);
  const auto spec = sobolev_spectrum(table, 1.0);
  ASSERT_EQ(spec.dim(), 4u);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(spec.alpha[i], 1.0);
  EXPECT_DOUBLE_EQ(spec.trace(), 4.0);
  EXPECT_DOUBLE_EQ(spec.s, 2.0);
}

TEST(SobolevSpectrum, ModeTwoZeroHasQuarterVariance) {
  const auto table = torus::enumerate_modes(2);
  const auto spec = sobolev_spectrum(table, 1.0);
  const auto idx = table.find(2, 0, torus::Parity::Cos);
  ASSERT_TRUE(idx.has_value());
  EXPECT_DOUBLE_EQ(spec.variances()[static_cast<Eigen::Index>(*idx)], 0.25);
}

TEST(SobolevSpectrum, AlphaNonIncreasingAlongTable) {
  const auto spec = sobolev_spectrum(torus::enumerate_modes(4), 1.3);
  for (Eigen::Index i = 1; i < spec.alpha.size(); ++i) EXPECT_LE(spec.alpha[i], spec.alpha[i - 1]);
}

TEST(SobolevSpectrum, RejectsSmallExponent) {
  const auto table = torus::enumerate_modes(1);
  try {
    sobolev_spectrum(table, 0.5);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidExponent);
  }
}

TEST(IsotropicSpectrum, IdentityCovariance) {
  const auto spec = isotropic_spectrum(5);
  EXPECT_EQ(spec.dim(), 5u);
  EXPECT_DOUBLE_EQ(spec.trace(), 5.0);
  EXPECT_DOUBLE_EQ(spec.max_variance(), 1.0);
}

TEST(TraceCondition, DocumentedMargins) {
  const auto d3 = trace_condition(isotropic_spectrum(3));
  EXPECT_DOUBLE_EQ(d3.margin, 0.0);
  EXPECT_FALSE(d3.holds);
  const auto d4 = trace_condition(isotropic_spectrum(4));
  EXPECT_DOUBLE_EQ(d4.margin, 1.0);
  EXPECT_TRUE(d4.holds);
  const auto t2 = trace_condition(sobolev_spectrum(torus::enumerate_modes(1), 1.0));
  EXPECT_DOUBLE_EQ(t2.margin, 1.0);
  EXPECT_TRUE(t2.holds);
}

TEST(TraceCondition, HoldsOnTorusForAnyAdmissibleExponent) {
  for (double a : {0.6, 1.0, 2.0, 4.0})
    for (int k : {1, 2, 3}) EXPECT_TRUE(trace_condition(sobolev_spectrum(torus::enumerate_modes(k), a)).holds);
}

TEST(TraceCondition, MarginScalesWithVariance) {
  const auto base = explicit_spectrum({1.0, 0.7, 0.4, 0.9});
  const double c = 2.5;
  auto scaled = base;
  scaled.alpha *= std::sqrt(c);
  const auto t0 = trace_condition(base);
  const auto t1 = trace_condition(scaled);
  EXPECT_NEAR(t1.margin, c * t0.margin, 1e-12);
  EXPECT_EQ(t1.holds, t0.holds);
}

TEST(TraceCondition, EmptySpectrumRejected) {
  CovarianceSpectrum empty;
  EXPECT_THROW(trace_condition(empty), Error);
  EXPECT_THROW(explicit_spectrum({}), Error);
  EXPECT_THROW(explicit_spectrum({1.0, -0.1}), Error);
}

TEST(SampleGaussian, ZeroSpectrumGivesZero) {
  Rng rng(7);
  const auto x = sample_gaussian(explicit_spectrum({0.0, 0.0, 0.0}), rng);
  EXPECT_EQ(x.norm(), 0.0);
}

TEST(SampleGaussian, VariancesAndTraceMatchWithinFiveSe) {
  const auto spec = explicit_spectrum({1.0, 0.7, 0.4});
  Rng rng(11);
  std::vector<Moments> per(3);
  Moments tr;
  for (int i = 0; i < 100000; ++i) {
    const auto x = sample_gaussian(spec, rng);
    for (int n = 0; n < 3; ++n) per[static_cast<std::size_t>(n)].add(x[n] * x[n]);
    tr.add(x.squaredNorm());
  }
  for (int n = 0; n < 3; ++n) {
    const auto& m = per[static_cast<std::size_t>(n)];
    EXPECT_NEAR(m.mean(), spec.variances()[n], 5.0 * m.se());
  }
  EXPECT_NEAR(tr.mean(), spec.trace(), 5.0 * tr.se());
}

TEST(BrownianIncrement, RejectsNonPositiveStep) {
  Rng rng(1);
  const auto spec = isotropic_spectrum(2);
  try {
    brownian_increment(spec, 0.0, rng);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidStep);
  }
  EXPECT_THROW(brownian_increment(spec, -1.0, rng), Error);
}

TEST(BrownianIncrement, TinyStepIsNearZero) {
  Rng rng(3);
  EXPECT_LT(brownian_increment(isotropic_spectrum(4), 1e-300, rng).norm(), 1e-140);
}

TEST(BrownianIncrement, TwoHalfStepsMatchOneStepVariance) {
  const auto spec = sobolev_spectrum(torus::enumerate_modes(2), 1.0);
  Rng rng(5);
  const double dt = 0.3;
  Moments whole, halves;
  for (int i = 0; i < 50000; ++i) {
    whole.add(brownian_increment(spec, dt, rng).squaredNorm());
    const CoeffVector h = brownian_increment(spec, dt / 2, rng) + brownian_increment(spec, dt / 2, rng);
    halves.add(h.squaredNorm());
  }
  EXPECT_NEAR(whole.mean(), spec.trace() * dt, 5.0 * whole.se());
  EXPECT_NEAR(halves.mean(), whole.mean(), 5.0 * std::hypot(whole.se(), halves.se()));
}

TEST(BrownianIncrement, IsotropicUnitStepIsStandardNormal) {
  Rng rng(9);
  Moments m0, m0sq, cross;
  for (int i = 0; i < 50000; ++i) {
    const auto x = brownian_increment(isotropic_spectrum(4), 1.0, rng);
    m0.add(x[0]);
    m0sq.add(x[0] * x[0]);
    cross.add(x[1] * x[2]);
  }
  EXPECT_NEAR(m0.mean(), 0.0, 5.0 * m0.se());
  EXPECT_NEAR(m0sq.mean(), 1.0, 5.0 * m0sq.se());
  EXPECT_NEAR(cross.mean(), 0.0, 5.0 * cross.se());
}

TEST(NormFunctionals, ConsistentWithEigenvalueWeights) {
  const auto table = torus::enumerate_modes(2);
  const auto spec = sobolev_spectrum(table, 1.5, 2.0);
  CoeffVector v = CoeffVector::LinSpaced(spec.alpha.size(), 0.1, 1.0);
  double q = 0.0, ha = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    q += v[i] * v[i] / std::pow(spec.eigenvalues[i], 2.0);
    ha += v[i] * v[i] * std::pow(spec.eigenvalues[i], 1.5);
  }
  EXPECT_NEAR(q0(v, spec), q, 1e-14);
  EXPECT_NEAR(l2_norm(v, spec), std::sqrt(q), 1e-14);
  EXPECT_NEAR(hsa_norm(v, spec), std::sqrt(ha), 1e-13);
  EXPECT_DOUBLE_EQ(hs_norm(v), v.norm());
  EXPECT_NEAR(to_l2(v, spec).squaredNorm(), q, 1e-14);
}

TEST(NormFunctionals, AbstractSpaceNormsCoincide) {
  const auto spec = isotropic_spectrum(3);
  const CoeffVector v = CoeffVector::Constant(3, 0.5);
  EXPECT_DOUBLE_EQ(l2_norm(v, spec), hs_norm(v));
}

TEST(WriteSpectrum, HeaderAndRows) {
  std::ostringstream os;
  write_spectrum(os, isotropic_spectrum(2));
  EXPECT_EQ(os.str().rfind("mode_id,alpha\n", 0), 0u);
  const std::string body = os.str();
  EXPECT_EQ(std::count(body.begin(), body.end(), '\n'), 3);
}
