#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "kbm/invariant_stats.hpp"

using namespace kbm;

namespace {

CoeffVector unit(Eigen::Index n, Eigen::Index i) { return CoeffVector::Unit(n, i); }

Weighted1D column_marginal(const Eigen::MatrixXd& pts, Eigen::Index coord) {
  std::vector<double> v(static_cast<std::size_t>(pts.cols()));
  for (Eigen::Index j = 0; j < pts.cols(); ++j) v[static_cast<std::size_t>(j)] = pts(coord, j);
  return Weighted1D::unweighted(std::move(v));
}

std::vector<SphereTrajectory> stationary_ensemble(const CovarianceSpectrum& spec, int reps, double T, double dt,
                                                  long stride, Rng& rng) {
  const Eigen::MatrixXd starts = sample_invariant_exact(spec, static_cast<std::size_t>(reps), rng);
  std::vector<SphereTrajectory> out;
  for (int r = 0; r < reps; ++r) out.push_back(simulate_velocity(starts.col(r), spec, 1.0, T, dt, rng, stride));
  return out;
}

}  // namespace

TEST(InvariantOracle, RejectsLowDimension) {
  Rng rng(1);
  try {
    sample_invariant_oracle(isotropic_spectrum(2), 10, rng);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnsupportedDimension);
  }
}

TEST(InvariantOracle, SingleDrawIsUnitWithUnitWeight) {
  Rng rng(2);
  const auto s = sample_invariant_oracle(explicit_spectrum({1.0, 0.7, 0.4}), 1, rng);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s.weights[0], 1.0);
  EXPECT_NEAR(s.points.col(0).norm(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(s.effective_size(), 1.0);
}

TEST(InvariantOracle, IsotropicIsUniformOnSphere) {
  // On S^2 each coordinate of a uniform point is uniform on [-1, 1].
  Rng rng(3);
  const auto s = sample_invariant_oracle(isotropic_spectrum(3), 20000, rng);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::vector<double> ref(20000);
  for (auto& x : ref) x = unif(rng);
  const auto ks = ks_statistic(marginal(s, 0), Weighted1D::unweighted(ref));
  EXPECT_TRUE(ks.pass()) << ks.statistic << " > " << ks.threshold;
}

TEST(InvariantOracle, EssTargetReached) {
  Rng rng(4);
  const auto s = sample_invariant_oracle_ess(explicit_spectrum({1.0, 0.7, 0.4}), 5000.0, rng, 1000);
  EXPECT_GE(s.effective_size(), 5000.0);
  double total = 0.0;
  for (double w : s.weights) total += w;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(ExactSampler, AgreesWithImportanceOracle) {
  const auto spec = explicit_spectrum({1.0, 0.7, 0.4});
  Rng rng(5);
  const auto exact = sample_invariant_exact(spec, 20000, rng);
  const auto oracle = sample_invariant_oracle_ess(spec, 20000.0, rng);
  for (Eigen::Index c = 0; c < 3; ++c) {
    EXPECT_NEAR(exact.col(0).norm(), 1.0, 1e-15);
    const auto ks = ks_statistic(column_marginal(exact, c), marginal(oracle, c));
    EXPECT_TRUE(ks.pass()) << "coord " << c << ": " << ks.statistic << " > " << ks.threshold;
  }
}

TEST(ExactSampler, IsotropicSecondMoments) {
  Rng rng(6);
  const auto pts = sample_invariant_exact(isotropic_spectrum(4), 20000, rng);
  for (Eigen::Index c = 0; c < 4; ++c) EXPECT_NEAR(pts.row(c).squaredNorm() / 20000.0, 0.25, 0.01);
}

TEST(ExactSampler, RejectsZeroAlpha) {
  Rng rng(7);
  EXPECT_THROW(sample_invariant_exact(explicit_spectrum({1.0, 0.0, 0.5}), 5, rng), Error);
}

TEST(KsStatistic, IdenticalSamplesGiveZero) {
  const auto a = Weighted1D::unweighted({0.1, 0.5, -0.3, 2.0});
  EXPECT_EQ(ks_statistic(a, a).statistic, 0.0);
}

TEST(KsStatistic, DisjointPointMassesGiveOne) {
  const auto a = Weighted1D::unweighted({0.0, 0.0, 0.0});
  const auto b = Weighted1D::unweighted({1.0, 1.0});
  EXPECT_DOUBLE_EQ(ks_statistic(a, b).statistic, 1.0);
}

TEST(KsStatistic, ThresholdUsesEffectiveSizes) {
  const auto a = Weighted1D::unweighted(std::vector<double>(100, 0.0));
  Weighted1D b;
  b.values = {0.0, 1.0, 2.0, 3.0};
  b.weights = {3.0, 1.0, 1.0, 1.0};
  const auto r = ks_statistic(a, b);
  EXPECT_DOUBLE_EQ(r.ess_a, 100.0);
  EXPECT_DOUBLE_EQ(r.ess_b, 36.0 / 12.0);
  EXPECT_NEAR(r.threshold, kKsCritical1pct * std::sqrt((r.ess_a + r.ess_b) / (r.ess_a * r.ess_b)), 1e-15);
}

TEST(KsStatistic, EmptySampleRejected) {
  EXPECT_THROW(ks_statistic(Weighted1D{}, Weighted1D::unweighted({1.0})), Error);
}

TEST(KsStatistic, CalibratedAtOnePercent) {
  Rng rng(8);
  std::normal_distribution<double> normal;
  int failures = 0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> a(10000), b(10000);
    for (auto& x : a) x = normal(rng);
    for (auto& x : b) x = normal(rng);
    if (!ks_statistic(Weighted1D::unweighted(a), Weighted1D::unweighted(b)).pass()) ++failures;
  }
  // Expected 2 failures; 7 or more has probability below 0.5%.
  EXPECT_LE(failures, 6);
}

TEST(Autocovariance, LagZeroTraceIsOne) {
  Rng rng(9);
  const auto ens = stationary_ensemble(explicit_spectrum({1.0, 0.7, 0.4}), 20, 1.0, 1e-2, 10, rng);
  const auto c = autocovariance(ens, {0.0, 0.5});
  EXPECT_NEAR(c.trace[0], 1.0, 1e-12);
  EXPECT_FALSE(c.cross);
  EXPECT_EQ(c.rho[0](0, 1), 0.0);
}

TEST(Autocovariance, LagErrors) {
  Rng rng(10);
  const auto ens = stationary_ensemble(isotropic_spectrum(3), 3, 1.0, 1e-2, 10, rng);
  try {
    autocovariance(ens, {2.0});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::HorizonTooShort);
  }
  try {
    autocovariance(ens, {0.05});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::GridMismatch);
  }
}

TEST(Autocovariance, IsotropicTraceDecay) {
  Rng rng(11);
  const auto ens = stationary_ensemble(isotropic_spectrum(4), 400, 6.0, 2e-3, 25, rng);
  std::vector<double> lags;
  for (int k = 0; k <= 80; ++k) lags.push_back(0.05 * k);
  const auto c = autocovariance(ens, lags, true);
  for (std::size_t l = 0; l < lags.size(); l += 10)
    EXPECT_NEAR(c.trace[l], std::exp(-1.5 * lags[l]), 4.0 * c.trace_stderr[l] + 5e-3) << "lag " << lags[l];
  const auto lc = limit_covariance(c);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(lc.C(i, i), 1.0 / 3.0, 1.0 / 30.0);
  EXPECT_EQ(lc.C, lc.C.transpose());
}

TEST(LimitCovariance, ZeroCurveGivesZero) {
  AutocovCurve c;
  for (int l = 0; l < 5; ++l) {
    c.lags.push_back(0.1 * l);
    c.rho.push_back(Eigen::MatrixXd::Zero(3, 3));
    c.stderr_.push_back(Eigen::MatrixXd::Zero(3, 3));
    c.trace.push_back(0.0);
    c.trace_stderr.push_back(0.0);
  }
  const auto lc = limit_covariance(c);
  EXPECT_EQ(lc.C, Eigen::MatrixXd::Zero(3, 3));
}

TEST(LimitCovariance, ExponentialCurveAndSymmetry) {
  Eigen::MatrixXd M(2, 2);
  M << 1.0, 0.4, 0.0, 0.5;
  AutocovCurve c;
  c.cross = true;
  for (int l = 0; l <= 100; ++l) {
    const double t = 0.1 * l;
    c.lags.push_back(t);
    c.rho.push_back(std::exp(-t) * M);
    c.stderr_.push_back(Eigen::MatrixXd::Zero(2, 2));
    c.trace.push_back(std::exp(-t) * M.trace());
    c.trace_stderr.push_back(0.0);
  }
  const auto lc = limit_covariance(c);
  EXPECT_EQ(lc.C, lc.C.transpose());
  EXPECT_LE((lc.C - (M + M.transpose())).norm(), 2e-3);
  EXPECT_NEAR(lc.tail_rate, 1.0, 1e-9);
  EXPECT_EQ(lc.psd_defect, 0.0);
}

TEST(LimitCovariance, UndecayedCurveRejected) {
  AutocovCurve c;
  for (int l = 0; l < 3; ++l) {
    c.lags.push_back(l);
    c.rho.push_back(Eigen::MatrixXd::Identity(2, 2));
    c.stderr_.push_back(Eigen::MatrixXd::Zero(2, 2));
    c.trace.push_back(2.0);
    c.trace_stderr.push_back(0.0);
  }
  try {
    limit_covariance(c);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::HorizonTooShort);
  }
}

TEST(MixingFit, ConditionViolatedWithoutMargin) {
  Rng rng(12);
  std::vector<CoupledPairTrajectory> ens{
      simulate_coupled_pair(unit(3, 0), unit(3, 1), isotropic_spectrum(3), 1.0, 1e-2, rng)};
  try {
    mixing_decay_fit(ens, isotropic_spectrum(3));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ConditionViolated);
  }
}

TEST(MixingFit, EqualStartsAreDegenerate) {
  Rng rng(13);
  std::vector<CoupledPairTrajectory> ens;
  for (int r = 0; r < 5; ++r)
    ens.push_back(simulate_coupled_pair(unit(4, 0), unit(4, 0), isotropic_spectrum(4), 1.0, 1e-2, rng, 10));
  const auto fit = mixing_decay_fit(ens, isotropic_spectrum(4));
  EXPECT_TRUE(fit.degenerate);
  EXPECT_FALSE(fit.pass());
}

TEST(MixingFit, IsotropicSlopeBound) {
  const auto spec = isotropic_spectrum(4);
  Rng rng(14);
  std::vector<CoupledPairTrajectory> ens;
  for (int r = 0; r < 500; ++r)
    ens.push_back(simulate_coupled_pair(unit(4, 0), unit(4, 1), spec, 4.0, 2e-3, rng, 25));
  const auto fit = mixing_decay_fit(ens, spec);
  EXPECT_FALSE(fit.degenerate);
  EXPECT_DOUBLE_EQ(fit.bound, -1.0);
  EXPECT_GT(fit.stderr_, 0.0);
  EXPECT_TRUE(fit.pass()) << fit.slope << " se " << fit.stderr_;
  EXPECT_NEAR(fit.tau, 2.0 / std::abs(fit.slope), 1e-15);
}

TEST(MeanDecay, StartValueAndBound) {
  const auto spec = isotropic_spectrum(4);
  Rng rng(15);
  std::vector<SphereTrajectory> ens;
  for (int r = 0; r < 1000; ++r) ens.push_back(simulate_velocity(unit(4, 0), spec, 1.0, 2.0, 2e-3, rng, 100));
  const auto c = mean_decay_curve(ens, 2.0);
  EXPECT_DOUBLE_EQ(c.norm.front(), 1.0);
  EXPECT_DOUBLE_EQ(c.bound.front(), 2.0);
  EXPECT_TRUE(c.pass());
  // Exact mean for isotropic d=4 is exp(-1.5 t) v0.
  EXPECT_NEAR(c.norm.back(), std::exp(-3.0), 4.0 * c.stderr_.back());
}

TEST(MeanDecay, StationaryStartHasNoMean) {
  Rng rng(16);
  const auto ens = stationary_ensemble(explicit_spectrum({1.0, 0.7, 0.4}), 2000, 1.0, 1e-2, 50, rng);
  const auto c = mean_decay_curve(ens, 1.0);
  // |mean| of a 3-vector of noise is of order sqrt(3) se.
  for (std::size_t k = 0; k < c.times.size(); ++k) EXPECT_LE(c.norm[k], 4.0 * c.stderr_[k]);
}

TEST(MeanDecay, RejectsBadTau) {
  Rng rng(17);
  std::vector<SphereTrajectory> ens{simulate_velocity(unit(3, 0), isotropic_spectrum(3), 1.0, 0.1, 1e-2, rng)};
  EXPECT_THROW(mean_decay_curve(ens, 0.0), Error);
}

TEST(Exports, HeadersMatchFormats) {
  AutocovCurve c;
  c.lags = {0.0};
  c.rho = {Eigen::MatrixXd::Identity(2, 2)};
  c.stderr_ = {Eigen::MatrixXd::Zero(2, 2)};
  std::ostringstream a;
  write_autocov(a, c);
  EXPECT_EQ(a.str(), "lag,mode_i,mode_j,value,stderr\n0,0,0,1,0\n0,1,1,1,0\n");
  std::ostringstream s;
  write_summary(s, {{0.5, "mean", 1.25, 0.1}});
  EXPECT_EQ(s.str(), "t,stat,value,stderr\n0.5,mean,1.25,0.10000000000000001\n");
}
