#ifndef KBM_INVARIANT_STATS_HPP
#define KBM_INVARIANT_STATS_HPP

// Invariant-measure samplers, two-sample statistics, autocovariance and
// limit-covariance estimation, and mixing-rate fits.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "kbm/csv.hpp"
#include "kbm/error.hpp"
#include "kbm/gauss_hilbert.hpp"
#include "kbm/kinetic_sde.hpp"
#include "kbm/rng.hpp"

namespace kbm {

/// Self-normalized weighted sample of unit vectors (one column per point).
struct WeightedSample {
  Eigen::MatrixXd points;
  std::vector<double> weights;

  std::size_t size() const noexcept { return weights.size(); }

  double effective_size() const {
    double s = 0.0, s2 = 0.0;
    for (double w : weights) {
      s += w;
      s2 += w * w;
    }
    return s2 > 0.0 ? s * s / s2 : 0.0;
  }

  void normalize() {
    const double s = std::accumulate(weights.begin(), weights.end(), 0.0);
    require(s > 0.0, ErrorKind::DegenerateInput, "weights sum to zero");
    for (double& w : weights) w /= s;
  }
};

/// Importance sampler: u ~ gamma, weight 1/|u|, projected to the sphere.
inline WeightedSample sample_invariant_oracle(const CovarianceSpectrum& spec, std::size_t n, Rng& rng) {
  require(n >= 1, ErrorKind::EmptySample, "oracle needs n >= 1");
  require(spec.dim() >= 3, ErrorKind::UnsupportedDimension,
          "importance weights 1/|u| have infinite variance for N <= 2");
  WeightedSample out;
  out.points.resize(spec.alpha.size(), static_cast<Eigen::Index>(n));
  out.weights.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    CoeffVector u = sample_gaussian(spec, rng);
    const double r = u.norm();
    out.points.col(static_cast<Eigen::Index>(j)) = u / r;
    out.weights[j] = 1.0 / r;
  }
  out.normalize();
  return out;
}

/// Draws oracle points in batches until the effective size reaches `min_ess`.
inline WeightedSample sample_invariant_oracle_ess(const CovarianceSpectrum& spec, double min_ess, Rng& rng,
                                                  std::size_t batch = 4096) {
  require(spec.dim() >= 3, ErrorKind::UnsupportedDimension,
          "importance weights 1/|u| have infinite variance for N <= 2");
  require(batch >= 1, ErrorKind::InvalidParameter, "batch must be >= 1");
  std::vector<CoeffVector> pts;
  std::vector<double> w;
  double s = 0.0, s2 = 0.0;
  while (w.empty() || s * s / s2 < min_ess) {
    for (std::size_t j = 0; j < batch; ++j) {
      CoeffVector u = sample_gaussian(spec, rng);
      const double r = u.norm();
      pts.push_back(u / r);
      w.push_back(1.0 / r);
      s += 1.0 / r;
      s2 += 1.0 / (r * r);
    }
  }
  WeightedSample out;
  out.points.resize(spec.alpha.size(), static_cast<Eigen::Index>(pts.size()));
  for (std::size_t j = 0; j < pts.size(); ++j) out.points.col(static_cast<Eigen::Index>(j)) = pts[j];
  out.weights = std::move(w);
  out.normalize();
  return out;
}

/// Exact i.i.d. sampler of the invariant measure by rejection.
///
/// The projected density of u/|u| under gamma is proportional to
/// q(theta)^{-N/2}, q = sum theta_n^2 / alpha_n^2, and the 1/|u| weight turns it
/// into q^{-(N-1)/2}. The ratio is proportional to sqrt(q) <= 1/alpha_min, so a
/// projected Gaussian draw is accepted with probability alpha_min sqrt(q).
inline Eigen::MatrixXd sample_invariant_exact(const CovarianceSpectrum& spec, std::size_t n, Rng& rng) {
  require(spec.dim() >= 1, ErrorKind::UnsupportedDimension, "empty spectrum");
  const double amin = spec.alpha.minCoeff();
  require(amin > 0.0, ErrorKind::DegenerateInput, "exact sampler needs alpha_n > 0");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::MatrixXd out(spec.alpha.size(), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n;) {
    CoeffVector u = sample_gaussian(spec, rng);
    u.normalize();
    const double q = (u.array() / spec.alpha.array()).square().sum();
    if (unif(rng) <= amin * std::sqrt(q)) out.col(static_cast<Eigen::Index>(j++)) = u;
  }
  return out;
}

/// One-dimensional weighted sample for KS tests.
struct Weighted1D {
  std::vector<double> values;
  std::vector<double> weights;

  static Weighted1D unweighted(std::vector<double> v) {
    Weighted1D s;
    s.weights.assign(v.size(), 1.0);
    s.values = std::move(v);
    return s;
  }

  double effective_size() const {
    double a = 0.0, b = 0.0;
    for (double w : weights) {
      a += w;
      b += w * w;
    }
    return b > 0.0 ? a * a / b : 0.0;
  }
};

inline Weighted1D marginal(const WeightedSample& s, Eigen::Index coord) {
  Weighted1D m;
  m.values.resize(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) m.values[j] = s.points(coord, static_cast<Eigen::Index>(j));
  m.weights = s.weights;
  return m;
}

struct KsResult {
  double statistic = 0.0;
  double threshold = 0.0;
  double ess_a = 0.0;
  double ess_b = 0.0;
  bool pass() const noexcept { return statistic <= threshold; }
};

/// Asymptotic 1% critical value sqrt(-ln(0.005)/2) of the Kolmogorov distribution.
inline constexpr double kKsCritical1pct = 1.6276236;

/// Weighted two-sample KS statistic; the 1% threshold uses effective sizes.
inline KsResult ks_statistic(const Weighted1D& a, const Weighted1D& b) {
  require(!a.values.empty() && !b.values.empty(), ErrorKind::EmptySample, "KS needs nonempty samples");
  require(a.values.size() == a.weights.size() && b.values.size() == b.weights.size(), ErrorKind::DimensionMismatch,
          "values and weights differ in length");
  auto order = [](const Weighted1D& s) {
    std::vector<std::size_t> idx(s.values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return s.values[i] < s.values[j]; });
    return idx;
  };
  const auto ia = order(a);
  const auto ib = order(b);
  const double wa = std::accumulate(a.weights.begin(), a.weights.end(), 0.0);
  const double wb = std::accumulate(b.weights.begin(), b.weights.end(), 0.0);
  require(wa > 0.0 && wb > 0.0, ErrorKind::DegenerateInput, "KS weights sum to zero");
  double fa = 0.0, fb = 0.0, d = 0.0;
  std::size_t p = 0, q = 0;
  while (p < ia.size() || q < ib.size()) {
    const double va = p < ia.size() ? a.values[ia[p]] : INFINITY;
    const double vb = q < ib.size() ? b.values[ib[q]] : INFINITY;
    const double x = std::min(va, vb);
    while (p < ia.size() && a.values[ia[p]] == x) fa += a.weights[ia[p++]];
    while (q < ib.size() && b.values[ib[q]] == x) fb += b.weights[ib[q++]];
    d = std::max(d, std::abs(fa / wa - fb / wb));
  }
  KsResult r;
  r.statistic = d;
  r.ess_a = a.effective_size();
  r.ess_b = b.effective_size();
  r.threshold = kKsCritical1pct * std::sqrt((r.ess_a + r.ess_b) / (r.ess_a * r.ess_b));
  return r;
}

/// rho[l](i,j) = E[v_0^i v_t^j] at t = lags[l], with standard errors over replicas.
struct AutocovCurve {
  std::vector<double> lags;
  std::vector<Eigen::MatrixXd> rho;
  std::vector<Eigen::MatrixXd> stderr_;
  std::vector<double> trace;         ///< sum_i rho_ii
  std::vector<double> trace_stderr;
  bool cross = false;                ///< off-diagonal entries estimated

  std::size_t dim() const { return rho.empty() ? 0 : static_cast<std::size_t>(rho.front().rows()); }
};

/// Estimates the stationary autocovariance from trajectories sharing one
/// uniform time grid, averaging products over start times within each replica
/// and taking standard errors across replicas.
inline AutocovCurve autocovariance(const std::vector<SphereTrajectory>& ensemble, const std::vector<double>& lags,
                                   bool cross = false) {
  require(!ensemble.empty(), ErrorKind::EmptySample, "autocovariance needs at least one trajectory");
  const auto& ref = ensemble.front();
  require(ref.size() >= 2, ErrorKind::EmptySample, "trajectories need at least two samples");
  const double h = ref.times[1] - ref.times[0];
  const double horizon = ref.times.back() - ref.times.front();
  const Eigen::Index n = ref.v.rows();
  for (const auto& tr : ensemble)
    require(tr.size() == ref.size() && tr.v.rows() == n, ErrorKind::GridMismatch,
            "ensemble trajectories must share the time grid");
  AutocovCurve c;
  c.lags = lags;
  c.cross = cross;
  const double reps = static_cast<double>(ensemble.size());
  for (double lag : lags) {
    require(lag >= 0.0 && lag < horizon + 1e-9 * (1.0 + horizon), ErrorKind::HorizonTooShort,
            "lag " + csv::num(lag) + " exceeds trajectory horizon " + csv::num(horizon));
    const double steps = lag / h;
    const long li = std::lround(steps);
    require(std::abs(steps - static_cast<double>(li)) <= 1e-6, ErrorKind::GridMismatch,
            "lag is not a multiple of the sampling step");
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(n, n), sum2 = Eigen::MatrixXd::Zero(n, n);
    double tsum = 0.0, tsum2 = 0.0;
    const long starts = static_cast<long>(ref.size()) - li;
    for (const auto& tr : ensemble) {
      Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
      for (long s = 0; s < starts; ++s) {
        if (cross)
          m.noalias() += tr.v.col(s) * tr.v.col(s + li).transpose();
        else
          m.diagonal().array() += tr.v.col(s).array() * tr.v.col(s + li).array();
      }
      m /= static_cast<double>(starts);
      sum += m;
      sum2.array() += m.array().square();
      const double t = m.trace();
      tsum += t;
      tsum2 += t * t;
    }
    Eigen::MatrixXd mean = sum / reps;
    Eigen::MatrixXd var = (sum2 / reps - mean.array().square().matrix()) * (reps / std::max(reps - 1.0, 1.0));
    c.rho.push_back(mean);
    c.stderr_.push_back((var.array().max(0.0) / reps).sqrt().matrix());
    const double tm = tsum / reps;
    const double tv = (tsum2 / reps - tm * tm) * (reps / std::max(reps - 1.0, 1.0));
    c.trace.push_back(tm);
    c.trace_stderr.push_back(std::sqrt(std::max(tv, 0.0) / reps));
  }
  return c;
}

struct LimitCovariance {
  Eigen::MatrixXd C;
  double psd_defect = 0.0;    ///< Frobenius norm removed by eigenvalue clipping
  double tail_rate = 0.0;     ///< fitted exponential rate of the trace curve
  double trapezoid_part = 0.0;///< trace contribution of the quadrature
  double tail_part = 0.0;     ///< trace contribution of the extrapolated tail
};

/// C_ij = int_0^inf (rho_ij + rho_ji) dt by trapezoid on the lag grid plus an
/// exponential tail with the rate fitted to the decaying trace curve.
inline LimitCovariance limit_covariance(const AutocovCurve& curve) {
  require(curve.lags.size() >= 2, ErrorKind::EmptySample, "limit covariance needs at least two lags");
  const std::size_t L = curve.lags.size();
  const Eigen::Index n = static_cast<Eigen::Index>(curve.dim());
  const double floor = std::max(3.0 * curve.trace_stderr.back(), 1e-2 * std::abs(curve.trace.front()));
  require(std::abs(curve.trace.back()) <= floor, ErrorKind::HorizonTooShort,
          "autocovariance has not decayed by the last lag (" + csv::num(curve.trace.back()) + " > " +
              csv::num(floor) + ")");
  LimitCovariance out;
  Eigen::MatrixXd integral = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t l = 0; l + 1 < L; ++l)
    integral += 0.5 * (curve.lags[l + 1] - curve.lags[l]) * (curve.rho[l] + curve.rho[l + 1]);
  // Tail rate from log-linear fit of the trace where it is clearly above noise.
  std::vector<double> ts, ys;
  for (std::size_t l = 0; l < L; ++l)
    if (curve.trace[l] > 3.0 * curve.trace_stderr[l] && curve.trace[l] > 0.0) {
      ts.push_back(curve.lags[l]);
      ys.push_back(std::log(curve.trace[l]));
    }
  Eigen::MatrixXd tail = Eigen::MatrixXd::Zero(n, n);
  if (ts.size() >= 2) {
    const double tm = std::accumulate(ts.begin(), ts.end(), 0.0) / static_cast<double>(ts.size());
    const double ym = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      sxy += (ts[i] - tm) * (ys[i] - ym);
      sxx += (ts[i] - tm) * (ts[i] - tm);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    if (slope < 0.0) {
      out.tail_rate = -slope;
      tail = curve.rho.back() / out.tail_rate;
    }
  }
  Eigen::MatrixXd total = integral + tail;
  Eigen::MatrixXd sym = total + total.transpose();
  out.trapezoid_part = 2.0 * integral.trace();
  out.tail_part = 2.0 * tail.trace();
  if (n == 0) return out;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd ev = eig.eigenvalues();
  if (ev.minCoeff() < 0.0) {
    Eigen::MatrixXd clipped = eig.eigenvectors() * ev.cwiseMax(0.0).asDiagonal() * eig.eigenvectors().transpose();
    out.psd_defect = (clipped - sym).norm();
    sym = clipped;
  }
  Eigen::MatrixXd symT = sym.transpose();
  out.C = 0.5 * (sym + symT);
  return out;
}

struct MixingFit {
  std::vector<double> times;
  std::vector<double> mean_n;
  double slope = 0.0;
  double stderr_ = 0.0;
  double bound = 0.0;   ///< -(Tr - 3 max alpha^2)
  double tau = 0.0;     ///< 2 / |slope|
  bool degenerate = false;
  bool pass() const noexcept { return !degenerate && slope <= bound + 2.0 * stderr_; }
};

namespace detail {

inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double xm = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double ym = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - xm) * (y[i] - ym);
    sxx += (x[i] - xm) * (x[i] - xm);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

}  // namespace detail

/// Least-squares slope of log E[N_t] over [0, t_max]; the standard error is a
/// delete-one-block jackknife over replicas (blocks of equal size).
inline MixingFit mixing_decay_fit(const std::vector<CoupledPairTrajectory>& ensemble, const CovarianceSpectrum& spec,
                                  double t_max = 4.0, std::size_t blocks = 20) {
  const TraceCondition tc = trace_condition(spec);
  require(tc.holds, ErrorKind::ConditionViolated,
          "trace condition fails (margin " + csv::num(tc.margin) + "); no mixing bound is claimed");
  require(!ensemble.empty(), ErrorKind::EmptySample, "empty coupling ensemble");
  MixingFit fit;
  fit.bound = -tc.margin;
  const auto& ref = ensemble.front();
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < ref.times.size(); ++c)
    if (ref.times[c] <= t_max + 1e-12) cols.push_back(c);
  const std::size_t R = ensemble.size();
  blocks = std::clamp<std::size_t>(blocks, 1, R);
  // Per-block sums of N at each retained time.
  Eigen::MatrixXd block_sum = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(blocks), static_cast<Eigen::Index>(cols.size()));
  std::vector<double> block_count(blocks, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    require(ensemble[r].times.size() == ref.times.size(), ErrorKind::GridMismatch, "pairs must share the time grid");
    const std::size_t b = r * blocks / R;
    block_count[b] += 1.0;
    for (std::size_t k = 0; k < cols.size(); ++k)
      block_sum(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) += ensemble[r].distance[cols[k]];
  }
  Eigen::VectorXd total = block_sum.colwise().sum().transpose();
  fit.times.reserve(cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k) {
    fit.times.push_back(ref.times[cols[k]]);
    fit.mean_n.push_back(total[static_cast<Eigen::Index>(k)] / static_cast<double>(R));
  }
  const bool any_positive = std::any_of(fit.mean_n.begin(), fit.mean_n.end(), [](double x) { return x > 0.0; });
  const bool all_positive = std::all_of(fit.mean_n.begin(), fit.mean_n.end(), [](double x) { return x > 0.0; });
  if (!any_positive || !all_positive || cols.size() < 2) {
    fit.degenerate = true;
    return fit;
  }
  auto slope_of = [&](const Eigen::VectorXd& sums, double count) {
    std::vector<double> y(cols.size());
    for (std::size_t k = 0; k < cols.size(); ++k) y[k] = std::log(sums[static_cast<Eigen::Index>(k)] / count);
    return detail::ols_slope(fit.times, y);
  };
  fit.slope = slope_of(total, static_cast<double>(R));
  if (blocks >= 2) {
    std::vector<double> jk;
    for (std::size_t b = 0; b < blocks; ++b) {
      Eigen::VectorXd rest = total - block_sum.row(static_cast<Eigen::Index>(b)).transpose();
      if ((rest.array() <= 0.0).any()) continue;
      jk.push_back(slope_of(rest, static_cast<double>(R) - block_count[b]));
    }
    const double g = static_cast<double>(jk.size());
    if (g >= 2) {
      const double m = std::accumulate(jk.begin(), jk.end(), 0.0) / g;
      double ss = 0.0;
      for (double x : jk) ss += (x - m) * (x - m);
      fit.stderr_ = std::sqrt((g - 1.0) / g * ss);
    }
  }
  fit.tau = fit.slope != 0.0 ? 2.0 / std::abs(fit.slope) : INFINITY;
  return fit;
}

struct MeanDecayCurve {
  std::vector<double> times;
  std::vector<double> norm;    ///< |E_{v0} v_t|
  std::vector<double> stderr_;
  std::vector<double> bound;   ///< 2 exp(-t / tau)
  bool pass() const {
    for (std::size_t i = 0; i < times.size(); ++i)
      if (norm[i] > bound[i] + 3.0 * stderr_[i]) return false;
    return true;
  }
};

/// |E v_t| over an ensemble started at the same v0, against 2 exp(-t/tau).
/// Standard errors use the delta method, falling back to sqrt(tr Sigma / R)
/// where the mean is too small for the linearization.
inline MeanDecayCurve mean_decay_curve(const std::vector<SphereTrajectory>& ensemble, double tau) {
  require(!ensemble.empty(), ErrorKind::EmptySample, "empty ensemble");
  require(tau > 0.0, ErrorKind::InvalidParameter, "tau must be positive");
  const auto& ref = ensemble.front();
  const double R = static_cast<double>(ensemble.size());
  MeanDecayCurve c;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(ref.v.rows());
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(ref.v.rows(), ref.v.rows());
    for (const auto& tr : ensemble) {
      require(tr.size() == ref.size(), ErrorKind::GridMismatch, "ensemble trajectories must share the time grid");
      const auto col = tr.v.col(static_cast<Eigen::Index>(k));
      m += col;
      s2.noalias() += col * col.transpose();
    }
    m /= R;
    Eigen::MatrixXd cov = (s2 / R - m * m.transpose()) * (R / std::max(R - 1.0, 1.0));
    const double nm = m.norm();
    double se = std::sqrt(std::max(cov.trace(), 0.0) / R);
    if (nm > se) se = std::sqrt(std::max(m.dot(cov * m), 0.0) / R) / nm;
    c.times.push_back(ref.times[k]);
    c.norm.push_back(nm);
    c.stderr_.push_back(se);
    c.bound.push_back(2.0 * std::exp(-ref.times[k] / tau));
  }
  return c;
}

/// Velocity half of a coupled pair as a plain trajectory.
inline SphereTrajectory first_component(const CoupledPairTrajectory& p) {
  SphereTrajectory t;
  t.times = p.times;
  t.v = p.v;
  t.sigma = 1.0;
  return t;
}

inline void write_autocov(std::ostream& os, const AutocovCurve& c) {
  os << "lag,mode_i,mode_j,value,stderr\n";
  for (std::size_t l = 0; l < c.lags.size(); ++l)
    for (Eigen::Index i = 0; i < c.rho[l].rows(); ++i)
      for (Eigen::Index j = 0; j < c.rho[l].cols(); ++j) {
        if (!c.cross && i != j) continue;
        csv::Row(os) << c.lags[l] << static_cast<long>(i) << static_cast<long>(j) << c.rho[l](i, j)
                     << c.stderr_[l](i, j);
      }
}

/// Ensemble summary rows `t,stat,value,stderr`.
struct SummaryRow {
  double t;
  std::string stat;
  double value;
  double stderr_;
};

inline void write_summary(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "t,stat,value,stderr\n";
  for (const auto& r : rows) csv::Row(os) << r.t << r.stat << r.value << r.stderr_;
}

}  // namespace kbm

#endif
