#ifndef KBM_GAUSS_HILBERT_HPP
#define KBM_GAUSS_HILBERT_HPP

// Gaussian noise in a truncated Hilbert space.
//
// Coordinates are taken in the H^s-orthonormal basis, so the unit sphere of
// H^s is the Euclidean unit sphere and projections are Euclidean. The L2
// coefficient of mode n is lambda_n^{-s/2} times its H^s coordinate.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kbm/csv.hpp"
#include "kbm/error.hpp"
#include "kbm/rng.hpp"
#include "kbm/spectral_torus.hpp"

namespace kbm {

using CoeffVector = Eigen::VectorXd;

/// Per-mode standard deviations alpha_n of a trace-class covariance, with the
/// Laplace eigenvalues needed by the L2 and H^{s+a} functionals.
struct CovarianceSpectrum {
  Eigen::VectorXd alpha;
  Eigen::VectorXd eigenvalues;  ///< |lambda_n|; all ones for abstract R^d
  double s = 0.0;
  double a = 0.0;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(alpha.size()); }
  Eigen::VectorXd variances() const { return alpha.array().square(); }
  double trace() const { return alpha.squaredNorm(); }
  double max_variance() const { return alpha.size() ? alpha.array().square().maxCoeff() : 0.0; }
};

/// alpha_n^2 = |lambda_n|^{-a} on the divergence-free torus modes.
inline CovarianceSpectrum sobolev_spectrum(const torus::ModeTable& table, double a, double s = 2.0) {
  require(a > 0.5, ErrorKind::InvalidExponent, "roughness exponent a must exceed 1/2, got " + csv::num(a));
  CovarianceSpectrum spec;
  spec.eigenvalues = table.eigenvalues();
  spec.alpha = spec.eigenvalues.array().pow(-0.5 * a);
  spec.s = s;
  spec.a = a;
  return spec;
}

/// Identity covariance on R^d.
inline CovarianceSpectrum isotropic_spectrum(std::size_t d) {
  require(d >= 1, ErrorKind::UnsupportedDimension, "isotropic spectrum needs d >= 1");
  CovarianceSpectrum spec;
  spec.alpha = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d));
  spec.eigenvalues = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d));
  return spec;
}

/// Explicit standard deviations on abstract R^d (unit eigenvalues).
inline CovarianceSpectrum explicit_spectrum(std::vector<double> alpha) {
  require(!alpha.empty(), ErrorKind::UnsupportedDimension, "empty spectrum");
  for (double x : alpha) require(x >= 0.0 && std::isfinite(x), ErrorKind::InvalidParameter, "alpha must be >= 0");
  CovarianceSpectrum spec;
  spec.alpha = Eigen::Map<Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  spec.eigenvalues = Eigen::VectorXd::Ones(spec.alpha.size());
  return spec;
}

struct TraceCondition {
  bool holds = false;
  double margin = 0.0;  ///< trace - 3 * max alpha^2
};

inline TraceCondition trace_condition(const CovarianceSpectrum& spec) {
  require(spec.dim() >= 1, ErrorKind::UnsupportedDimension, "trace condition needs N >= 1");
  TraceCondition tc;
  tc.margin = spec.trace() - 3.0 * spec.max_variance();
  tc.holds = tc.margin > 0.0;
  return tc;
}

// Norm functionals of a CoeffVector given in H^s coordinates.

inline double hs_norm(const CoeffVector& v) { return v.norm(); }

/// Q0(v) = sum lambda_n^{-s} v_n^2, the squared L2 norm.
inline double q0(const CoeffVector& v, const CovarianceSpectrum& spec) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += std::pow(spec.eigenvalues[i], -spec.s) * v[i] * v[i];
  return acc;
}

inline double l2_norm(const CoeffVector& v, const CovarianceSpectrum& spec) { return std::sqrt(q0(v, spec)); }

inline double hsa_norm(const CoeffVector& v, const CovarianceSpectrum& spec) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += std::pow(spec.eigenvalues[i], spec.a) * v[i] * v[i];
  return std::sqrt(acc);
}

/// H^s coordinates -> L2-orthonormal coordinates.
inline CoeffVector to_l2(const CoeffVector& v, const CovarianceSpectrum& spec) {
  return (spec.eigenvalues.array().pow(-0.5 * spec.s) * v.array()).matrix();
}

inline CoeffVector sample_gaussian(const CovarianceSpectrum& spec, Rng& rng) {
  std::normal_distribution<double> normal;
  CoeffVector x(spec.alpha.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = spec.alpha[i] * normal(rng);
  return x;
}

/// Increment of the H-Brownian motion over dt: variance alpha_n^2 dt per mode.
inline CoeffVector brownian_increment(const CovarianceSpectrum& spec, double dt, Rng& rng) {
  require(dt > 0.0, ErrorKind::InvalidStep, "dt must be positive");
  std::normal_distribution<double> normal;
  const double sd = std::sqrt(dt);
  CoeffVector x(spec.alpha.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = sd * spec.alpha[i] * normal(rng);
  return x;
}

inline void write_spectrum(std::ostream& os, const CovarianceSpectrum& spec) {
  os << "mode_id,alpha\n";
  for (Eigen::Index i = 0; i < spec.alpha.size(); ++i) csv::Row(os) << static_cast<long>(i) << spec.alpha[i];
}

}  // namespace kbm

#endif
