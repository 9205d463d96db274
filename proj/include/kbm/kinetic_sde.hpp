#ifndef KBM_KINETIC_SDE_HPP
#define KBM_KINETIC_SDE_HPP

// Spherical Brownian motion dv = sigma P_v(o dW), its position integral, the
// H-valued lift u, and the synchronous coupling of two velocity processes.
//
// Velocity stepping is Euler-Maruyama on the Ito form
//   dv = -(sigma^2/2)(Tr(C) v + C v - 2 C(v,v) v) dt + sigma (dW - (v,dW) v)
// followed by renormalization onto the unit sphere.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kbm/csv.hpp"
#include "kbm/error.hpp"
#include "kbm/gauss_hilbert.hpp"
#include "kbm/rng.hpp"

namespace kbm {

/// min(1e-3, 0.1 / (sigma^2 Tr)) keeps the drift a contraction over one step.
inline double default_dt(const CovarianceSpectrum& spec, double sigma) {
  const double scale = sigma * sigma * spec.trace();
  return scale > 0.0 ? std::min(1e-3, 0.1 / scale) : 1e-3;
}

/// Number of steps covering [0, horizon] with steps no longer than dt.
inline long step_count(double horizon, double dt) {
  require(dt > 0.0, ErrorKind::InvalidStep, "dt must be positive");
  require(horizon >= 0.0, ErrorKind::InvalidParameter, "negative horizon");
  return static_cast<long>(std::ceil(horizon / dt - 1e-9));
}

/// Allocation-free stepper for the velocity SDE; holds the covariance and scratch.
class VelocityStepper {
 public:
  VelocityStepper(const CovarianceSpectrum& spec, double sigma, double dt)
      : var_(spec.variances()), alpha_(spec.alpha), trace_(spec.trace()), sigma_(sigma), dt_(dt),
        sqrt_dt_(std::sqrt(dt)), dw_(spec.alpha.size()) {
    require(dt > 0.0, ErrorKind::InvalidStep, "dt must be positive");
    require(sigma >= 0.0, ErrorKind::InvalidParameter, "sigma must be >= 0");
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(alpha_.size()); }
  double dt() const noexcept { return dt_; }
  double sigma() const noexcept { return sigma_; }

  /// Draws a Brownian increment over dt into the internal buffer.
  const CoeffVector& draw(Rng& rng) {
    for (Eigen::Index i = 0; i < dw_.size(); ++i) dw_[i] = sqrt_dt_ * alpha_[i] * normal_(rng);
    return dw_;
  }

  void step(Rng& rng, CoeffVector& v) {
    draw(rng);
    apply(v, dw_);
  }

  /// One step with a caller-supplied increment (variance alpha_n^2 dt per mode).
  void apply(CoeffVector& v, const CoeffVector& dw) const {
    if (sigma_ == 0.0) return;
    const Eigen::Index n = v.size();
    double cvv = 0.0;
    double vdw = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      cvv += var_[i] * v[i] * v[i];
      vdw += v[i] * dw[i];
    }
    const double h = 0.5 * sigma_ * sigma_ * dt_;
    double norm2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double vi = v[i];
      const double next = vi - h * (trace_ + var_[i] - 2.0 * cvv) * vi + sigma_ * (dw[i] - vdw * vi);
      v[i] = next;
      norm2 += next * next;
    }
    if (!(norm2 > 1e-16) || !std::isfinite(norm2))
      throw Error(ErrorKind::StepFailure, "velocity left the sphere neighbourhood; reduce dt");
    v /= std::sqrt(norm2);
  }

 private:
  Eigen::VectorXd var_;
  Eigen::VectorXd alpha_;
  double trace_;
  double sigma_;
  double dt_;
  double sqrt_dt_;
  CoeffVector dw_;
  std::normal_distribution<double> normal_;
};

/// One Euler-Maruyama step followed by renormalization.
inline CoeffVector velocity_step(const CoeffVector& v, const CovarianceSpectrum& spec, double sigma, double dt,
                                 const CoeffVector& dw) {
  require(v.size() == spec.alpha.size() && dw.size() == v.size(), ErrorKind::DimensionMismatch,
          "velocity_step: sizes differ");
  VelocityStepper stepper(spec, sigma, dt);
  CoeffVector out = v;
  stepper.apply(out, dw);
  return out;
}

struct SphereTrajectory {
  std::vector<double> times;
  Eigen::MatrixXd v;  ///< one column per stored time
  Eigen::MatrixXd x;  ///< positions, empty when not tracked
  double sigma = 0.0;

  std::size_t size() const noexcept { return times.size(); }
  bool has_positions() const noexcept { return x.cols() > 0; }
};

namespace detail {

inline void check_unit(const CoeffVector& v, const CovarianceSpectrum& spec) {
  require(v.size() == spec.alpha.size(), ErrorKind::DimensionMismatch, "initial velocity has wrong dimension");
  require(std::abs(v.norm() - 1.0) <= 1e-9, ErrorKind::InvalidParameter, "initial velocity must be a unit vector");
}

}  // namespace detail

/// Runs velocity (and trapezoidal position) over [0, horizon] calling
/// visit(step, t, v, x) at t = 0 and after every step.
template <typename Visitor>
void integrate_kinetic(const CoeffVector& v0, const CoeffVector& x0, const CovarianceSpectrum& spec, double sigma,
                       double horizon, double dt, Rng& rng, Visitor&& visit) {
  detail::check_unit(v0, spec);
  const long n = step_count(horizon, dt);
  const double h = n > 0 ? horizon / static_cast<double>(n) : dt;
  VelocityStepper stepper(spec, sigma, h);
  CoeffVector v = v0;
  CoeffVector x = x0;
  CoeffVector prev(v.size());
  visit(0L, 0.0, v, x);
  for (long j = 1; j <= n; ++j) {
    prev = v;
    stepper.step(rng, v);
    x.noalias() += (0.5 * h) * (prev + v);
    visit(j, h * static_cast<double>(j), v, x);
  }
}

/// Velocity trajectory on [0,T]; every `stride`-th step is stored.
inline SphereTrajectory simulate_velocity(const CoeffVector& v0, const CovarianceSpectrum& spec, double sigma,
                                          double horizon, double dt, Rng& rng, long stride = 1) {
  require(stride >= 1, ErrorKind::InvalidParameter, "stride must be >= 1");
  const long n = step_count(horizon, dt);
  SphereTrajectory traj;
  traj.sigma = sigma;
  traj.v.resize(v0.size(), n / stride + 1);
  long col = 0;
  integrate_kinetic(v0, CoeffVector::Zero(v0.size()), spec, sigma, horizon, dt, rng,
                    [&](long j, double t, const CoeffVector& v, const CoeffVector&) {
                      if (j % stride != 0) return;
                      traj.times.push_back(t);
                      traj.v.col(col++) = v;
                    });
  traj.v.conservativeResize(Eigen::NoChange, col);
  return traj;
}

/// Velocity plus position x_t = x0 + int_0^t v (trapezoidal).
inline SphereTrajectory simulate_position(const CoeffVector& v0, const CoeffVector& x0,
                                          const CovarianceSpectrum& spec, double sigma, double horizon, double dt,
                                          Rng& rng, long stride = 1) {
  require(stride >= 1, ErrorKind::InvalidParameter, "stride must be >= 1");
  require(x0.size() == v0.size(), ErrorKind::DimensionMismatch, "x0 and v0 sizes differ");
  const long n = step_count(horizon, dt);
  SphereTrajectory traj;
  traj.sigma = sigma;
  traj.v.resize(v0.size(), n / stride + 1);
  traj.x.resize(v0.size(), n / stride + 1);
  long col = 0;
  integrate_kinetic(v0, x0, spec, sigma, horizon, dt, rng,
                    [&](long j, double t, const CoeffVector& v, const CoeffVector& x) {
                      if (j % stride != 0) return;
                      traj.times.push_back(t);
                      traj.v.col(col) = v;
                      traj.x.col(col++) = x;
                    });
  traj.v.conservativeResize(Eigen::NoChange, col);
  traj.x.conservativeResize(Eigen::NoChange, col);
  return traj;
}

/// Streams the rescaled position X^sigma_t = x^sigma_{sigma^2 t} on [0, T]
/// through visit(step, t, X, dX/dt). Uses the identity
///   X^sigma_t - X^sigma_s = sigma^-2 int_{sigma^4 s}^{sigma^4 t} v_u du
/// with v run at unit speed, so dt is a unit-speed step.
template <typename Visitor>
void integrate_rescaled(const CoeffVector& v0, const CovarianceSpectrum& spec, double sigma, double horizon,
                        double dt, Rng& rng, Visitor&& visit) {
  require(sigma > 0.0, ErrorKind::InvalidParameter, "rescaled process needs sigma > 0");
  const double s2 = sigma * sigma;
  const double s4 = s2 * s2;
  CoeffVector xs(v0.size());
  CoeffVector xdot(v0.size());
  integrate_kinetic(v0, CoeffVector::Zero(v0.size()), spec, 1.0, s4 * horizon, dt, rng,
                    [&](long j, double u, const CoeffVector& v, const CoeffVector& x) {
                      xs.noalias() = x / s2;
                      xdot.noalias() = s2 * v;
                      visit(j, u / s4, xs, xdot);
                    });
}

/// Stored rescaled trajectory: times in [0,T], x holds X^sigma, v the unit velocity.
inline SphereTrajectory simulate_rescaled(const CoeffVector& v0, const CovarianceSpectrum& spec, double sigma,
                                          double horizon, double dt, Rng& rng, long stride = 1) {
  require(stride >= 1, ErrorKind::InvalidParameter, "stride must be >= 1");
  const long n = step_count(sigma * sigma * sigma * sigma * horizon, dt);
  SphereTrajectory traj;
  traj.sigma = sigma;
  traj.v.resize(v0.size(), n / stride + 1);
  traj.x.resize(v0.size(), n / stride + 1);
  long col = 0;
  const double s2 = sigma * sigma;
  integrate_rescaled(v0, spec, sigma, horizon, dt, rng,
                     [&](long j, double t, const CoeffVector& x, const CoeffVector& xdot) {
                       if (j % stride != 0) return;
                       traj.times.push_back(t);
                       traj.v.col(col) = xdot / s2;
                       traj.x.col(col++) = x;
                     });
  traj.v.conservativeResize(Eigen::NoChange, col);
  traj.x.conservativeResize(Eigen::NoChange, col);
  return traj;
}

struct LiftTrajectory {
  std::vector<double> times;
  Eigen::MatrixXd u;

  /// Radial projection u / |u| at every stored time.
  Eigen::MatrixXd projected() const { return u.colwise().normalized(); }
};

/// Ito form of du = -(sigma^2/2)|u|^2 u dt + sigma |u| o dW, per coordinate
///   du_i = (sigma^2/2)(alpha_i^2 - |u|^2) u_i dt + sigma |u| alpha_i dW_i.
inline LiftTrajectory simulate_lift(const CoeffVector& u0, const CovarianceSpectrum& spec, double sigma,
                                    double horizon, double dt, Rng& rng, long stride = 1) {
  require(u0.size() == spec.alpha.size(), ErrorKind::DimensionMismatch, "u0 has wrong dimension");
  require(u0.norm() > 0.0, ErrorKind::InvalidParameter, "u0 must be nonzero");
  require(stride >= 1, ErrorKind::InvalidParameter, "stride must be >= 1");
  const long n = step_count(horizon, dt);
  const double h = n > 0 ? horizon / static_cast<double>(n) : dt;
  const double sq = std::sqrt(h);
  std::normal_distribution<double> normal;
  const Eigen::VectorXd var = spec.variances();
  LiftTrajectory traj;
  traj.u.resize(u0.size(), n / stride + 1);
  CoeffVector u = u0;
  long col = 0;
  traj.times.push_back(0.0);
  traj.u.col(col++) = u;
  for (long j = 1; j <= n; ++j) {
    const double norm2 = u.squaredNorm();
    const double norm = std::sqrt(norm2);
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      const double dw = sq * normal(rng);
      u[i] += 0.5 * sigma * sigma * (var[i] - norm2) * u[i] * h + sigma * norm * spec.alpha[i] * dw;
    }
    if (!(u.norm() >= 1e-8))
      throw Error(ErrorKind::NumericalDegeneracy, "lift process hit the origin floor 1e-8");
    if (j % stride == 0) {
      traj.times.push_back(h * static_cast<double>(j));
      traj.u.col(col++) = u;
    }
  }
  traj.u.conservativeResize(Eigen::NoChange, col);
  return traj;
}

struct CoupledPairTrajectory {
  std::vector<double> times;
  Eigen::MatrixXd v;
  Eigen::MatrixXd w;
  std::vector<double> distance;  ///< N_t = |w_t - v_t|^2 / 2 = 1 - (v_t, w_t)
};

/// Two unit-speed velocity processes driven by the same increments.
inline CoupledPairTrajectory simulate_coupled_pair(const CoeffVector& v0, const CoeffVector& w0,
                                                   const CovarianceSpectrum& spec, double horizon, double dt,
                                                   Rng& rng, long stride = 1) {
  detail::check_unit(v0, spec);
  detail::check_unit(w0, spec);
  require(stride >= 1, ErrorKind::InvalidParameter, "stride must be >= 1");
  const long n = step_count(horizon, dt);
  const double h = n > 0 ? horizon / static_cast<double>(n) : dt;
  VelocityStepper stepper(spec, 1.0, h);
  CoupledPairTrajectory traj;
  traj.v.resize(v0.size(), n / stride + 1);
  traj.w.resize(v0.size(), n / stride + 1);
  CoeffVector v = v0;
  CoeffVector w = w0;
  long col = 0;
  auto record = [&](double t) {
    traj.times.push_back(t);
    traj.v.col(col) = v;
    traj.w.col(col++) = w;
    traj.distance.push_back(0.5 * (w - v).squaredNorm());
  };
  record(0.0);
  for (long j = 1; j <= n; ++j) {
    const CoeffVector& dw = stepper.draw(rng);
    stepper.apply(v, dw);
    stepper.apply(w, dw);
    if (j % stride == 0) record(h * static_cast<double>(j));
  }
  traj.v.conservativeResize(Eigen::NoChange, col);
  traj.w.conservativeResize(Eigen::NoChange, col);
  return traj;
}

/// Long-format export `t,mode_id,value`.
inline void write_trajectory(std::ostream& os, const SphereTrajectory& traj) {
  os << "t,mode_id,value\n";
  for (std::size_t c = 0; c < traj.size(); ++c)
    for (Eigen::Index i = 0; i < traj.v.rows(); ++i) csv::Row(os) << traj.times[c] << static_cast<long>(i) << traj.v(i, c);
}

}  // namespace kbm

#endif
