#ifndef KBM_LIE_DEVELOPMENT_HPP
#define KBM_LIE_DEVELOPMENT_HPP

// Development of a driving path in the Lie algebra of divergence-free fields
// on the torus: orthogonal frame dO = O Gamma(wdot) dt, Eulerian velocity
// u = O wdot, and the particle flow dg = u(g) dt.

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "kbm/csv.hpp"
#include "kbm/error.hpp"
#include "kbm/gauss_hilbert.hpp"
#include "kbm/kinetic_sde.hpp"
#include "kbm/rng.hpp"
#include "kbm/spectral_torus.hpp"

namespace kbm {

/// (Gamma(w) v)^n = sum_{k,l} w^k Gamma^n_{k,l} v^l from the sparse entries.
inline CoeffVector gamma_apply(const torus::ChristoffelTensor& g, const CoeffVector& w, const CoeffVector& v) {
  require(static_cast<std::size_t>(w.size()) == g.dim() && static_cast<std::size_t>(v.size()) == g.dim(),
          ErrorKind::DimensionMismatch, "gamma_apply: sizes differ from the tensor dimension");
  CoeffVector out = CoeffVector::Zero(v.size());
  for (const auto& e : g.entries()) {
    const double c = w[e.k] * e.value;
    out[e.n] += c * v[e.l];
    out[e.l] -= c * v[e.n];
  }
  return out;
}

struct FrameState {
  Eigen::MatrixXd O;
  double t = 0.0;

  static FrameState identity(Eigen::Index n) { return {Eigen::MatrixXd::Identity(n, n), 0.0}; }
};

/// max |O^T O - I| entrywise.
inline double orthogonality_defect(const Eigen::MatrixXd& O) {
  return (O.transpose() * O - Eigen::MatrixXd::Identity(O.cols(), O.cols())).cwiseAbs().maxCoeff();
}

/// Cayley transform (I - A)^{-1} (I + A); orthogonal for antisymmetric A.
inline Eigen::MatrixXd cayley(const Eigen::MatrixXd& A) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(I - A);
  Eigen::MatrixXd out = lu.solve(I + A);
  if (!out.allFinite()) throw Error(ErrorKind::StepFailure, "Cayley solve produced non-finite values");
  return out;
}

/// O <- O cay(dt/2 Gamma(wdot)).
inline FrameState frame_step(const FrameState& f, const torus::ChristoffelTensor& g, const CoeffVector& w_dot,
                             double dt) {
  require(dt > 0.0, ErrorKind::InvalidStep, "dt must be positive");
  require(f.O.rows() == w_dot.size(), ErrorKind::DimensionMismatch, "frame and driver sizes differ");
  return {f.O * cayley((0.5 * dt) * g.matrix(w_dot)), f.t + dt};
}

inline CoeffVector eulerian_velocity(const FrameState& f, const CoeffVector& w_dot) {
  require(f.O.cols() == w_dot.size(), ErrorKind::DimensionMismatch, "frame and driver sizes differ");
  return f.O * w_dot;
}

/// Truncated velocity field sum_n u_n e_n + constant, with e_n the
/// L2-orthonormal mode fields. Evaluation uses complex powers of e^{i theta}.
class VelocityField {
 public:
  VelocityField() = default;
  VelocityField(const torus::ModeTable& table, const CoeffVector& u, std::array<double, 2> constant = {0.0, 0.0})
      : cutoff_(table.cutoff()), constant_(constant) {
    require(static_cast<std::size_t>(u.size()) == table.size(), ErrorKind::DimensionMismatch,
            "field coefficients do not match the mode table");
    terms_.reserve(table.size());
    for (std::size_t n = 0; n < table.size(); ++n) {
      const auto& m = table[n];
      const double c = u[static_cast<Eigen::Index>(n)] * torus::kL2Normalizer / m.wavenumber();
      terms_.push_back({m.k1, m.k2, m.parity == torus::Parity::Sin, c * m.k2, -c * m.k1});
      bound_ += std::abs(u[static_cast<Eigen::Index>(n)]) * torus::kL2Normalizer;
    }
    bound_ += std::hypot(constant[0], constant[1]);
    p1_.resize(static_cast<std::size_t>(cutoff_) + 1);
    p2_.resize(2 * static_cast<std::size_t>(cutoff_) + 1);
  }

  static VelocityField constant(double c1, double c2) {
    VelocityField f;
    f.constant_ = {c1, c2};
    f.bound_ = std::hypot(c1, c2);
    return f;
  }

  /// Upper bound on max |u| over the torus.
  double speed_bound() const noexcept { return bound_; }
  int cutoff() const noexcept { return cutoff_; }

  std::array<double, 2> operator()(double th1, double th2) const {
    std::array<double, 2> out = constant_;
    if (terms_.empty()) return out;
    const std::complex<double> z1(std::cos(th1), std::sin(th1));
    const std::complex<double> z2(std::cos(th2), std::sin(th2));
    const std::size_t K = static_cast<std::size_t>(cutoff_);
    p1_[0] = 1.0;
    p2_[K] = 1.0;
    for (std::size_t k = 1; k <= K; ++k) {
      p1_[k] = p1_[k - 1] * z1;
      p2_[K + k] = p2_[K + k - 1] * z2;
      p2_[K - k] = std::conj(p2_[K + k]);
    }
    for (const auto& t : terms_) {
      const std::complex<double> e = p1_[static_cast<std::size_t>(t.k1)] * p2_[static_cast<std::size_t>(static_cast<int>(K) + t.k2)];
      const double wave = t.sin ? e.imag() : e.real();
      out[0] += t.c1 * wave;
      out[1] += t.c2 * wave;
    }
    return out;
  }

 private:
  struct Term {
    int k1, k2;
    bool sin;
    double c1, c2;
  };
  int cutoff_ = 0;
  std::array<double, 2> constant_{0.0, 0.0};
  std::vector<Term> terms_;
  double bound_ = 0.0;
  mutable std::vector<std::complex<double>> p1_, p2_;
};

using Point = std::array<double, 2>;

inline double wrap_angle(double x) {
  double r = std::fmod(x, torus::kTwoPi);
  if (r < 0.0) r += torus::kTwoPi;
  return r;
}

/// Images g_t(p) of an M x M reference lattice p_ij = (2 pi i/M, 2 pi j/M),
/// plus optional marker curves. Positions are kept reduced mod 2 pi.
struct FlowGrid {
  int M = 0;
  std::vector<Point> particles;  ///< row-major, index i*M + j
  std::vector<std::vector<Point>> markers;
  double t = 0.0;

  static FlowGrid reference(int M, int marker_points = 0) {
    require(M >= 1, ErrorKind::InvalidParameter, "grid size must be >= 1");
    FlowGrid g;
    g.M = M;
    const double h = torus::kTwoPi / M;
    g.particles.reserve(static_cast<std::size_t>(M) * M);
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < M; ++j) g.particles.push_back({h * i, h * j});
    if (marker_points > 0) {
      // axis circles {theta2 = pi} and {theta1 = pi}
      const double hm = torus::kTwoPi / marker_points;
      std::vector<Point> c0, c1;
      for (int k = 0; k < marker_points; ++k) {
        c0.push_back({hm * k, torus::kPi});
        c1.push_back({torus::kPi, hm * k});
      }
      g.markers = {std::move(c0), std::move(c1)};
    }
    return g;
  }

  const Point& at(int i, int j) const { return particles[static_cast<std::size_t>(i) * M + j]; }
};

namespace detail {

inline void check_cfl(const VelocityField& f, double dt) {
  const double k = std::max(1, f.cutoff());
  const double bound = f.speed_bound() * k;
  require(bound == 0.0 || dt <= 0.5 / bound, ErrorKind::StabilityBound,
          "dt=" + csv::num(dt) + " exceeds the stability bound 0.5/(max|u| K)=" + csv::num(bound > 0 ? 0.5 / bound : 0.0));
}

inline Point rk4(const Point& p, double dt, const VelocityField& f0, const VelocityField& fm, const VelocityField& f1) {
  const auto k1 = f0(p[0], p[1]);
  const auto k2 = fm(p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]);
  const auto k3 = fm(p[0] + 0.5 * dt * k2[0], p[1] + 0.5 * dt * k2[1]);
  const auto k4 = f1(p[0] + dt * k3[0], p[1] + dt * k3[1]);
  return {wrap_angle(p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])),
          wrap_angle(p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]))};
}

inline void advect_once(FlowGrid& g, double dt, const VelocityField& f0, const VelocityField& fm,
                        const VelocityField& f1) {
  check_cfl(f0, dt);
  check_cfl(fm, dt);
  check_cfl(f1, dt);
  for (auto& p : g.particles) p = rk4(p, dt, f0, fm, f1);
  for (auto& c : g.markers)
    for (auto& p : c) p = rk4(p, dt, f0, fm, f1);
  g.t += dt;
}

}  // namespace detail

/// Classical RK4 advection of every particle by the time-dependent field
/// provider(t) over [t0, t1] with steps no longer than dt.
inline FlowGrid advect_flow(FlowGrid grid, const std::function<VelocityField(double)>& provider, double t0,
                            double t1, double dt) {
  require(t1 >= t0, ErrorKind::InvalidParameter, "advect_flow needs t1 >= t0");
  const long n = step_count(t1 - t0, dt);
  if (n == 0) return grid;
  const double h = (t1 - t0) / static_cast<double>(n);
  grid.t = t0;
  for (long j = 0; j < n; ++j) {
    const double t = t0 + h * static_cast<double>(j);
    detail::advect_once(grid, h, provider(t), provider(t + 0.5 * h), provider(t + h));
  }
  grid.t = t1;
  return grid;
}

struct FlowDiagnostics {
  double volume_defect = 0.0;  ///< max |cell area / reference area - 1|
  std::size_t folded_cells = 0;
  double mean_displacement = 0.0;
  double max_displacement = 0.0;
};

namespace detail {

inline double torus_delta(double a, double b) {
  double d = std::remainder(b - a, torus::kTwoPi);
  return d;
}

}  // namespace detail

/// Shoelace areas of the torus-unwrapped quadrilateral cells.
inline FlowDiagnostics flow_diagnostics(const FlowGrid& g) {
  require(g.M >= 16, ErrorKind::Resolution, "flow diagnostics need M >= 16");
  FlowDiagnostics d;
  const int M = g.M;
  const double h = torus::kTwoPi / M;
  const double ref = h * h;
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j) {
      const Point& p00 = g.at(i, j);
      const Point* corners[4] = {&p00, &g.at((i + 1) % M, j), &g.at((i + 1) % M, (j + 1) % M), &g.at(i, (j + 1) % M)};
      std::array<Point, 4> q;
      for (int c = 0; c < 4; ++c)
        q[c] = {detail::torus_delta(p00[0], (*corners[c])[0]), detail::torus_delta(p00[1], (*corners[c])[1])};
      double area = 0.0;
      for (int c = 0; c < 4; ++c) {
        const auto& a = q[c];
        const auto& b = q[(c + 1) % 4];
        area += a[0] * b[1] - b[0] * a[1];
      }
      area *= 0.5;
      if (area <= 0.0) ++d.folded_cells;
      d.volume_defect = std::max(d.volume_defect, std::abs(area / ref - 1.0));
      const double dx = detail::torus_delta(h * i, p00[0]);
      const double dy = detail::torus_delta(h * j, p00[1]);
      const double disp = std::hypot(dx, dy);
      d.mean_displacement += disp;
      d.max_displacement = std::max(d.max_displacement, disp);
    }
  d.mean_displacement /= static_cast<double>(M) * M;
  return d;
}

struct EnergySample {
  double t;
  double l2_energy;  ///< |u_t|_{L2}
  double q0;         ///< Q0(v) of the driving velocity; NaN for geodesic runs
};

struct DevelopmentRun {
  std::vector<FlowGrid> snapshots;
  std::vector<EnergySample> energy;
  FrameState frame;
  double max_orthogonality_defect = 0.0;
  double max_energy_identity_error = 0.0;  ///< max | |u|_L2 - |wdot|_L2 | / |wdot|_L2
  double dropped_mass = 0.0;
  std::vector<CoeffVector> velocities;  ///< u_t at each energy sample when requested
};

struct DevelopmentOptions {
  double T = 1.0;
  double dt = 1e-3;
  int grid = 64;
  int marker_points = 256;
  std::vector<double> snapshot_times{1.0};
  bool keep_velocities = false;
  bool advect = true;
};

namespace detail {

/// Integrates frame and flow with the driver wdot(step) held fixed on each step.
/// `drive(j)` returns the L2 driver for step j; `q0_of(j)` the Q0 trace value.
template <typename Drive, typename Q0>
DevelopmentRun develop(const torus::ModeTable& table, const torus::ChristoffelTensor& gamma, const DevelopmentOptions& opt,
                       Drive&& drive, Q0&& q0_of) {
  require(opt.dt > 0.0, ErrorKind::InvalidStep, "dt must be positive");
  require(opt.T >= 0.0, ErrorKind::InvalidParameter, "T must be >= 0");
  const long n = step_count(opt.T, opt.dt);
  const double h = n > 0 ? opt.T / static_cast<double>(n) : opt.dt;
  std::vector<long> snap_steps;
  for (double ts : opt.snapshot_times) {
    require(ts >= 0.0 && ts <= opt.T + 1e-12, ErrorKind::InvalidParameter, "snapshot time outside [0,T]");
    snap_steps.push_back(std::lround(ts / h));
  }
  DevelopmentRun run;
  run.frame = FrameState::identity(static_cast<Eigen::Index>(table.size()));
  FlowGrid grid = opt.advect ? FlowGrid::reference(opt.grid, opt.marker_points) : FlowGrid{};
  auto record = [&](long j, const CoeffVector& w) {
    const CoeffVector u = run.frame.O * w;
    const double nu = u.norm();
    const double nw = w.norm();
    if (nw > 0.0) run.max_energy_identity_error = std::max(run.max_energy_identity_error, std::abs(nu - nw) / nw);
    run.energy.push_back({h * static_cast<double>(j), nu, q0_of(j)});
    if (opt.keep_velocities) run.velocities.push_back(u);
    for (long s : snap_steps)
      if (s == j && opt.advect) {
        FlowGrid snap = grid;
        snap.t = h * static_cast<double>(j);
        run.snapshots.push_back(std::move(snap));
      }
  };
  for (long j = 0; j < n; ++j) {
    const CoeffVector w = drive(j);
    record(j, w);
    const Eigen::MatrixXd G = gamma.matrix(w);
    const Eigen::MatrixXd O_next = run.frame.O * cayley((0.5 * h) * G);
    if (opt.advect) {
      const VelocityField f0(table, run.frame.O * w);
      const VelocityField fm(table, run.frame.O * (cayley((0.25 * h) * G) * w));
      const VelocityField f1(table, O_next * w);
      detail::advect_once(grid, h, f0, fm, f1);
    }
    run.frame.O = O_next;
    run.frame.t = h * static_cast<double>(j + 1);
    run.max_orthogonality_defect = std::max(run.max_orthogonality_defect, orthogonality_defect(run.frame.O));
  }
  record(n, drive(n));
  return run;
}

}  // namespace detail

/// sigma = 0 development: wdot == omega, so u_t = exp(t Gamma(omega)) omega.
inline DevelopmentRun run_geodesic(const CoeffVector& omega, const torus::ModeTable& table,
                                   const torus::ChristoffelTensor& gamma, const DevelopmentOptions& opt) {
  require(static_cast<std::size_t>(omega.size()) == table.size(), ErrorKind::DimensionMismatch,
          "omega does not match the mode table");
  return detail::develop(table, gamma, opt, [&](long) -> const CoeffVector& { return omega; },
                         [](long) { return std::nan(""); });
}

/// Kinetic development: wdot_t = sigma^2 toL2(v^sigma_{sigma^2 t}), with the unit
/// speed velocity SDE advanced sigma^4 dt per development step. At sigma = 0
/// the velocity is frozen and wdot = toL2(v0), which coincides bitwise with
/// run_geodesic(toL2(v0)).
inline DevelopmentRun run_kinetic(double sigma, const CovarianceSpectrum& spec, const CoeffVector& v0,
                                  const torus::ModeTable& table, const torus::ChristoffelTensor& gamma,
                                  const DevelopmentOptions& opt, double sde_dt, Rng& rng) {
  const TraceCondition tc = trace_condition(spec);
  require(tc.holds, ErrorKind::ConditionViolated,
          "trace condition fails (margin " + csv::num(tc.margin) + ")");
  require(sigma >= 0.0, ErrorKind::InvalidParameter, "sigma must be >= 0");
  detail::check_unit(v0, spec);
  require(spec.dim() == table.size(), ErrorKind::DimensionMismatch, "spectrum and mode table differ");
  const long n = step_count(opt.T, opt.dt);
  const double h = n > 0 ? opt.T / static_cast<double>(n) : opt.dt;
  const double kappa = sigma > 0.0 ? sigma * sigma : 1.0;
  const double s4h = sigma * sigma * sigma * sigma * h;
  const long sub = sigma > 0.0 ? std::max<long>(1, step_count(s4h, sde_dt)) : 0;
  std::optional<VelocityStepper> stepper;
  if (sigma > 0.0) stepper.emplace(spec, 1.0, s4h / static_cast<double>(sub));
  CoeffVector v = v0;
  long at = 0;  // development step the velocity currently corresponds to
  CoeffVector w(v0.size());
  auto advance_to = [&](long j) {
    while (at < j) {
      for (long k = 0; k < sub; ++k) stepper->step(rng, v);
      ++at;
    }
  };
  return detail::develop(
      table, gamma, opt,
      [&](long j) -> const CoeffVector& {
        advance_to(j);
        w = to_l2(v, spec);
        if (kappa != 1.0) w *= kappa;
        return w;
      },
      [&](long j) {
        advance_to(j);
        return q0(v, spec);
      });
}

inline void write_snapshots(std::ostream& os, const std::vector<FlowGrid>& snaps) {
  os << "time,particle_i,particle_j,theta1,theta2\n";
  for (const auto& g : snaps)
    for (int i = 0; i < g.M; ++i)
      for (int j = 0; j < g.M; ++j) csv::Row(os) << g.t << i << j << g.at(i, j)[0] << g.at(i, j)[1];
}

inline void write_markers(std::ostream& os, const std::vector<FlowGrid>& snaps) {
  os << "time,curve_id,point_idx,theta1,theta2\n";
  for (const auto& g : snaps)
    for (std::size_t c = 0; c < g.markers.size(); ++c)
      for (std::size_t k = 0; k < g.markers[c].size(); ++k)
        csv::Row(os) << g.t << c << k << g.markers[c][k][0] << g.markers[c][k][1];
}

inline void write_energy(std::ostream& os, const std::vector<EnergySample>& e) {
  os << "time,l2_energy,q0\n";
  for (const auto& s : e) csv::Row(os) << s.t << s.l2_energy << s.q0;
}

}  // namespace kbm

#endif
