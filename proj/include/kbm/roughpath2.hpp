#ifndef KBM_ROUGHPATH2_HPP
#define KBM_ROUGHPATH2_HPP

// Level-2 rough paths on dyadic grids: canonical lifts, Chen composition,
// geometricity and Hoelder diagnostics, and a Brownian rough-path sampler.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "kbm/csv.hpp"
#include "kbm/error.hpp"
#include "kbm/rng.hpp"

namespace kbm {

/// Increment pair (X_{st}, XX_{st}) over [s,t].
struct Level2 {
  double s = 0.0;
  double t = 0.0;
  Eigen::VectorXd X;
  Eigen::MatrixXd XX;

  static Level2 zero(double s, double t, Eigen::Index n) {
    return {s, t, Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, n)};
  }
  /// Antisymmetric part (XX - XX^T)/2, the Levy area.
  Eigen::MatrixXd area() const { return 0.5 * (XX - XX.transpose()); }
};

/// XX_{st} = XX_{su} + X_{su} (x) X_{ut} + XX_{ut}; level 1 adds.
inline Level2 chen_compose(const Level2& a, const Level2& b) {
  require(a.t == b.s, ErrorKind::JunctionMismatch,
          "junction mismatch: " + csv::num(a.t) + " != " + csv::num(b.s));
  require(a.X.size() == b.X.size(), ErrorKind::DimensionMismatch, "chen_compose: dimensions differ");
  const Eigen::Index n = a.X.size();
  Level2 c;
  c.s = a.s;
  c.t = b.t;
  c.X.resize(n);
  c.XX.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) c.X[i] = a.X[i] + b.X[i];
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) c.XX(i, j) = (a.XX(i, j) + a.X[i] * b.X[j]) + b.XX(i, j);
  return c;
}

/// Dyadic tree over [t0, t1]: levels[l] holds 2^l consecutive increments and
/// every parent is the Chen composition of its two children.
struct RoughLevel2 {
  double t0 = 0.0;
  double t1 = 1.0;
  std::vector<std::vector<Level2>> levels;

  int depth() const noexcept { return static_cast<int>(levels.size()) - 1; }
  Eigen::Index dim() const noexcept { return levels.empty() ? 0 : levels.front().front().X.size(); }
  const Level2& whole() const { return levels.front().front(); }
  const Level2& at(int level, std::size_t k) const { return levels.at(static_cast<std::size_t>(level)).at(k); }

  /// Increment over the dyadic interval [s,t] if it is a tree node.
  const Level2& interval(double s, double t) const {
    for (const auto& lv : levels)
      for (const auto& node : lv)
        if (node.s == s && node.t == t) return node;
    throw Error(ErrorKind::GridMismatch, "interval [" + csv::num(s) + "," + csv::num(t) + "] is not dyadic");
  }
};

/// Builds the tree from base intervals (finest level) by Chen composition.
inline RoughLevel2 assemble_dyadic(std::vector<Level2> base) {
  const std::size_t m = base.size();
  require(m >= 1 && (m & (m - 1)) == 0, ErrorKind::GridMismatch, "base level must have 2^L intervals");
  RoughLevel2 rp;
  rp.t0 = base.front().s;
  rp.t1 = base.back().t;
  std::vector<std::vector<Level2>> rev;
  rev.push_back(std::move(base));
  while (rev.back().size() > 1) {
    const auto& child = rev.back();
    std::vector<Level2> parent;
    parent.reserve(child.size() / 2);
    for (std::size_t k = 0; k < child.size(); k += 2) parent.push_back(chen_compose(child[k], child[k + 1]));
    rev.push_back(std::move(parent));
  }
  rp.levels.assign(rev.rbegin(), rev.rend());
  return rp;
}

/// Independent bitwise re-check of Chen's relation and level-1 additivity on
/// every parent/children triple; returns the number of violating triples.
inline std::size_t chen_violations(const RoughLevel2& rp) {
  std::size_t bad = 0;
  for (std::size_t l = 0; l + 1 < rp.levels.size(); ++l) {
    for (std::size_t k = 0; k < rp.levels[l].size(); ++k) {
      const Level2& p = rp.levels[l][k];
      const Level2& a = rp.levels[l + 1][2 * k];
      const Level2& b = rp.levels[l + 1][2 * k + 1];
      bool ok = p.s == a.s && a.t == b.s && b.t == p.t;
      for (Eigen::Index i = 0; ok && i < p.X.size(); ++i) {
        const double x = a.X[i] + b.X[i];
        ok = p.X[i] == x;
        for (Eigen::Index j = 0; ok && j < p.X.size(); ++j) {
          const double ab = a.X[i] * b.X[j];
          const double xx = (a.XX(i, j) + ab) + b.XX(i, j);
          ok = p.XX(i, j) == xx;
        }
      }
      if (!ok) ++bad;
    }
  }
  return bad;
}

/// Streaming canonical lift. Samples (t, x[, xdot]) are pushed in time order;
/// base intervals are the 2^L dyadic cells of [t0, t1] and must be hit by the
/// sample times.
///
/// Positions-only mode lifts the piecewise-linear interpolant; C1 mode applies
/// the trapezoid rule to int (x_u - x_s) (x) xdot_u du.
class LiftBuilder {
 public:
  enum class Mode { Positions, Velocity };

  LiftBuilder(Eigen::Index dim, int level, double t0 = 0.0, double t1 = 1.0, Mode mode = Mode::Positions)
      : n_(dim), level_(level), t0_(t0), t1_(t1), mode_(mode), cells_(std::size_t{1} << level),
        xs_(dim), xprev_(dim), dprev_(dim), y_(dim), cur_(Level2::zero(t0, t0, dim)) {
    require(level >= 0 && level <= 30, ErrorKind::InvalidParameter, "dyadic level out of range");
    require(t1 > t0, ErrorKind::InvalidParameter, "empty lift interval");
    require(dim >= 1, ErrorKind::DimensionMismatch, "lift needs dim >= 1");
    base_.reserve(cells_);
  }

  double boundary(std::size_t k) const {
    return t0_ + (t1_ - t0_) * static_cast<double>(k) / static_cast<double>(cells_);
  }

  void push(double t, const Eigen::VectorXd& x) {
    require(mode_ == Mode::Positions, ErrorKind::InvalidParameter, "velocity-mode lift needs xdot");
    push_impl(t, x, nullptr);
  }

  void push(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& xdot) { push_impl(t, x, &xdot); }

  bool complete() const noexcept { return base_.size() == cells_; }

  RoughLevel2 finish() {
    require(complete(), ErrorKind::GridMismatch, "fine samples stopped before the end of the lift interval");
    return assemble_dyadic(std::move(base_));
  }

 private:
  double tol() const { return 1e-9 * (t1_ - t0_) / static_cast<double>(cells_); }

  void push_impl(double t, const Eigen::VectorXd& x, const Eigen::VectorXd* xdot) {
    require(x.size() == n_ && (!xdot || xdot->size() == n_), ErrorKind::DimensionMismatch, "lift sample size");
    if (!started_) {
      require(std::abs(t - t0_) <= tol(), ErrorKind::GridMismatch, "first sample must sit at the lift start");
      started_ = true;
      open_cell(t0_, x, xdot);
      return;
    }
    require(!complete(), ErrorKind::GridMismatch, "sample beyond the lift interval");
    const double end = boundary(base_.size() + 1);
    require(t > tprev_ && t <= end + tol(), ErrorKind::GridMismatch,
            "fine grid does not refine the dyadic grid near t=" + csv::num(end));
    if (mode_ == Mode::Positions) {
      // (x_j - x_s) (x) d + d (x) d / 2 for d = x_{j+1} - x_j
      dprev_ = x - xprev_;
      y_ = xprev_ - xs_;
      cur_.XX.noalias() += y_ * dprev_.transpose();
      cur_.XX.noalias() += 0.5 * dprev_ * dprev_.transpose();
    } else {
      const double h = t - tprev_;
      y_ = xprev_ - xs_;
      cur_.XX.noalias() += (0.5 * h) * y_ * dprev_.transpose();
      y_ = x - xs_;
      cur_.XX.noalias() += (0.5 * h) * y_ * xdot->transpose();
      dprev_ = *xdot;
    }
    xprev_ = x;
    tprev_ = t;
    if (std::abs(t - end) <= tol()) {
      cur_.t = end;
      cur_.X = x - xs_;
      base_.push_back(cur_);
      if (!complete()) open_cell(end, x, xdot);
    }
  }

  void open_cell(double s, const Eigen::VectorXd& x, const Eigen::VectorXd* xdot) {
    cur_ = Level2::zero(s, s, n_);
    xs_ = x;
    xprev_ = x;
    tprev_ = s;
    if (xdot) dprev_ = *xdot;
  }

  Eigen::Index n_;
  int level_;
  double t0_, t1_;
  Mode mode_;
  std::size_t cells_;
  bool started_ = false;
  double tprev_ = 0.0;
  Eigen::VectorXd xs_, xprev_, dprev_, y_;
  Level2 cur_;
  std::vector<Level2> base_;
};

/// Lift of a sampled path given as columns of `x` at `times`.
inline RoughLevel2 canonical_lift(const std::vector<double>& times, const Eigen::MatrixXd& x, int level) {
  require(times.size() == static_cast<std::size_t>(x.cols()) && !times.empty(), ErrorKind::DimensionMismatch,
          "times and samples differ");
  LiftBuilder b(x.rows(), level, times.front(), times.back());
  for (std::size_t j = 0; j < times.size(); ++j) b.push(times[j], x.col(static_cast<Eigen::Index>(j)));
  return b.finish();
}

/// C1 variant using sampled derivatives.
inline RoughLevel2 canonical_lift(const std::vector<double>& times, const Eigen::MatrixXd& x,
                                  const Eigen::MatrixXd& xdot, int level) {
  require(times.size() == static_cast<std::size_t>(x.cols()) && x.cols() == xdot.cols() && !times.empty(),
          ErrorKind::DimensionMismatch, "times and samples differ");
  LiftBuilder b(x.rows(), level, times.front(), times.back(), LiftBuilder::Mode::Velocity);
  for (std::size_t j = 0; j < times.size(); ++j)
    b.push(times[j], x.col(static_cast<Eigen::Index>(j)), xdot.col(static_cast<Eigen::Index>(j)));
  return b.finish();
}

/// max over nodes of |sym(XX) - X (x) X / 2|_HS.
inline double geometric_defect(const RoughLevel2& rp) {
  double d = 0.0;
  for (const auto& lv : rp.levels)
    for (const auto& node : lv) {
      Eigen::MatrixXd sym = 0.5 * (node.XX + node.XX.transpose());
      d = std::max(d, (sym - 0.5 * node.X * node.X.transpose()).norm());
    }
  return d;
}

struct HolderNorms {
  double level1 = 0.0;
  double level2 = 0.0;
};

inline HolderNorms holder_norms(const RoughLevel2& rp, double p) {
  require(p >= 2.0 && p < 3.0, ErrorKind::InvalidParameter, "Hoelder exponent p must lie in [2,3)");
  HolderNorms h;
  for (const auto& lv : rp.levels)
    for (const auto& node : lv) {
      const double dt = node.t - node.s;
      h.level1 = std::max(h.level1, node.X.norm() / std::pow(dt, 1.0 / p));
      h.level2 = std::max(h.level2, node.XX.norm() / std::pow(dt, 2.0 / p));
    }
  return h;
}

/// Symmetric square root factor of a PSD matrix; rejects asymmetric or
/// negative-definite input.
inline Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& C) {
  require(C.rows() == C.cols(), ErrorKind::DimensionMismatch, "covariance must be square");
  const double scale = std::max(1.0, C.cwiseAbs().maxCoeff());
  require((C - C.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, ErrorKind::NotPositiveSemidefinite,
          "covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
  require(C.rows() == 0 || eig.eigenvalues().minCoeff() >= -1e-12 * scale, ErrorKind::NotPositiveSemidefinite,
          "covariance has a negative eigenvalue");
  return eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

/// Piecewise-linear Brownian path on [0,1] with covariance C and 2^fine_level
/// steps, lifted canonically to dyadic depth `level`.
inline RoughLevel2 brownian_rough_oracle(const Eigen::MatrixXd& C, int fine_level, int level, Rng& rng) {
  require(fine_level >= level, ErrorKind::GridMismatch, "fine grid must refine the dyadic grid");
  const Eigen::MatrixXd F = psd_factor(C);
  const std::size_t steps = std::size_t{1} << fine_level;
  const double h = 1.0 / static_cast<double>(steps);
  const double sq = std::sqrt(h);
  std::normal_distribution<double> normal;
  LiftBuilder b(C.rows(), level);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(C.rows());
  Eigen::VectorXd z(C.rows());
  b.push(0.0, x);
  for (std::size_t j = 1; j <= steps; ++j) {
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    x.noalias() += sq * (F * z);
    b.push(static_cast<double>(j) * h, x);
  }
  return b.finish();
}

inline void write_level1(std::ostream& os, const RoughLevel2& rp) {
  os << "s,t,i,value\n";
  for (const auto& lv : rp.levels)
    for (const auto& node : lv)
      for (Eigen::Index i = 0; i < node.X.size(); ++i) csv::Row(os) << node.s << node.t << static_cast<long>(i) << node.X[i];
}

inline void write_level2(std::ostream& os, const RoughLevel2& rp) {
  os << "s,t,i,j,value\n";
  for (const auto& lv : rp.levels)
    for (const auto& node : lv)
      for (Eigen::Index i = 0; i < node.XX.rows(); ++i)
        for (Eigen::Index j = 0; j < node.XX.cols(); ++j)
          csv::Row(os) << node.s << node.t << static_cast<long>(i) << static_cast<long>(j) << node.XX(i, j);
}

}  // namespace kbm

#endif
