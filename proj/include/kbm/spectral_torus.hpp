#ifndef KBM_SPECTRAL_TORUS_HPP
#define KBM_SPECTRAL_TORUS_HPP

// Divergence-free Fourier eigenbasis of the flat torus [0,2pi)^2, its Lie
// algebra structure constants and the Christoffel symbols of the L2 metric.
//
// Conventions:
//   * A_k = |k|^-1 (k2 cos(k.th) d1 - k1 cos(k.th) d2), B_k the same with sin.
//   * Only the half-lattice k1 > 0, or k1 == 0 && k2 > 0, is enumerated.
//   * ||A_k||^2_L2 = ||B_k||^2_L2 = 2 pi^2, so e = A / (pi sqrt 2) is the
//     L2-orthonormal computational basis.
//   * Brackets are vector-field brackets [X,Y] = (X.grad)Y - (Y.grad)X.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "kbm/csv.hpp"
#include "kbm/error.hpp"

namespace kbm::torus {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
/// Multiply a raw field (|k|^-1 prefactor) by this to get an L2-unit field.
inline const double kL2Normalizer = 1.0 / (kPi * std::sqrt(2.0));

enum class Parity : int { Cos = 0, Sin = 1 };

inline const char* to_string(Parity p) { return p == Parity::Cos ? "COS" : "SIN"; }

struct ModeIndex {
  int k1 = 0;
  int k2 = 0;
  Parity parity = Parity::Cos;

  int eigenvalue() const noexcept { return k1 * k1 + k2 * k2; }
  double wavenumber() const noexcept { return std::sqrt(static_cast<double>(eigenvalue())); }
  bool in_half_lattice() const noexcept { return k1 > 0 || (k1 == 0 && k2 > 0); }

  friend bool operator==(const ModeIndex&, const ModeIndex&) = default;
};

class ModeTable {
 public:
  ModeTable() = default;
  ModeTable(int cutoff, std::vector<ModeIndex> modes) : cutoff_(cutoff), modes_(std::move(modes)) {
    for (std::size_t i = 0; i < modes_.size(); ++i) lookup_[key(modes_[i])] = i;
  }

  int cutoff() const noexcept { return cutoff_; }
  std::size_t size() const noexcept { return modes_.size(); }
  const ModeIndex& operator[](std::size_t i) const { return modes_[i]; }
  const std::vector<ModeIndex>& modes() const noexcept { return modes_; }

  std::optional<std::size_t> find(int k1, int k2, Parity p) const {
    auto it = lookup_.find(key({k1, k2, p}));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  Eigen::VectorXd eigenvalues() const {
    Eigen::VectorXd lam(modes_.size());
    for (std::size_t i = 0; i < modes_.size(); ++i) lam[i] = modes_[i].eigenvalue();
    return lam;
  }

 private:
  static std::int64_t key(const ModeIndex& m) {
    return (static_cast<std::int64_t>(m.k1 + 4096) * 8192 + (m.k2 + 4096)) * 2 +
           static_cast<int>(m.parity);
  }

  int cutoff_ = 0;
  std::vector<ModeIndex> modes_;
  std::unordered_map<std::int64_t, std::size_t> lookup_;
};

/// All half-lattice modes with |k|^2 <= K^2, ordered by |k|^2, then (k1,k2), COS before SIN.
inline ModeTable enumerate_modes(int cutoff) {
  require(cutoff >= 1, ErrorKind::InvalidCutoff, "cutoff must be >= 1, got " + std::to_string(cutoff));
  std::vector<ModeIndex> modes;
  const int k2max = cutoff * cutoff;
  for (int k1 = 0; k1 <= cutoff; ++k1) {
    for (int k2 = -cutoff; k2 <= cutoff; ++k2) {
      ModeIndex m{k1, k2, Parity::Cos};
      if (!m.in_half_lattice() || m.eigenvalue() > k2max) continue;
      modes.push_back(m);
      modes.push_back({k1, k2, Parity::Sin});
    }
  }
  std::sort(modes.begin(), modes.end(), [](const ModeIndex& a, const ModeIndex& b) {
    if (a.eigenvalue() != b.eigenvalue()) return a.eigenvalue() < b.eigenvalue();
    if (a.k1 != b.k1) return a.k1 < b.k1;
    if (a.k2 != b.k2) return a.k2 < b.k2;
    return static_cast<int>(a.parity) < static_cast<int>(b.parity);
  });
  return ModeTable(cutoff, std::move(modes));
}

/// Raw field A_k or B_k (|k|^-1 prefactor) at theta.
inline std::array<double, 2> eval_mode_field(const ModeIndex& m, double th1, double th2) {
  const double phase = m.k1 * th1 + m.k2 * th2;
  const double wave = m.parity == Parity::Cos ? std::cos(phase) : std::sin(phase);
  const double inv = 1.0 / m.wavenumber();
  return {inv * m.k2 * wave, -inv * m.k1 * wave};
}

namespace detail {

// Jacobian J[i][j] = d_j F_i of a raw mode field.
inline std::array<std::array<double, 2>, 2> mode_jacobian(const ModeIndex& m, double th1, double th2) {
  const double phase = m.k1 * th1 + m.k2 * th2;
  // d/dth_j of cos = -k_j sin, of sin = k_j cos
  const double dwave = m.parity == Parity::Cos ? -std::sin(phase) : std::cos(phase);
  const double inv = 1.0 / m.wavenumber();
  const double c0 = inv * m.k2;
  const double c1 = -inv * m.k1;
  return {{{c0 * dwave * m.k1, c0 * dwave * m.k2}, {c1 * dwave * m.k1, c1 * dwave * m.k2}}};
}

inline void check_grid(int grid, int cutoff) {
  require(grid >= 4 * cutoff + 2, ErrorKind::Resolution,
          "grid " + std::to_string(grid) + " below alias-free size 4K+2 = " +
              std::to_string(4 * cutoff + 2));
}

}  // namespace detail

/// Max over a uniform G x G grid of |div| computed from the closed-form partials.
inline double divergence_residual(const ModeIndex& m, int grid, int cutoff) {
  require(m.in_half_lattice() && m.eigenvalue() <= cutoff * cutoff, ErrorKind::InvalidParameter,
          "mode outside the cutoff");
  detail::check_grid(grid, cutoff);
  double worst = 0.0;
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      const auto jac = detail::mode_jacobian(m, kTwoPi * i / grid, kTwoPi * j / grid);
      worst = std::max(worst, std::abs(jac[0][0] + jac[1][1]));
    }
  }
  return worst;
}

/// Quadrature Gram matrix of the L2-normalized basis; the identity when alias-free.
inline Eigen::MatrixXd gram_matrix(const ModeTable& table, int grid) {
  detail::check_grid(grid, table.cutoff());
  const std::size_t n = table.size();
  const double w = (kTwoPi / grid) * (kTwoPi / grid) * kL2Normalizer * kL2Normalizer;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
  std::vector<std::array<double, 2>> values(n);
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      for (std::size_t a = 0; a < n; ++a) values[a] = eval_mode_field(table[a], kTwoPi * i / grid, kTwoPi * j / grid);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a; b < n; ++b)
          gram(a, b) += w * (values[a][0] * values[b][0] + values[a][1] * values[b][1]);
    }
  }
  gram.triangularView<Eigen::StrictlyLower>() = gram.transpose();
  return gram;
}

struct BracketResult {
  Eigen::VectorXd coeffs;  ///< raw-field coefficients on the output table
  bool truncated = false;  ///< output cutoff below 2K: high frequencies were lost
};

/// Pointwise bracket on a grid, projected back onto `out` by quadrature.
/// Inputs and output are raw-field coefficients.
inline BracketResult bracket_oracle(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const ModeTable& in,
                                    const ModeTable& out, int grid) {
  require(static_cast<std::size_t>(x.size()) == in.size() && static_cast<std::size_t>(y.size()) == in.size(),
          ErrorKind::DimensionMismatch, "bracket inputs must match the input table");
  detail::check_grid(grid, in.cutoff());
  require(grid > 2 * in.cutoff() + out.cutoff(), ErrorKind::Resolution, "grid too coarse for the output table");
  BracketResult res;
  res.truncated = out.cutoff() < 2 * in.cutoff();
  res.coeffs = Eigen::VectorXd::Zero(out.size());
  const double w = (kTwoPi / grid) * (kTwoPi / grid) / (2.0 * kPi * kPi);
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      const double t1 = kTwoPi * i / grid;
      const double t2 = kTwoPi * j / grid;
      std::array<double, 2> fx{0, 0}, fy{0, 0};
      std::array<std::array<double, 2>, 2> jx{}, jy{};
      for (std::size_t a = 0; a < in.size(); ++a) {
        if (x[a] == 0.0 && y[a] == 0.0) continue;
        const auto f = eval_mode_field(in[a], t1, t2);
        const auto jac = detail::mode_jacobian(in[a], t1, t2);
        for (int r = 0; r < 2; ++r) {
          fx[r] += x[a] * f[r];
          fy[r] += y[a] * f[r];
          for (int c = 0; c < 2; ++c) {
            jx[r][c] += x[a] * jac[r][c];
            jy[r][c] += y[a] * jac[r][c];
          }
        }
      }
      std::array<double, 2> br{};
      for (int r = 0; r < 2; ++r)
        br[r] = fx[0] * jy[r][0] + fx[1] * jy[r][1] - (fy[0] * jx[r][0] + fy[1] * jx[r][1]);
      for (std::size_t m = 0; m < out.size(); ++m) {
        const auto e = eval_mode_field(out[m], t1, t2);
        res.coeffs[m] += w * (br[0] * e[0] + br[1] * e[1]);
      }
    }
  }
  return res;
}

/// Sparse structure constants c^n_{k,l} = <[e_k, e_l], e_n> in the L2-orthonormal basis.
class StructureTensor {
 public:
  struct Entry {
    int n, k, l;
    double value;
  };

  StructureTensor() = default;
  explicit StructureTensor(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }

  /// Stores c^n_{k,l} and c^n_{l,k} = -c^n_{k,l} (exact negation). Requires k < l.
  void set(int n, int k, int l, double value) {
    canonical_.push_back({n, k, l, value});
    values_[key(n, k, l)] = value;
    values_[key(n, l, k)] = -value;
  }

  double operator()(int n, int k, int l) const {
    auto it = values_.find(key(n, k, l));
    return it == values_.end() ? 0.0 : it->second;
  }

  /// Entries with k < l; the (l,k) half follows by antisymmetry.
  const std::vector<Entry>& entries() const noexcept { return canonical_; }

  /// Squared L2 mass of bracket components above the cutoff, summed over pairs k < l.
  double dropped_mass() const noexcept { return dropped_mass_; }
  void set_dropped_mass(double m) noexcept { dropped_mass_ = m; }

 private:
  std::int64_t key(int n, int k, int l) const {
    const auto d = static_cast<std::int64_t>(dim_);
    return (static_cast<std::int64_t>(n) * d + k) * d + l;
  }

  std::size_t dim_ = 0;
  std::vector<Entry> canonical_;
  std::unordered_map<std::int64_t, double> values_;
  double dropped_mass_ = 0.0;
};

namespace detail {

using Vec2c = std::array<std::complex<double>, 2>;

// A mode field written as sum over eps=+-1 of amp_eps * c * exp(i eps k.th).
struct ExpTerm {
  int p1, p2;
  std::complex<double> amp;
  std::array<double, 2> dir;
};

inline std::array<ExpTerm, 2> exp_terms(const ModeIndex& m) {
  const double inv = 1.0 / m.wavenumber();
  const std::array<double, 2> dir{inv * m.k2, -inv * m.k1};
  using C = std::complex<double>;
  if (m.parity == Parity::Cos) return {{{m.k1, m.k2, C(0.5, 0.0), dir}, {-m.k1, -m.k2, C(0.5, 0.0), dir}}};
  // sin = (e^{i} - e^{-i}) / 2i
  return {{{m.k1, m.k2, C(0.0, -0.5), dir}, {-m.k1, -m.k2, C(0.0, 0.5), dir}}};
}

}  // namespace detail

/// Closed-form structure constants from the Fourier expansion of each bracket.
/// Components outside the table are dropped and tallied in dropped_mass().
inline StructureTensor structure_constants(const ModeTable& table) {
  const std::size_t n = table.size();
  StructureTensor c(n);
  double dropped = 0.0;
  // coefficient beta on the raw field A_m maps to beta / (pi sqrt 2) on the L2-unit e_m
  const double scale = kL2Normalizer;
  for (std::size_t k = 0; k < n; ++k) {
    const auto tk = detail::exp_terms(table[k]);
    for (std::size_t l = k + 1; l < n; ++l) {
      const auto tl = detail::exp_terms(table[l]);
      std::map<std::pair<int, int>, detail::Vec2c> spectrum;
      for (const auto& a : tk) {
        for (const auto& b : tl) {
          // [c e^{iq.th}, d e^{ir.th}] = i[(c.r) d - (d.q) c] e^{i(q+r).th}
          const double c_dot_r = a.dir[0] * b.p1 + a.dir[1] * b.p2;
          const double d_dot_q = b.dir[0] * a.p1 + b.dir[1] * a.p2;
          const std::complex<double> coef = std::complex<double>(0.0, 1.0) * a.amp * b.amp;
          auto& slot = spectrum[{a.p1 + b.p1, a.p2 + b.p2}];
          for (int r = 0; r < 2; ++r) slot[r] += coef * (c_dot_r * b.dir[r] - d_dot_q * a.dir[r]);
        }
      }
      for (const auto& [freq, amp] : spectrum) {
        const ModeIndex probe{freq.first, freq.second, Parity::Cos};
        if (!probe.in_half_lattice()) continue;  // conjugate of a half-lattice frequency
        const double inv = 1.0 / probe.wavenumber();
        const std::complex<double> proj = amp[0] * (inv * probe.k2) + amp[1] * (-inv * probe.k1);
        const double on_cos = 2.0 * proj.real() * scale;
        const double on_sin = -2.0 * proj.imag() * scale;
        const auto ic = table.find(freq.first, freq.second, Parity::Cos);
        if (!ic) {
          dropped += on_cos * on_cos + on_sin * on_sin;
          continue;
        }
        const auto is = table.find(freq.first, freq.second, Parity::Sin);
        const double tol = 1e-14;
        if (std::abs(on_cos) > tol) c.set(static_cast<int>(*ic), static_cast<int>(k), static_cast<int>(l), on_cos);
        if (std::abs(on_sin) > tol) c.set(static_cast<int>(*is), static_cast<int>(k), static_cast<int>(l), on_sin);
      }
    }
  }
  c.set_dropped_mass(dropped);
  return c;
}

/// Gamma^n_{k,l} = 1/2 (c^n_{k,l} - c^k_{l,n} + c^l_{n,k}), stored for n < l only;
/// Gamma^l_{k,n} = -Gamma^n_{k,l} exactly.
class ChristoffelTensor {
 public:
  struct Entry {
    int n, k, l;
    double value;
  };

  ChristoffelTensor() = default;
  explicit ChristoffelTensor(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  void add(int n, int k, int l, double value) {
    entries_.push_back({n, k, l, value});
    values_[key(n, k, l)] = value;
  }

  double operator()(int n, int k, int l) const {
    if (n == l) return 0.0;
    if (n < l) {
      auto it = values_.find(key(n, k, l));
      return it == values_.end() ? 0.0 : it->second;
    }
    auto it = values_.find(key(l, k, n));
    return it == values_.end() ? 0.0 : -it->second;
  }

  /// Gamma(w) as a dense N x N matrix, row n, column l; exactly antisymmetric.
  Eigen::MatrixXd matrix(const Eigen::Ref<const Eigen::VectorXd>& w) const {
    require(static_cast<std::size_t>(w.size()) == dim_, ErrorKind::DimensionMismatch, "Gamma(w): size");
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(dim_, dim_);
    for (const auto& e : entries_) {
      const double v = w[e.k] * e.value;
      g(e.n, e.l) += v;
      g(e.l, e.n) -= v;
    }
    return g;
  }

  /// The endomorphism Gamma_k.
  Eigen::MatrixXd matrix_for_mode(int k) const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(dim_);
    w[k] = 1.0;
    return matrix(w);
  }

 private:
  std::int64_t key(int n, int k, int l) const {
    const auto d = static_cast<std::int64_t>(dim_);
    return (static_cast<std::int64_t>(n) * d + k) * d + l;
  }

  std::size_t dim_ = 0;
  std::vector<Entry> entries_;
  std::unordered_map<std::int64_t, double> values_;
};

inline ChristoffelTensor christoffel_tensor(const StructureTensor& c) {
  ChristoffelTensor gamma(c.dim());
  // Nonzero Gamma^n_{k,l} needs some nonzero c on a permutation of (n,k,l).
  std::vector<std::array<int, 3>> candidates;
  for (const auto& e : c.entries()) {
    const std::array<int, 3> t{e.n, e.k, e.l};
    std::array<int, 3> p{0, 1, 2};
    do {
      candidates.push_back({t[p[0]], t[p[1]], t[p[2]]});
    } while (std::next_permutation(p.begin(), p.end()));
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  for (const auto& [n, k, l] : candidates) {
    if (n >= l) continue;
    // grouped as ((c^n_{kl} + c^l_{nk}) - c^k_{ln}) so that swapping n and l negates bitwise
    const double v = 0.5 * ((c(n, k, l) + c(l, n, k)) - c(k, l, n));
    if (v != 0.0) gamma.add(n, k, l, v);
  }
  return gamma;
}

inline void write_mode_table(std::ostream& os, const ModeTable& table) {
  os << "mode_id,k1,k2,parity,eigenvalue\n";
  for (std::size_t i = 0; i < table.size(); ++i)
    os << i << ',' << table[i].k1 << ',' << table[i].k2 << ',' << to_string(table[i].parity) << ','
       << table[i].eigenvalue() << '\n';
}

inline void write_structure(std::ostream& os, const StructureTensor& c) {
  os << "n,k,l,value\n";
  for (const auto& e : c.entries()) csv::Row(os) << e.n << e.k << e.l << e.value;
}

inline void write_christoffel(std::ostream& os, const ChristoffelTensor& g) {
  os << "n,k,l,value\n";
  for (const auto& e : g.entries()) csv::Row(os) << e.n << e.k << e.l << e.value;
}

}  // namespace kbm::torus

#endif
