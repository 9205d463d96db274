#ifndef KBM_HARNESS_HPP
#define KBM_HARNESS_HPP

// Named experiments with seeds, tolerances and file outputs. Every experiment
// returns its assertions and the text of its output files; run_experiment
// writes them under the output directory.

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "kbm/csv.hpp"
#include "kbm/error.hpp"
#include "kbm/gauss_hilbert.hpp"
#include "kbm/invariant_stats.hpp"
#include "kbm/kinetic_sde.hpp"
#include "kbm/lie_development.hpp"
#include "kbm/rng.hpp"
#include "kbm/roughpath2.hpp"
#include "kbm/spectral_torus.hpp"

namespace kbm {

// ---------------------------------------------------------------- reports

struct Assertion {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  bool pass = false;

  bool operator==(const Assertion& o) const {
    return name == o.name && std::bit_cast<std::uint64_t>(value) == std::bit_cast<std::uint64_t>(o.value) &&
           std::bit_cast<std::uint64_t>(bound) == std::bit_cast<std::uint64_t>(o.bound) && pass == o.pass;
  }
};

inline void write_report(std::ostream& os, const std::vector<Assertion>& list) {
  os << "name,value,bound,pass\n";
  for (const auto& a : list) csv::Row(os) << a.name << a.value << a.bound << (a.pass ? "true" : "false");
}

/// Parses `name,value,bound,pass` rows, skipping `#` comment lines and the header.
inline double parse_report_number(const std::string& cell) {
  double x = 0.0;
  const char* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, x);
  require(ec == std::errc() && ptr == end, ErrorKind::Io, "malformed report number: " + cell);
  return x;
}

inline std::vector<Assertion> parse_report(std::istream& is) {
  std::vector<Assertion> out;
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      require(line == "name,value,bound,pass", ErrorKind::Io, "report header missing");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    require(f.size() == 4, ErrorKind::Io, "malformed report row: " + line);
    require(f[3] == "true" || f[3] == "false", ErrorKind::Io, "malformed pass flag: " + f[3]);
    out.push_back({f[0], parse_report_number(f[1]), parse_report_number(f[2]), f[3] == "true"});
  }
  return out;
}

inline int exit_status(const std::vector<Assertion>& list) {
  return std::all_of(list.begin(), list.end(), [](const Assertion& a) { return a.pass; }) ? 0 : 1;
}

inline Assertion assert_le(std::string name, double value, double bound) {
  return {std::move(name), value, bound, value <= bound};
}

inline Assertion assert_ge(std::string name, double value, double bound) {
  return {std::move(name), value, bound, value >= bound};
}

// ---------------------------------------------------------------- fan-out

/// Runs f(i) for i < n on `threads` workers; results are stored by index so
/// the output does not depend on scheduling. The first exception is rethrown.
template <typename F>
auto fan_out(std::size_t n, int threads, F&& f) -> std::vector<decltype(f(std::size_t{0}))> {
  using R = decltype(f(std::size_t{0}));
  std::vector<std::optional<R>> slots(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        slots[i].emplace(f(i));
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!err) err = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  const int t = std::max(1, threads);
  if (t == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < t; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (err) std::rethrow_exception(err);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// Independent seed family for a sub-experiment `tag` of the root seed.
inline std::uint64_t family_seed(std::uint64_t root, std::uint64_t tag) {
  return derive_stream_seed(root ^ 0xA5A5A5A5A5A5A5A5ULL, tag);
}

// ---------------------------------------------------------------- config

struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 1;
  int cutoff = 2;
  double s = 2.0;
  double a = 1.0;
  int isotropic = 0;           ///< > 0 selects the identity covariance on R^d
  std::vector<double> alpha;   ///< explicit spectrum on R^d when nonempty
  std::vector<double> sigmas;
  double T = 0.0;              ///< 0 selects the experiment default
  double dt = 0.0;             ///< 0 selects the experiment default
  long replicas = 0;           ///< 0 selects the experiment default
  int grid = 64;
  int threads = 1;
  std::vector<int> coords;     ///< coordinates tested by invariant-check
  bool zero_omega = false;
  std::string out = "out";

  void set(const std::string& key, const std::string& value);
  std::vector<std::string> lines() const;
};

namespace detail {

inline std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) continue;
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == cell.size(), ErrorKind::InvalidParameter, "not a number: '" + cell + "'");
    out.push_back(x);
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& s) {
  auto v = parse_doubles(s);
  require(v.size() == 1, ErrorKind::InvalidParameter, key + " expects one number, got '" + s + "'");
  return v[0];
}

inline long parse_long(const std::string& key, const std::string& s) {
  std::size_t used = 0;
  long x = 0;
  try {
    x = std::stol(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(!s.empty() && used == s.size(), ErrorKind::InvalidParameter, key + " expects an integer, got '" + s + "'");
  return x;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>)
      out += csv::num(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace detail

inline void ExperimentConfig::set(const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "experiment") experiment = value;
  else if (key == "seed") seed = std::stoull(value);
  else if (key == "cutoff") cutoff = static_cast<int>(parse_long(key, value));
  else if (key == "sobolev-s") s = parse_double(key, value);
  else if (key == "sobolev-a") a = parse_double(key, value);
  else if (key == "isotropic") isotropic = static_cast<int>(parse_long(key, value));
  else if (key == "alpha") alpha = parse_doubles(value);
  else if (key == "sigma") sigmas = parse_doubles(value);
  else if (key == "T") T = parse_double(key, value);
  else if (key == "dt") dt = parse_double(key, value);
  else if (key == "replicas") replicas = parse_long(key, value);
  else if (key == "grid") grid = static_cast<int>(parse_long(key, value));
  else if (key == "threads") threads = static_cast<int>(parse_long(key, value));
  else if (key == "coords") {
    coords.clear();
    for (double c : parse_doubles(value)) coords.push_back(static_cast<int>(c));
  } else if (key == "zero-omega") zero_omega = value == "1" || value == "true";
  else if (key == "out") out = value;
  else throw Error(ErrorKind::InvalidParameter, "unknown configuration key '" + key + "'");
}

inline std::vector<std::string> ExperimentConfig::lines() const {
  return {"experiment=" + experiment,
          "seed=" + std::to_string(seed),
          "cutoff=" + std::to_string(cutoff),
          "sobolev-s=" + csv::num(s),
          "sobolev-a=" + csv::num(a),
          "isotropic=" + std::to_string(isotropic),
          "alpha=" + detail::join(alpha),
          "sigma=" + detail::join(sigmas),
          "T=" + csv::num(T),
          "dt=" + csv::num(dt),
          "replicas=" + std::to_string(replicas),
          "grid=" + std::to_string(grid),
          "coords=" + detail::join(coords),
          "zero-omega=" + std::string(zero_omega ? "true" : "false")};
}

/// Reads a flat `key=value` file; blank lines and `#` comments are ignored.
inline void load_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open config file " + path);
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::InvalidParameter, "config line without '=': " + line);
    auto trim = [](std::string x) {
      const auto l = x.find_first_not_of(" \t");
      const auto r = x.find_last_not_of(" \t\r");
      return l == std::string::npos ? std::string() : x.substr(l, r - l + 1);
    };
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

/// Torus setup shared by the development experiments.
struct TorusSetup {
  torus::ModeTable table;
  torus::StructureTensor c;
  torus::ChristoffelTensor gamma;

  explicit TorusSetup(int K)
      : table(torus::enumerate_modes(K)), c(torus::structure_constants(table)), gamma(torus::christoffel_tensor(c)) {}
};

/// Spectrum selected by the configuration: explicit alpha, isotropic R^d, or
/// the Sobolev spectrum on the torus modes of cutoff K.
inline CovarianceSpectrum config_spectrum(const ExperimentConfig& cfg) {
  if (!cfg.alpha.empty()) return explicit_spectrum(cfg.alpha);
  if (cfg.isotropic > 0) return isotropic_spectrum(static_cast<std::size_t>(cfg.isotropic));
  return sobolev_spectrum(torus::enumerate_modes(cfg.cutoff), cfg.a, cfg.s);
}

inline CoeffVector unit_vector(Eigen::Index n, Eigen::Index i) {
  CoeffVector v = CoeffVector::Zero(n);
  v[i] = 1.0;
  return v;
}

inline std::string spectrum_metadata(const CovarianceSpectrum& spec) {
  const auto tc = trace_condition(spec);
  return "N=" + std::to_string(spec.dim()) + " s=" + csv::num(spec.s) + " a=" + csv::num(spec.a) +
         " trace=" + csv::num(spec.trace()) + " margin=" + csv::num(tc.margin);
}

struct ExperimentOutput {
  std::vector<Assertion> assertions;
  std::vector<std::pair<std::string, std::string>> files;  ///< (file name, body)

  void add(Assertion a) { assertions.push_back(std::move(a)); }
  void append(const ExperimentOutput& o) {
    assertions.insert(assertions.end(), o.assertions.begin(), o.assertions.end());
    files.insert(files.end(), o.files.begin(), o.files.end());
  }
};

// ---------------------------------------------------------------- invariant-check

struct InvariantCheckParams {
  CovarianceSpectrum spec;
  std::vector<int> coords;
  long replicas = 10000;
  double T = 20.0;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string tag = "invariant";
};

/// Long-run velocity marginals from a fixed start against the importance
/// sampler of the invariant measure.
inline ExperimentOutput invariant_check(const InvariantCheckParams& p) {
  const auto& spec = p.spec;
  const Eigen::Index n = spec.alpha.size();
  require(p.replicas >= 1, ErrorKind::EmptySample, "replicas must be >= 1");
  std::vector<int> coords = p.coords;
  if (coords.empty())
    for (int i = 0; i < std::min<int>(3, static_cast<int>(n)); ++i) coords.push_back(i);
  for (int c : coords) require(c >= 0 && c < n, ErrorKind::DimensionMismatch, "coordinate out of range");
  const CoeffVector v0 = unit_vector(n, 0);
  const std::uint64_t fam = family_seed(p.seed, 1);
  const auto finals = fan_out(static_cast<std::size_t>(p.replicas), p.threads, [&](std::size_t r) {
    Rng rng = make_stream(fam, r);
    CoeffVector v = v0;
    VelocityStepper st(spec, 1.0, p.T / static_cast<double>(step_count(p.T, p.dt)));
    const long steps = step_count(p.T, p.dt);
    for (long j = 0; j < steps; ++j) st.step(rng, v);
    return v;
  });
  Rng orng = make_stream(family_seed(p.seed, 2), 0);
  const WeightedSample oracle = sample_invariant_oracle_ess(spec, static_cast<double>(p.replicas), orng);
  ExperimentOutput out;
  std::ostringstream ks;
  ks << "coord,statistic,threshold,ess_sde,ess_oracle\n";
  for (int c : coords) {
    std::vector<double> vals;
    vals.reserve(finals.size());
    for (const auto& v : finals) vals.push_back(v[c]);
    const KsResult r = ks_statistic(Weighted1D::unweighted(std::move(vals)), marginal(oracle, c));
    csv::Row(ks) << c << r.statistic << r.threshold << r.ess_a << r.ess_b;
    out.add(assert_le(p.tag + "_ks_coord_" + std::to_string(c), r.statistic, r.threshold));
  }
  out.add(assert_ge(p.tag + "_oracle_ess", oracle.effective_size(), static_cast<double>(p.replicas)));
  std::ostringstream sp;
  write_spectrum(sp, spec);
  out.files.emplace_back("spectrum.csv", sp.str());
  out.files.emplace_back("ks.csv", ks.str());
  return out;
}

// ---------------------------------------------------------------- mixing-rate

struct MixingParams {
  CovarianceSpectrum spec;
  long replicas = 2000;
  double T = 4.0;
  double dt = 1e-3;
  double record_every = 0.05;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string tag = "mixing";
};

struct MixingResult {
  MixingFit fit;
  MeanDecayCurve mean;
  ExperimentOutput out;
};

/// Synchronous coupling from v0 = e_0, w0 = e_1 (N_0 = 1); the v-halves
/// also give the mean-decay curve from the fixed start e_0.
inline MixingResult mixing_rate(const MixingParams& p) {
  const auto& spec = p.spec;
  const TraceCondition tc = trace_condition(spec);
  require(tc.holds, ErrorKind::ConditionViolated,
          "trace condition fails (margin " + csv::num(tc.margin) + "); the mixing bound is not claimed");
  require(spec.dim() >= 2, ErrorKind::UnsupportedDimension, "coupling needs N >= 2");
  const Eigen::Index n = spec.alpha.size();
  const long steps = step_count(p.T, p.dt);
  const double h = p.T / static_cast<double>(steps);
  const long stride = std::max<long>(1, std::lround(p.record_every / h));
  const std::uint64_t fam = family_seed(p.seed, 3);
  auto pairs = fan_out(static_cast<std::size_t>(p.replicas), p.threads, [&](std::size_t r) {
    Rng rng = make_stream(fam, r);
    return simulate_coupled_pair(unit_vector(n, 0), unit_vector(n, 1), spec, p.T, h, rng, stride);
  });
  MixingResult res;
  res.fit = mixing_decay_fit(pairs, spec, p.T);
  std::vector<SphereTrajectory> vs;
  vs.reserve(pairs.size());
  for (const auto& pr : pairs) vs.push_back(first_component(pr));
  const double tau = res.fit.degenerate ? 1.0 : res.fit.tau;
  res.mean = mean_decay_curve(vs, tau);

  auto& out = res.out;
  out.add({p.tag + "_log_slope", res.fit.slope, res.fit.bound + 2.0 * res.fit.stderr_, res.fit.pass()});
  double worst = -INFINITY;
  for (std::size_t i = 0; i < res.mean.times.size(); ++i)
    worst = std::max(worst, res.mean.norm[i] - res.mean.bound[i] - 3.0 * res.mean.stderr_[i]);
  out.add({p.tag + "_mean_decay_excess", worst, 0.0, !res.fit.degenerate && res.mean.pass()});

  std::vector<SummaryRow> rows;
  for (std::size_t i = 0; i < res.fit.times.size(); ++i) rows.push_back({res.fit.times[i], "mean_N", res.fit.mean_n[i], 0.0});
  std::ostringstream cp;
  cp << "# slope=" << csv::num(res.fit.slope) << " stderr=" << csv::num(res.fit.stderr_)
     << " bound=" << csv::num(res.fit.bound) << " tau=" << csv::num(res.fit.tau) << '\n';
  write_summary(cp, rows);
  rows.clear();
  for (std::size_t i = 0; i < res.mean.times.size(); ++i) {
    rows.push_back({res.mean.times[i], "mean_norm", res.mean.norm[i], res.mean.stderr_[i]});
    rows.push_back({res.mean.times[i], "bound", res.mean.bound[i], 0.0});
  }
  std::ostringstream md;
  write_summary(md, rows);
  std::ostringstream sp;
  write_spectrum(sp, spec);
  out.files.emplace_back("spectrum.csv", sp.str());
  out.files.emplace_back("coupling.csv", cp.str());
  out.files.emplace_back("mean_decay.csv", md.str());
  return res;
}

// ---------------------------------------------------------------- homogenization ensembles

/// Six dyadic (s,t) pairs used by the moment checks.
inline const std::vector<std::pair<double, double>>& moment_grid() {
  static const std::vector<std::pair<double, double>> g{{0.0, 0.125}, {0.0, 0.25}, {0.25, 0.5},
                                                        {0.0, 0.5},   {0.5, 1.0},  {0.0, 1.0}};
  return g;
}

inline constexpr int kDyadicLevel = 3;

/// One rescaled replica X^sigma on [0,1] lifted to level 2, stationary start.
inline RoughLevel2 rescaled_replica(const CovarianceSpectrum& spec, double sigma, double dt, Rng& rng,
                                    int level = kDyadicLevel) {
  const CoeffVector v0 = sample_invariant_exact(spec, 1, rng).col(0);
  const double s4 = sigma * sigma * sigma * sigma;
  const long cells = 1L << level;
  long n = step_count(s4, dt);
  n = ((n + cells - 1) / cells) * cells;
  LiftBuilder lift(v0.size(), level);
  integrate_rescaled(v0, spec, sigma, 1.0, s4 / static_cast<double>(n), rng,
                     [&](long, double t, const CoeffVector& x, const CoeffVector&) { lift.push(t, x); });
  return lift.finish();
}

struct SigmaEnsemble {
  double sigma = 0.0;
  std::vector<RoughLevel2> paths;
};

inline SigmaEnsemble rescaled_ensemble(const CovarianceSpectrum& spec, double sigma, long replicas, double dt,
                                       std::uint64_t seed, int threads) {
  const std::uint64_t fam = family_seed(seed, 1000 + static_cast<std::uint64_t>(std::llround(sigma * 1000)));
  SigmaEnsemble e;
  e.sigma = sigma;
  e.paths = fan_out(static_cast<std::size_t>(replicas), threads, [&](std::size_t r) {
    Rng rng = make_stream(fam, r);
    return rescaled_replica(spec, sigma, dt, rng);
  });
  return e;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  MeanSe r;
  if (x.empty()) return r;
  for (double v : x) r.mean += v;
  r.mean /= n;
  double ss = 0.0;
  for (double v : x) ss += (v - r.mean) * (v - r.mean);
  r.se = n > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
  return r;
}

/// Per-component variance of X_1 against `target` (relative tolerance) and
/// cross-covariances against 0 within 3 standard errors.
inline ExperimentOutput covariance_check(const SigmaEnsemble& e, double target, double rel_tol) {
  ExperimentOutput out;
  const Eigen::Index d = e.paths.front().dim();
  const std::size_t R = e.paths.size();
  Eigen::MatrixXd X(d, static_cast<Eigen::Index>(R));
  for (std::size_t r = 0; r < R; ++r) X.col(static_cast<Eigen::Index>(r)) = e.paths[r].whole().X;
  const Eigen::VectorXd m = X.rowwise().mean();
  const Eigen::MatrixXd Xc = X.colwise() - m;
  std::ostringstream cov;
  cov << "# sigma=" << csv::num(e.sigma) << " replicas=" << R << '\n';
  cov << "mode_i,mode_j,value,stderr\n";
  double worst_var = 0.0, worst_cross = -INFINITY;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i; j < d; ++j) {
      std::vector<double> prod(R);
      for (std::size_t r = 0; r < R; ++r) prod[r] = Xc(i, static_cast<Eigen::Index>(r)) * Xc(j, static_cast<Eigen::Index>(r));
      MeanSe ms = mean_se(prod);
      ms.mean *= static_cast<double>(R) / static_cast<double>(R - 1);
      csv::Row(cov) << static_cast<long>(i) << static_cast<long>(j) << ms.mean << ms.se;
      if (i == j)
        worst_var = std::max(worst_var, std::abs(ms.mean / target - 1.0));
      else
        worst_cross = std::max(worst_cross, std::abs(ms.mean) - 3.0 * ms.se);
    }
  out.add(assert_le("homogenize_variance_rel_error", worst_var, rel_tol));
  if (d > 1) out.add(assert_le("homogenize_cross_cov_excess", worst_cross, 0.0));
  out.files.emplace_back("covariance.csv", cov.str());
  return out;
}

struct MomentTable {
  std::vector<double> sigmas;
  std::vector<std::vector<MeanSe>> level1;  ///< [sigma][grid] E|X_st|^4 / |t-s|^2
  std::vector<std::vector<MeanSe>> level2;  ///< [sigma][grid] E|XX_st|^2 / |t-s|^2
};

inline MomentTable moment_table(const std::vector<SigmaEnsemble>& ens) {
  MomentTable m;
  for (const auto& e : ens) {
    m.sigmas.push_back(e.sigma);
    std::vector<MeanSe> l1, l2;
    for (const auto& [s, t] : moment_grid()) {
      const double dt2 = (t - s) * (t - s);
      std::vector<double> a, b;
      for (const auto& rp : e.paths) {
        const Level2& node = rp.interval(s, t);
        a.push_back(std::pow(node.X.squaredNorm(), 2) / dt2);
        b.push_back(node.XX.squaredNorm() / dt2);
      }
      l1.push_back(mean_se(a));
      l2.push_back(mean_se(b));
    }
    m.level1.push_back(l1);
    m.level2.push_back(l2);
  }
  return m;
}

/// Uniform-in-sigma moment bound: every ratio stays within twice the largest
/// ratio of the reference (largest) sigma.
inline ExperimentOutput moment_check(const MomentTable& m) {
  ExperimentOutput out;
  std::ostringstream os;
  os << "sigma,s,t,stat,value,stderr\n";
  const auto& grid = moment_grid();
  const std::size_t ref = static_cast<std::size_t>(
      std::max_element(m.sigmas.begin(), m.sigmas.end()) - m.sigmas.begin());
  auto check = [&](const std::vector<std::vector<MeanSe>>& table, const std::string& stat) {
    double ref_max = 0.0, all_max = 0.0;
    for (std::size_t g = 0; g < grid.size(); ++g) ref_max = std::max(ref_max, table[ref][g].mean);
    for (std::size_t k = 0; k < m.sigmas.size(); ++k)
      for (std::size_t g = 0; g < grid.size(); ++g) {
        all_max = std::max(all_max, table[k][g].mean);
        csv::Row(os) << m.sigmas[k] << grid[g].first << grid[g].second << stat << table[k][g].mean << table[k][g].se;
      }
    out.add(assert_le("moment_bound_" + stat, all_max, 2.0 * ref_max));
  };
  check(m.level1, "level1_p4");
  check(m.level2, "level2_p2");
  out.files.emplace_back("moments.csv", os.str());
  return out;
}

/// E|x^sigma_1 - v0|^2 for the unrescaled position started at 0 with stationary v0.
inline std::vector<double> unrescaled_deviation_samples(const CovarianceSpectrum& spec, double sigma, long replicas,
                                                        double dt, std::uint64_t seed, int threads) {
  const std::uint64_t fam = family_seed(seed, 5000 + static_cast<std::uint64_t>(std::llround(sigma * 1000)));
  return fan_out(static_cast<std::size_t>(replicas), threads, [&](std::size_t r) {
    Rng rng = make_stream(fam, r);
    const CoeffVector v0 = sample_invariant_exact(spec, 1, rng).col(0);
    // x^sigma_1 = sigma^-2 int_0^{sigma^2} v_u du with v at unit speed
    const double horizon = sigma * sigma;
    const long n = std::max<long>(1, step_count(horizon, dt));
    CoeffVector last(v0.size());
    integrate_kinetic(v0, CoeffVector::Zero(v0.size()), spec, 1.0, horizon, horizon / static_cast<double>(n), rng,
                      [&](long, double, const CoeffVector&, const CoeffVector& x) { last = x; });
    return (last / (sigma * sigma) - v0).squaredNorm();
  });
}

/// Qualitative sigma trend: the unrescaled path leaves the frozen straight
/// line more as sigma grows, while E|X^sigma_1|^2 settles.
inline ExperimentOutput sigma_trend_check(const CovarianceSpectrum& spec, const std::vector<SigmaEnsemble>& ens,
                                          long replicas, double dt, std::uint64_t seed, int threads) {
  ExperimentOutput out;
  std::vector<MeanSe> dev, rescaled;
  std::vector<double> sig;
  for (const auto& e : ens) {
    sig.push_back(e.sigma);
    dev.push_back(mean_se(unrescaled_deviation_samples(spec, e.sigma, replicas, dt, seed, threads)));
    std::vector<double> x2;
    for (const auto& rp : e.paths) x2.push_back(rp.whole().X.squaredNorm());
    rescaled.push_back(mean_se(x2));
  }
  std::ostringstream os;
  os << "sigma,stat,value,stderr\n";
  for (std::size_t k = 0; k < sig.size(); ++k) {
    csv::Row(os) << sig[k] << "unrescaled_deviation" << dev[k].mean << dev[k].se;
    csv::Row(os) << sig[k] << "rescaled_second_moment" << rescaled[k].mean << rescaled[k].se;
  }
  // monotone increase of the deviation from frozen motion
  double worst_dev = -INFINITY;
  for (std::size_t k = 1; k < sig.size(); ++k)
    worst_dev = std::max(worst_dev, dev[k - 1].mean - dev[k].mean - 3.0 * std::hypot(dev[k - 1].se, dev[k].se));
  // successive changes of the rescaled moment shrink
  double worst_stab = -INFINITY;
  for (std::size_t k = 2; k < sig.size(); ++k) {
    const double d_prev = std::abs(rescaled[k - 1].mean - rescaled[k - 2].mean);
    const double d_next = std::abs(rescaled[k].mean - rescaled[k - 1].mean);
    const double se = 3.0 * std::hypot(rescaled[k].se, rescaled[k - 1].se);
    worst_stab = std::max(worst_stab, d_next - d_prev - se);
  }
  if (sig.size() >= 2) out.add(assert_le("sigma_trend_deviation_monotone", worst_dev, 0.0));
  if (sig.size() >= 3) out.add(assert_le("sigma_trend_rescaled_stabilizing", worst_stab, 0.0));
  out.files.emplace_back("sigma_trend.csv", os.str());
  return out;
}

/// Stationary autocovariance ensemble and its limit covariance.
inline std::pair<AutocovCurve, LimitCovariance> estimate_limit_covariance(const CovarianceSpectrum& spec,
                                                                          long replicas, double horizon,
                                                                          double max_lag, double dt,
                                                                          double record_every, std::uint64_t seed,
                                                                          int threads) {
  const long steps = step_count(horizon, dt);
  const double h = horizon / static_cast<double>(steps);
  const long stride = std::max<long>(1, std::lround(record_every / h));
  const std::uint64_t fam = family_seed(seed, 7);
  auto ens = fan_out(static_cast<std::size_t>(replicas), threads, [&](std::size_t r) {
    Rng rng = make_stream(fam, r);
    const CoeffVector v0 = sample_invariant_exact(spec, 1, rng).col(0);
    return simulate_velocity(v0, spec, 1.0, horizon, h, rng, stride);
  });
  const double lag_step = ens.front().times[1] - ens.front().times[0];
  std::vector<double> lags;
  const long nl = std::lround(max_lag / lag_step);
  for (long l = 0; l <= nl; ++l) lags.push_back(ens.front().times[static_cast<std::size_t>(l)]);
  AutocovCurve curve = autocovariance(ens, lags, true);
  LimitCovariance lc = limit_covariance(curve);
  return {std::move(curve), std::move(lc)};
}

struct HomogenizeParams {
  CovarianceSpectrum spec;
  std::vector<double> sigmas{1.0, 2.0, 4.0, 8.0};
  long replicas = 2000;
  double dt = 0.01;
  double target_variance = 0.0;  ///< 0: derive 4/(d(d-1)) for isotropic d
  std::uint64_t seed = 1;
  int threads = 1;
};

inline double isotropic_limit_variance(std::size_t d) {
  require(d >= 2, ErrorKind::UnsupportedDimension, "limit variance needs d >= 2");
  return 4.0 / (static_cast<double>(d) * static_cast<double>(d - 1));
}

inline std::vector<SigmaEnsemble> homogenization_ensembles(const HomogenizeParams& p) {
  std::vector<SigmaEnsemble> ens;
  for (double s : p.sigmas) ens.push_back(rescaled_ensemble(p.spec, s, p.replicas, p.dt, p.seed, p.threads));
  return ens;
}

// ---------------------------------------------------------------- rough paths

/// Geometric defect of the C1 lift of an unrescaled kinetic path on [0,1]
/// with 2^fine and 2^(fine+1) steps driven by the same Brownian path.
inline std::pair<double, double> defect_pair(const CovarianceSpectrum& spec, double sigma, int fine, Rng& rng,
                                             int level = kDyadicLevel) {
  const std::size_t nf = std::size_t{1} << (fine + 1);
  const double hf = 1.0 / static_cast<double>(nf);
  const Eigen::Index n = spec.alpha.size();
  std::normal_distribution<double> normal;
  std::vector<CoeffVector> dw(nf, CoeffVector(n));
  for (auto& w : dw)
    for (Eigen::Index i = 0; i < n; ++i) w[i] = std::sqrt(hf) * spec.alpha[i] * normal(rng);
  const CoeffVector v0 = sample_invariant_exact(spec, 1, rng).col(0);
  auto run = [&](int coarsen) {
    const double h = hf * coarsen;
    VelocityStepper st(spec, sigma, h);
    LiftBuilder lift(n, level, 0.0, 1.0, LiftBuilder::Mode::Velocity);
    CoeffVector v = v0, x = CoeffVector::Zero(n), prev(n), inc(n);
    lift.push(0.0, x, v);
    for (std::size_t j = 0; j < nf / coarsen; ++j) {
      inc.setZero();
      for (int c = 0; c < coarsen; ++c) inc += dw[j * coarsen + c];
      prev = v;
      st.apply(v, inc);
      x += 0.5 * h * (prev + v);
      lift.push(static_cast<double>(j + 1) * h, x, v);
    }
    return geometric_defect(lift.finish());
  };
  return {run(2), run(1)};
}

struct RoughPathParams {
  CovarianceSpectrum spec;
  double sigma = 8.0;
  long replicas = 2000;
  double dt = 0.01;
  long oracle_samples = 10000;
  int oracle_fine_level = 10;
  int defect_fine_level = 10;
  int defect_replicas = 8;
  long autocov_replicas = 1000;
  double autocov_horizon = 200.0;  ///< long stationary runs keep the estimated C within a few percent
  double autocov_max_lag = 4.0;    ///< beyond this the integrand is noise; the tail fit covers the rest
  std::uint64_t seed = 1;
  int threads = 1;
};

/// Chen re-check on every lift, geometric-defect convergence order, and the
/// level-2 law of (X^sigma_1, A^{12}_{0,1}) against the Brownian rough path.
inline ExperimentOutput roughpath_check(const RoughPathParams& p, const SigmaEnsemble& ens) {
  ExperimentOutput out;
  require(p.spec.dim() >= 2, ErrorKind::UnsupportedDimension, "level-2 checks need N >= 2");
  std::size_t bad = 0, triples = 0;
  for (const auto& rp : ens.paths) {
    bad += chen_violations(rp);
    triples += (std::size_t{1} << rp.depth()) - 1;
  }
  out.add({"chen_bitwise_violations", static_cast<double>(bad), 0.0, bad == 0 && triples > 0});

  Rng drng = make_stream(family_seed(p.seed, 11), 0);
  double worst = 0.0;
  std::ostringstream df;
  df << "replica,defect_coarse,defect_fine,ratio\n";
  for (int r = 0; r < p.defect_replicas; ++r) {
    const auto [coarse, finer] = defect_pair(p.spec, 1.0, p.defect_fine_level, drng);
    const double ratio = coarse / finer;
    csv::Row(df) << r << coarse << finer << ratio;
    worst = std::max(worst, std::abs(ratio - 4.0));
  }
  out.add(assert_le("geometric_defect_ratio_deviation_from_4", worst, 1.0));

  auto [curve, lc] = estimate_limit_covariance(p.spec, p.autocov_replicas, p.autocov_horizon, p.autocov_max_lag,
                                                0.01, 0.05, p.seed, p.threads);
  const std::uint64_t ofam = family_seed(p.seed, 13);
  auto oracle = fan_out(static_cast<std::size_t>(p.oracle_samples), p.threads, [&](std::size_t r) {
    Rng rng = make_stream(ofam, r);
    const RoughLevel2 rp = brownian_rough_oracle(lc.C, p.oracle_fine_level, 0, rng);
    return std::array<double, 3>{rp.whole().X[0], rp.whole().X[1], rp.whole().area()(0, 1)};
  });
  std::ostringstream ks;
  ks << "# sigma=" << csv::num(ens.sigma) << " psd_defect=" << csv::num(lc.psd_defect)
     << " tail_rate=" << csv::num(lc.tail_rate) << '\n';
  ks << "stat,statistic,threshold\n";
  const char* names[3] = {"X1_1", "X2_1", "A12_01"};
  for (int k = 0; k < 3; ++k) {
    std::vector<double> a, b;
    for (const auto& rp : ens.paths) {
      const Level2& w = rp.whole();
      a.push_back(k < 2 ? w.X[k] : w.area()(0, 1));
    }
    for (const auto& o : oracle) b.push_back(o[static_cast<std::size_t>(k)]);
    const KsResult r = ks_statistic(Weighted1D::unweighted(a), Weighted1D::unweighted(b));
    csv::Row(ks) << names[k] << r.statistic << r.threshold;
    out.add(assert_le(std::string("level2_ks_") + names[k], r.statistic, r.threshold));
  }
  std::ostringstream ac, l1, l2, cov;
  write_autocov(ac, curve);
  write_level1(l1, ens.paths.front());
  write_level2(l2, ens.paths.front());
  cov << "mode_i,mode_j,value\n";
  for (Eigen::Index i = 0; i < lc.C.rows(); ++i)
    for (Eigen::Index j = 0; j < lc.C.cols(); ++j) csv::Row(cov) << static_cast<long>(i) << static_cast<long>(j) << lc.C(i, j);
  out.files.emplace_back("defect.csv", df.str());
  out.files.emplace_back("level2_ks.csv", ks.str());
  out.files.emplace_back("autocov.csv", ac.str());
  out.files.emplace_back("limit_covariance.csv", cov.str());
  out.files.emplace_back("level1.csv", l1.str());
  out.files.emplace_back("level2.csv", l2.str());
  return out;
}

// ---------------------------------------------------------------- development

/// Deterministic unit-L2 initial velocity for the geodesic experiment.
inline CoeffVector default_omega(std::size_t n, std::uint64_t seed) {
  Rng rng = make_stream(family_seed(seed, 17), 0);
  std::normal_distribution<double> normal;
  CoeffVector w(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = normal(rng);
  return w / w.norm();
}

struct GeodesicParams {
  int cutoff = 3;
  int grid = 64;
  double T = 1.0;
  double dt = 1e-3;
  bool zero_omega = false;
  long frame_steps = 100000;  ///< length of the separate orthogonality run
  std::uint64_t seed = 1;
};

inline ExperimentOutput geodesic_experiment(const GeodesicParams& p) {
  ExperimentOutput out;
  const TorusSetup ts(p.cutoff);
  const std::size_t n = ts.table.size();
  const CoeffVector omega = p.zero_omega ? CoeffVector::Zero(static_cast<Eigen::Index>(n)) : default_omega(n, p.seed);
  DevelopmentOptions opt;
  opt.T = p.T;
  opt.dt = p.dt;
  opt.grid = p.grid;
  opt.snapshot_times = {0.0, 0.5 * p.T, p.T};
  opt.keep_velocities = true;
  const DevelopmentRun run = run_geodesic(omega, ts.table, ts.gamma, opt);

  double e_min = INFINITY, e_max = -INFINITY;
  for (const auto& e : run.energy) {
    e_min = std::min(e_min, e.l2_energy);
    e_max = std::max(e_max, e.l2_energy);
  }
  out.add(assert_le("geodesic_energy_drift", e_max - e_min, 1e-8));
  out.add(assert_le("geodesic_energy_identity", run.max_energy_identity_error, 1e-10));
  out.add(assert_le("geodesic_orthogonality_defect", run.max_orthogonality_defect, 1e-10));
  const Eigen::MatrixXd G = ts.gamma.matrix(omega);
  const CoeffVector closed = (G * p.T).exp() * omega;
  const double cf_err = (run.velocities.back() - closed).norm();
  out.add(assert_le("geodesic_closed_form_error", cf_err, 1e-4));

  const FlowDiagnostics fd = flow_diagnostics(run.snapshots.back());
  if (p.zero_omega) {
    out.add(assert_le("geodesic_identity_displacement", fd.max_displacement, 0.0));
    // cell areas of the reference grid are exact only up to rounding
    out.add(assert_le("geodesic_volume_defect", fd.volume_defect, 1e-12));
  } else {
    out.add(assert_le("geodesic_volume_defect", fd.volume_defect, 0.01));
    // refinement: half the grid at twice the step must be worse
    DevelopmentOptions coarse = opt;
    coarse.grid = p.grid / 2;
    coarse.dt = 2.0 * p.dt;
    coarse.snapshot_times = {p.T};
    coarse.keep_velocities = false;
    coarse.marker_points = 0;
    const FlowDiagnostics fc = flow_diagnostics(run_geodesic(omega, ts.table, ts.gamma, coarse).snapshots.back());
    out.add(assert_le("geodesic_volume_defect_refinement", fd.volume_defect, fc.volume_defect));
  }
  // long frame-only run for the orthogonality invariant
  if (p.frame_steps > 0) {
    DevelopmentOptions fo;
    fo.dt = p.dt;
    fo.T = p.dt * static_cast<double>(p.frame_steps);
    fo.advect = false;
    fo.snapshot_times = {};
    const CoeffVector w = p.zero_omega ? default_omega(n, p.seed) : omega;
    const DevelopmentRun fr = run_geodesic(w, ts.table, ts.gamma, fo);
    out.add(assert_le("frame_orthogonality_defect_long_run", fr.max_orthogonality_defect, 1e-10));
  }

  std::ostringstream modes, st, ch, sn, mk, en;
  torus::write_mode_table(modes, ts.table);
  torus::write_structure(st, ts.c);
  torus::write_christoffel(ch, ts.gamma);
  write_snapshots(sn, run.snapshots);
  write_markers(mk, run.snapshots);
  en << "# dropped_mass=" << csv::num(ts.c.dropped_mass()) << '\n';
  write_energy(en, run.energy);
  out.files.emplace_back("modes.csv", modes.str());
  out.files.emplace_back("structure.csv", st.str());
  out.files.emplace_back("christoffel.csv", ch.str());
  out.files.emplace_back("snapshots.csv", sn.str());
  out.files.emplace_back("markers.csv", mk.str());
  out.files.emplace_back("energy.csv", en.str());
  return out;
}

struct KineticFlowParams {
  int cutoff = 3;
  double a = 1.0;
  double s = 2.0;
  double sigma = 1.0;
  int grid = 64;
  double T = 1.0;
  double dt = 1e-3;
  double sde_dt = 1e-3;
  long replicas = 2000;      ///< velocity replicas for the Q0 law
  double law_T = 10.0;       ///< horizon of those replicas
  std::uint64_t seed = 1;
  int threads = 1;
};

inline ExperimentOutput kinetic_flow(const KineticFlowParams& p) {
  ExperimentOutput out;
  const TorusSetup ts(p.cutoff);
  const CovarianceSpectrum spec = sobolev_spectrum(ts.table, p.a, p.s);
  const Eigen::Index n = spec.alpha.size();
  const CoeffVector v0 = unit_vector(n, 0);
  DevelopmentOptions opt;
  opt.T = p.T;
  opt.dt = p.dt;
  opt.grid = p.grid;
  opt.snapshot_times = {0.0, 0.5 * p.T, p.T};
  Rng rng = make_stream(family_seed(p.seed, 19), 0);
  const DevelopmentRun run = run_kinetic(p.sigma, spec, v0, ts.table, ts.gamma, opt, p.sde_dt, rng);

  const double lambda0 = spec.eigenvalues.minCoeff();
  const double qmax = std::pow(lambda0, -spec.s);
  double qlo = INFINITY, qhi = -INFINITY, ident = 0.0;
  const double kappa = p.sigma > 0.0 ? p.sigma * p.sigma : 1.0;
  for (const auto& e : run.energy) {
    qlo = std::min(qlo, e.q0);
    qhi = std::max(qhi, e.q0);
    const double expect = kappa * std::sqrt(e.q0);
    ident = std::max(ident, std::abs(e.l2_energy - expect) / expect);
  }
  out.add({"kinetic_q0_positive", qlo, 0.0, qlo > 0.0});
  out.add(assert_le("kinetic_q0_upper_bound", qhi, qmax));
  out.add(assert_le("kinetic_energy_identity", ident, 1e-10));
  out.add(assert_le("kinetic_orthogonality_defect", run.max_orthogonality_defect, 1e-10));

  // sigma = 0 reduces to the geodesic with omega = toL2(v0), bit for bit
  {
    DevelopmentOptions o0 = opt;
    Rng r0 = make_stream(family_seed(p.seed, 23), 0);
    const DevelopmentRun k0 = run_kinetic(0.0, spec, v0, ts.table, ts.gamma, o0, p.sde_dt, r0);
    const DevelopmentRun g0 = run_geodesic(to_l2(v0, spec), ts.table, ts.gamma, o0);
    bool same = k0.frame.O.size() == g0.frame.O.size() &&
                std::memcmp(k0.frame.O.data(), g0.frame.O.data(), sizeof(double) * k0.frame.O.size()) == 0 &&
                k0.snapshots.size() == g0.snapshots.size() && k0.energy.size() == g0.energy.size();
    for (std::size_t i = 0; same && i < k0.snapshots.size(); ++i)
      same = k0.snapshots[i].particles == g0.snapshots[i].particles && k0.snapshots[i].markers == g0.snapshots[i].markers;
    for (std::size_t i = 0; same && i < k0.energy.size(); ++i)
      same = std::bit_cast<std::uint64_t>(k0.energy[i].l2_energy) == std::bit_cast<std::uint64_t>(g0.energy[i].l2_energy);
    out.add({"sigma0_kinetic_equals_geodesic", same ? 0.0 : 1.0, 0.0, same});
  }

  // long-run law of Q0 against the pushforward of the invariant oracle
  const std::uint64_t fam = family_seed(p.seed, 29);
  const long steps = step_count(p.law_T, p.sde_dt);
  auto finals = fan_out(static_cast<std::size_t>(p.replicas), p.threads, [&](std::size_t r) {
    Rng rr = make_stream(fam, r);
    CoeffVector v = v0;
    VelocityStepper st(spec, 1.0, p.law_T / static_cast<double>(steps));
    double lo = INFINITY, hi = -INFINITY;
    for (long j = 0; j < steps; ++j) {
      st.step(rr, v);
      const double q = q0(v, spec);
      lo = std::min(lo, q);
      hi = std::max(hi, q);
    }
    return std::array<double, 3>{q0(v, spec), lo, hi};
  });
  Rng orng = make_stream(family_seed(p.seed, 31), 0);
  const WeightedSample oracle = sample_invariant_oracle_ess(spec, static_cast<double>(p.replicas), orng);
  Weighted1D ow;
  ow.weights = oracle.weights;
  for (std::size_t j = 0; j < oracle.size(); ++j) ow.values.push_back(q0(oracle.points.col(static_cast<Eigen::Index>(j)), spec));
  std::vector<double> qs;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& f : finals) {
    qs.push_back(f[0]);
    lo = std::min(lo, f[1]);
    hi = std::max(hi, f[2]);
  }
  const KsResult ks = ks_statistic(Weighted1D::unweighted(qs), ow);
  out.add(assert_le("q0_law_ks", ks.statistic, ks.threshold));
  out.add({"q0_ensemble_in_interval", hi, qmax, lo > 0.0 && hi <= qmax});

  std::ostringstream sp, sn, mk, en, kso;
  write_spectrum(sp, spec);
  write_snapshots(sn, run.snapshots);
  write_markers(mk, run.snapshots);
  en << "# " << spectrum_metadata(spec) << " dropped_mass=" << csv::num(ts.c.dropped_mass()) << '\n';
  write_energy(en, run.energy);
  kso << "stat,statistic,threshold,ess_sde,ess_oracle\n";
  csv::Row(kso) << "q0" << ks.statistic << ks.threshold << ks.ess_a << ks.ess_b;
  out.files.emplace_back("spectrum.csv", sp.str());
  out.files.emplace_back("snapshots.csv", sn.str());
  out.files.emplace_back("markers.csv", mk.str());
  out.files.emplace_back("energy.csv", en.str());
  out.files.emplace_back("q0_ks.csv", kso.str());
  return out;
}

// ---------------------------------------------------------------- dispatch

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"invariant-check", "mixing-rate", "homogenize",
                                              "roughpath-check", "geodesic",    "kinetic-flow"};
  return names;
}

/// Validates the configuration, applies experiment defaults and runs it.
inline ExperimentOutput dispatch(const ExperimentConfig& cfg) {
  const auto& names = experiment_names();
  require(std::find(names.begin(), names.end(), cfg.experiment) != names.end(), ErrorKind::UnknownExperiment,
          "unknown experiment '" + cfg.experiment + "'");
  require(cfg.replicas >= 0, ErrorKind::InvalidParameter, "replicas must be >= 0");
  require(cfg.T >= 0.0, ErrorKind::InvalidParameter, "T must be >= 0");
  require(cfg.dt >= 0.0, ErrorKind::InvalidStep, "dt must be positive");
  require(cfg.threads >= 1, ErrorKind::InvalidParameter, "threads must be >= 1");
  require(cfg.cutoff >= 1, ErrorKind::InvalidCutoff, "cutoff must be >= 1");
  for (double s : cfg.sigmas) require(s >= 0.0, ErrorKind::InvalidParameter, "sigma must be >= 0");
  auto pick = [](double v, double d) { return v > 0.0 ? v : d; };
  auto pickl = [](long v, long d) { return v > 0 ? v : d; };

  if (cfg.experiment == "invariant-check") {
    InvariantCheckParams p{config_spectrum(cfg)};
    p.coords = cfg.coords;
    p.replicas = pickl(cfg.replicas, 10000);
    p.T = pick(cfg.T, 20.0);
    p.dt = pick(cfg.dt, 1e-3);
    p.seed = cfg.seed;
    p.threads = cfg.threads;
    return invariant_check(p);
  }
  if (cfg.experiment == "mixing-rate") {
    MixingParams p{config_spectrum(cfg)};
    p.replicas = pickl(cfg.replicas, 2000);
    p.T = pick(cfg.T, 4.0);
    p.dt = pick(cfg.dt, 1e-3);
    p.seed = cfg.seed;
    p.threads = cfg.threads;
    return mixing_rate(p).out;
  }
  if (cfg.experiment == "homogenize") {
    ExperimentConfig c = cfg;
    if (c.alpha.empty() && c.isotropic == 0) c.isotropic = 4;
    HomogenizeParams p{config_spectrum(c)};
    if (!cfg.sigmas.empty()) p.sigmas = cfg.sigmas;
    for (double s : p.sigmas) require(s > 0.0, ErrorKind::InvalidParameter, "homogenize needs sigma > 0");
    p.replicas = pickl(cfg.replicas, 2000);
    p.dt = pick(cfg.dt, 0.01);
    p.seed = cfg.seed;
    p.threads = cfg.threads;
    require(c.isotropic >= 2, ErrorKind::UnsupportedDimension,
            "homogenize compares against the isotropic limit 4/(d(d-1)); pass --isotropic d >= 2");
    const auto ens = homogenization_ensembles(p);
    ExperimentOutput out = covariance_check(ens.back(), isotropic_limit_variance(p.spec.dim()), 0.10);
    out.append(moment_check(moment_table(ens)));
    out.append(sigma_trend_check(p.spec, ens, p.replicas, p.dt, p.seed, p.threads));
    return out;
  }
  if (cfg.experiment == "roughpath-check") {
    ExperimentConfig c = cfg;
    if (c.alpha.empty() && c.isotropic == 0) c.isotropic = 4;
    RoughPathParams p{config_spectrum(c)};
    p.sigma = cfg.sigmas.empty() ? 8.0 : cfg.sigmas.back();
    require(p.sigma > 0.0, ErrorKind::InvalidParameter, "roughpath-check needs sigma > 0");
    p.replicas = pickl(cfg.replicas, 2000);
    p.dt = pick(cfg.dt, 0.01);
    p.seed = cfg.seed;
    p.threads = cfg.threads;
    const SigmaEnsemble ens = rescaled_ensemble(p.spec, p.sigma, p.replicas, p.dt, p.seed, p.threads);
    return roughpath_check(p, ens);
  }
  if (cfg.experiment == "geodesic") {
    GeodesicParams p;
    p.cutoff = cfg.cutoff;
    p.grid = cfg.grid;
    p.T = pick(cfg.T, 1.0);
    p.dt = pick(cfg.dt, 1e-3);
    p.zero_omega = cfg.zero_omega;
    p.seed = cfg.seed;
    return geodesic_experiment(p);
  }
  KineticFlowParams p;
  p.cutoff = cfg.cutoff;
  p.a = cfg.a;
  p.s = cfg.s;
  p.sigma = cfg.sigmas.empty() ? 1.0 : cfg.sigmas.front();
  p.grid = cfg.grid;
  p.T = pick(cfg.T, 1.0);
  p.dt = pick(cfg.dt, 1e-3);
  p.replicas = pickl(cfg.replicas, 2000);
  p.seed = cfg.seed;
  p.threads = cfg.threads;
  return kinetic_flow(p);
}

/// Runs the configured experiment and writes its files plus report.txt
/// (each with the configuration echoed as `#` lines). Returns the exit status.
inline int run_experiment(const ExperimentConfig& cfg, std::vector<Assertion>* assertions = nullptr) {
  const ExperimentOutput out = dispatch(cfg);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  require(!ec, ErrorKind::Io, "cannot create output directory " + cfg.out);
  const auto header = cfg.lines();
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream f(fs::path(cfg.out) / name, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Io, "cannot write " + name);
    csv::write_preamble(f, header);
    f << body;
    require(static_cast<bool>(f), ErrorKind::Io, "write failed for " + name);
  };
  for (const auto& [name, body] : out.files) write(name, body);
  std::ostringstream rep;
  write_report(rep, out.assertions);
  write("report.txt", rep.str());
  if (assertions) *assertions = out.assertions;
  return exit_status(out.assertions);
}

}  // namespace kbm

#endif
