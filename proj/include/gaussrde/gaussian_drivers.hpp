#pragma once

// Gaussian driving signals: covariance functions, grid sampling by dense
// covariance factorization, discrete Karhunen-Loeve Cameron-Martin bases and
// piecewise-linear rough path lifts.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaussrde/parallel.hpp"
#include "gaussrde/tensor_algebra.hpp"

namespace gaussrde {

/// Thrown when a grid covariance cannot be factorized even after jitter.
class DegenerateCovariance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CovarianceKind { brownian, fbm, bridge, ornstein_uhlenbeck };

inline std::string to_string(CovarianceKind k) {
  switch (k) {
    case CovarianceKind::brownian: return "brownian";
    case CovarianceKind::fbm: return "fbm";
    case CovarianceKind::bridge: return "bridge";
    case CovarianceKind::ornstein_uhlenbeck: return "ornstein_uhlenbeck";
  }
  return "unknown";
}

inline constexpr const char* kSupportedKinds = "brownian, fbm, bridge, ornstein_uhlenbeck";

inline CovarianceKind covariance_kind_from_string(const std::string& s) {
  if (s == "brownian") return CovarianceKind::brownian;
  if (s == "fbm") return CovarianceKind::fbm;
  if (s == "bridge") return CovarianceKind::bridge;
  if (s == "ornstein_uhlenbeck") return CovarianceKind::ornstein_uhlenbeck;
  throw std::invalid_argument("unknown covariance kind '" + s + "'; supported kinds: " + kSupportedKinds);
}

struct CovarianceSpec {
  CovarianceKind kind = CovarianceKind::brownian;
  double hurst = 0.5;          // fbm only
  double bridge_return = 0.0;  // bridge only: the return time
  double horizon = 1.0;
  int components = 1;
  bool allow_degenerate = false;  // permits a bridge returning exactly at the horizon

  static CovarianceSpec brownian(double T = 1.0, int d = 1) {
    return {CovarianceKind::brownian, 0.5, 0.0, T, d, false};
  }
  static CovarianceSpec fbm(double H, double T = 1.0, int d = 1) {
    return {CovarianceKind::fbm, H, 0.0, T, d, false};
  }
  static CovarianceSpec bridge(double ret, double T = 1.0, int d = 1, bool degenerate = false) {
    return {CovarianceKind::bridge, 0.5, ret, T, d, degenerate};
  }
  static CovarianceSpec ornstein_uhlenbeck(double T = 1.0, int d = 1) {
    return {CovarianceKind::ornstein_uhlenbeck, 0.5, 0.0, T, d, false};
  }

  /// Empty when valid.
  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (!(horizon > 0.0) || !std::isfinite(horizon)) out.push_back("horizon must be a positive finite time");
    if (components < 1) out.push_back("components must be a positive integer");
    if (kind == CovarianceKind::fbm && !(hurst > 0.0 && hurst < 1.0))
      out.push_back("fbm hurst parameter must lie in (0, 1), got " + std::to_string(hurst));
    if (kind == CovarianceKind::bridge) {
      if (bridge_return < horizon)
        out.push_back("bridge return time " + std::to_string(bridge_return) + " must be >= horizon " +
                      std::to_string(horizon));
      else if (bridge_return == horizon && !allow_degenerate)
        out.push_back("bridge returning at the horizon is degenerate; set allow_degenerate to use it");
    }
    return out;
  }

  void validate() const {
    const auto p = problems();
    if (!p.empty()) throw std::invalid_argument(p.front());
  }
};

/// Single-component covariance R(s, t).
inline double covariance(const CovarianceSpec& spec, double s, double t) {
  if (s < 0.0 || t < 0.0 || s > spec.horizon || t > spec.horizon)
    throw std::invalid_argument("covariance time outside [0, T]");
  const double lo = std::min(s, t);
  const double hi = std::max(s, t);
  switch (spec.kind) {
    case CovarianceKind::brownian: return lo;
    case CovarianceKind::fbm: {
      if (spec.hurst == 0.5) return lo;
      const double h2 = 2.0 * spec.hurst;
      return 0.5 * (std::pow(s, h2) + std::pow(t, h2) - std::pow(hi - lo, h2));
    }
    case CovarianceKind::bridge: return lo * (1.0 - hi / spec.bridge_return);
    case CovarianceKind::ornstein_uhlenbeck:
      // int_0^lo e^{-(s-r)} e^{-(t-r)} dr
      return -0.5 * std::exp(-(hi - lo)) * std::expm1(-2.0 * lo);
  }
  return 0.0;
}

/// 0 = t_0 < ... < t_M = T, uniformly spaced.
inline std::vector<double> uniform_grid(double horizon, std::size_t intervals) {
  if (intervals < 1) throw std::invalid_argument("grid needs at least one interval");
  std::vector<double> g(intervals + 1);
  for (std::size_t j = 0; j <= intervals; ++j)
    g[j] = (j == intervals) ? horizon : horizon * static_cast<double>(j) / static_cast<double>(intervals);
  return g;
}

inline Eigen::MatrixXd covariance_matrix(const CovarianceSpec& spec, const std::vector<double>& times) {
  const auto n = static_cast<Eigen::Index>(times.size());
  Eigen::MatrixXd r(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) r(i, j) = r(j, i) = covariance(spec, times[i], times[j]);
  return r;
}

struct SampledDriver {
  std::vector<double> grid;
  Eigen::MatrixXd values;  // d x (M+1)
  std::uint64_t seed = 0;

  int dim() const { return static_cast<int>(values.rows()); }
  std::size_t intervals() const { return grid.size() - 1; }

  PiecewiseLinearPath path() const {
    std::vector<std::vector<double>> v(grid.size(), std::vector<double>(static_cast<std::size_t>(dim())));
    for (std::size_t j = 0; j < grid.size(); ++j)
      for (int i = 0; i < dim(); ++i) v[j][i] = values(i, static_cast<Eigen::Index>(j));
    return {grid, std::move(v)};
  }
};

/// Factorizes the grid covariance once and draws independent components.
/// Grid points with zero variance (t = 0, a bridge at its return time) are
/// deterministic zeros and are left out of the factorization.
class GaussianSampler {
 public:
  static constexpr int kMaxJitterRounds = 3;
  static constexpr double kJitterScale = 1e-12;

  GaussianSampler(CovarianceSpec spec, std::vector<double> grid) : spec_(std::move(spec)), grid_(std::move(grid)) {
    spec_.validate();
    if (grid_.size() < 2 || grid_.front() != 0.0)
      throw std::invalid_argument("grid must start at 0 and contain at least one interval");
    for (std::size_t j = 0; j < grid_.size(); ++j)
      if (covariance(spec_, grid_[j], grid_[j]) != 0.0) active_.push_back(j);
    std::vector<double> times;
    for (auto j : active_) times.push_back(grid_[j]);
    Eigen::MatrixXd r = covariance_matrix(spec_, times);
    const auto m = r.rows();
    if (m == 0) return;
    const double jitter = kJitterScale * r.trace() / static_cast<double>(m);
    for (int round = 0; round <= kMaxJitterRounds; ++round) {
      Eigen::LLT<Eigen::MatrixXd> llt(r);
      if (llt.info() == Eigen::Success) {
        factor_ = llt.matrixL();
        jitter_rounds_ = round;
        return;
      }
      r.diagonal().array() += jitter;
    }
    throw DegenerateCovariance("covariance matrix of " + to_string(spec_.kind) +
                               " on the grid is not factorizable after " +
                               std::to_string(kMaxJitterRounds) + " jitter rounds");
  }

  const CovarianceSpec& spec() const { return spec_; }
  const std::vector<double>& grid() const { return grid_; }
  int jitter_rounds() const { return jitter_rounds_; }

  SampledDriver sample(std::uint64_t seed) const {
    SampledDriver out;
    out.grid = grid_;
    out.seed = seed;
    out.values = Eigen::MatrixXd::Zero(spec_.components, static_cast<Eigen::Index>(grid_.size()));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto m = factor_.rows();
    Eigen::VectorXd z(m);
    for (int k = 0; k < spec_.components; ++k) {
      for (Eigen::Index i = 0; i < m; ++i) z[i] = normal(rng);
      const Eigen::VectorXd x = factor_.triangularView<Eigen::Lower>() * z;
      for (Eigen::Index i = 0; i < m; ++i) out.values(k, static_cast<Eigen::Index>(active_[i])) = x[i];
    }
    return out;
  }

 private:
  CovarianceSpec spec_;
  std::vector<double> grid_;
  std::vector<std::size_t> active_;
  Eigen::MatrixXd factor_;
  int jitter_rounds_ = 0;
};

/// Sample i uses seed stream_seed(master_seed, i).
inline std::vector<SampledDriver> sample_paths(const CovarianceSpec& spec, const std::vector<double>& grid,
                                               std::size_t n_samples, std::uint64_t master_seed, int workers = 1) {
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  const GaussianSampler sampler(spec, grid);
  std::vector<SampledDriver> out(n_samples);
  parallel_for(n_samples, workers, [&](std::size_t i) { out[i] = sampler.sample(stream_seed(master_seed, i)); });
  return out;
}

/// One row per grid point: time, then s<i>_x<k> for each sample and component.
inline void write_samples_csv(std::ostream& os, const std::vector<SampledDriver>& batch) {
  if (batch.empty()) return;
  os << "time";
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (int k = 0; k < batch[i].dim(); ++k) os << ",s" << i << "_x" << k;
  os << "\n";
  os.precision(17);
  for (std::size_t j = 0; j < batch.front().grid.size(); ++j) {
    os << batch.front().grid[j];
    for (const auto& s : batch)
      for (int k = 0; k < s.dim(); ++k) os << "," << s.values(k, static_cast<Eigen::Index>(j));
    os << "\n";
  }
}

struct NondegeneracyResult {
  bool positive_definite = false;
  double min_eigenvalue = 0.0;
  std::vector<double> times;
  std::vector<double> null_direction;  // empty on pass
};

/// Strict positive definiteness of (R(t_i, t_j)). Pivots below
/// 1e-14 * max diagonal count as failure.
inline NondegeneracyResult nondegeneracy_check(const CovarianceSpec& spec, const std::vector<double>& times) {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] > 0.0) || times[i] > spec.horizon)
      throw std::invalid_argument("nondegeneracy times must lie in (0, T]");
    if (i > 0 && !(times[i] > times[i - 1])) throw std::invalid_argument("nondegeneracy times must increase");
  }
  NondegeneracyResult res;
  res.times = times;
  const Eigen::MatrixXd r = covariance_matrix(spec, times);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r);
  res.min_eigenvalue = eig.eigenvalues()(0);
  const Eigen::LLT<Eigen::MatrixXd> llt(r);
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    const double scale = r.diagonal().maxCoeff();
    const Eigen::MatrixXd l = llt.matrixL();
    ok = (l.diagonal().array().square() > 1e-14 * scale).all();
  }
  res.positive_definite = ok;
  if (!ok) {
    const Eigen::VectorXd v = eig.eigenvectors().col(0);
    res.null_direction.assign(v.data(), v.data() + v.size());
  }
  return res;
}

/// Discrete Karhunen-Loeve basis. Scalar mode n takes values
/// sqrt(lambda_n) phi_n on the grid; the R^d basis is block-diagonal, mode
/// q = n * d + k living in component k.
struct CameronMartinBasis {
  std::vector<double> grid;
  int components = 1;
  Eigen::VectorXd eigenvalues;  // decreasing
  Eigen::MatrixXd modes;        // (M+1) x n
  std::vector<std::string> warnings;

  std::size_t scalar_modes() const { return static_cast<std::size_t>(modes.cols()); }
  std::size_t mode_count() const { return scalar_modes() * static_cast<std::size_t>(components); }
  int mode_component(std::size_t q) const { return static_cast<int>(q % static_cast<std::size_t>(components)); }
  std::size_t mode_index(std::size_t q) const { return q / static_cast<std::size_t>(components); }

  /// R^d-valued mode q on the grid, d x (M+1).
  Eigen::MatrixXd mode(std::size_t q) const {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(components, modes.rows());
    h.row(mode_component(q)) = modes.col(static_cast<Eigen::Index>(mode_index(q))).transpose();
    return h;
  }

  /// sum_n h_n(s) h_n(t) on grid indices.
  double reconstructed_covariance(std::size_t i, std::size_t j) const {
    return modes.row(static_cast<Eigen::Index>(i)).dot(modes.row(static_cast<Eigen::Index>(j)));
  }
};

namespace detail {

struct GridSpectrum {
  std::vector<std::size_t> active;
  Eigen::VectorXd eigenvalues;  // decreasing
  Eigen::MatrixXd eigenvectors;
  Eigen::MatrixXd covariance;
};

inline GridSpectrum grid_spectrum(const CovarianceSpec& spec, const std::vector<double>& grid) {
  GridSpectrum gs;
  for (std::size_t j = 0; j < grid.size(); ++j)
    if (covariance(spec, grid[j], grid[j]) != 0.0) gs.active.push_back(j);
  std::vector<double> times;
  for (auto j : gs.active) times.push_back(grid[j]);
  gs.covariance = covariance_matrix(spec, times);
  if (gs.covariance.rows() == 0) {
    gs.eigenvalues.resize(0);
    gs.eigenvectors.resize(0, 0);
    return gs;
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gs.covariance);
  gs.eigenvalues = eig.eigenvalues().reverse();
  gs.eigenvectors = eig.eigenvectors().rowwise().reverse();
  return gs;
}

inline CameronMartinBasis build_basis(const CovarianceSpec& spec, const std::vector<double>& grid,
                                      const GridSpectrum& gs, std::size_t n_modes) {
  CameronMartinBasis b;
  b.grid = grid;
  b.components = spec.components;
  const double top = gs.eigenvalues.size() > 0 ? gs.eigenvalues(0) : 0.0;
  const double tol = 1e-12 * std::max(top, 0.0);
  std::size_t usable = 0;
  while (usable < static_cast<std::size_t>(gs.eigenvalues.size()) && gs.eigenvalues(static_cast<Eigen::Index>(usable)) > tol)
    ++usable;
  if (n_modes > usable) {
    b.warnings.push_back("requested " + std::to_string(n_modes) + " modes but only " + std::to_string(usable) +
                         " eigenvalues exceed tolerance; dropped " + std::to_string(n_modes - usable));
    n_modes = usable;
  }
  const auto n = static_cast<Eigen::Index>(n_modes);
  b.eigenvalues = gs.eigenvalues.head(n);
  b.modes = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid.size()), n);
  for (Eigen::Index q = 0; q < n; ++q) {
    const double s = std::sqrt(gs.eigenvalues(q));
    Eigen::VectorXd phi = gs.eigenvectors.col(q);
    // sign convention: positive sum so modes are reproducible across platforms
    if (phi.sum() < 0.0) phi = -phi;
    for (std::size_t a = 0; a < gs.active.size(); ++a)
      b.modes(static_cast<Eigen::Index>(gs.active[a]), q) = s * phi(static_cast<Eigen::Index>(a));
  }
  return b;
}

}  // namespace detail

/// n_modes scalar modes per component (at most the grid size).
inline CameronMartinBasis cameron_martin_basis(const CovarianceSpec& spec, const std::vector<double>& grid,
                                               std::size_t n_modes) {
  spec.validate();
  if (n_modes > grid.size()) throw std::invalid_argument("n_modes exceeds grid size");
  return detail::build_basis(spec, grid, detail::grid_spectrum(spec, grid), n_modes);
}

/// Smallest mode count whose eigenvalues capture `fraction` of the trace.
inline CameronMartinBasis cameron_martin_basis_by_fraction(const CovarianceSpec& spec,
                                                           const std::vector<double>& grid, double fraction = 0.999) {
  spec.validate();
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("variance fraction must lie in (0, 1]");
  const auto gs = detail::grid_spectrum(spec, grid);
  const double total = gs.eigenvalues.sum();
  std::size_t n = 0;
  double acc = 0.0;
  while (n < static_cast<std::size_t>(gs.eigenvalues.size()) && acc < fraction * total) {
    acc += gs.eigenvalues(static_cast<Eigen::Index>(n));
    ++n;
  }
  return detail::build_basis(spec, grid, gs, n);
}

/// Gram matrix <h_n, h_m>_H of the scalar modes under the discrete
/// reproducing-kernel pairing h^T R^{-1} h' on the positive-variance grid points.
inline Eigen::MatrixXd cameron_martin_gram(const CameronMartinBasis& basis, const CovarianceSpec& spec) {
  const auto gs = detail::grid_spectrum(spec, basis.grid);
  Eigen::MatrixXd h(static_cast<Eigen::Index>(gs.active.size()), basis.modes.cols());
  for (std::size_t a = 0; a < gs.active.size(); ++a) h.row(static_cast<Eigen::Index>(a)) = basis.modes.row(static_cast<Eigen::Index>(gs.active[a]));
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(gs.covariance);
  return h.transpose() * ldlt.solve(h);
}

/// Piecewise-linear lift: per-interval signature increments at level N.
struct RoughDrive {
  SampledDriver driver;
  PiecewiseLinearPath path;
  int level = 2;
  std::vector<GroupElement> increments;

  GroupElement signature_until(std::size_t index) const {
    GroupElement g = GroupElement::identity(path.dim(), level);
    for (std::size_t j = 0; j < index; ++j) g = g * increments[j];
    return g;
  }
  GroupElement signature() const { return signature_until(increments.size()); }
};

inline RoughDrive lift(const SampledDriver& driver, int level) {
  if (level < 2) throw std::invalid_argument("lift level must be >= 2");
  RoughDrive r;
  r.driver = driver;
  r.path = driver.path();
  r.level = level;
  r.increments.reserve(r.path.segments());
  for (std::size_t j = 0; j < r.path.segments(); ++j) {
    const auto dx = r.path.increment(j);
    r.increments.push_back(segment_signature(dx, level));
  }
  return r;
}

/// Deterministic drive from an R^d curve sampled on a grid.
template <class Curve>
SampledDriver sampled_curve(const std::vector<double>& grid, int dim, Curve&& curve) {
  SampledDriver s;
  s.grid = grid;
  s.values.resize(dim, static_cast<Eigen::Index>(grid.size()));
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const Eigen::VectorXd v = curve(grid[j]);
    s.values.col(static_cast<Eigen::Index>(j)) = v;
  }
  return s;
}

inline double p_variation(const RoughDrive& drive, double p, int depth = 8) {
  return p_variation(drive.path, drive.level, p, depth);
}

}  // namespace gaussrde
