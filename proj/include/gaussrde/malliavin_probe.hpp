#pragma once

// Monte-Carlo estimates of the reduced covariance C_t and the Malliavin
// matrix sigma_t over a discrete Cameron-Martin basis.
//
//   C_t     = sum_q v_q v_q^T,  v_q = int_0^t J_{0<-s} V_k(Y_s) dh_q^k(s)
//   sigma_t = sum_q w_q w_q^T,  w_q = int_0^t J_{t<-s} V_k(Y_s) dh_q^k(s)
//
// and sigma_t = J_{t<-0} C_t J_{t<-0}^T is checked per sample.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaussrde/gaussian_drivers.hpp"
#include "gaussrde/parallel.hpp"
#include "gaussrde/rde_solver.hpp"

namespace gaussrde {

/// sum_i sum_{s < t} f_i(s) (h^i_{s+1} - h^i_s). f holds one e x (M+1)
/// matrix per driver component, h is d x (M+1).
inline Eigen::VectorXd young_integral(const std::vector<Eigen::MatrixXd>& f, const Eigen::MatrixXd& h,
                                      std::size_t t_index) {
  if (static_cast<Eigen::Index>(f.size()) != h.rows())
    throw std::invalid_argument("integrand and integrator have different component counts");
  if (f.empty()) throw std::invalid_argument("young integral needs at least one component");
  const Eigen::Index e = f.front().rows();
  for (const auto& fi : f)
    if (fi.cols() != h.cols() || fi.rows() != e) throw std::invalid_argument("integrand and integrator grids differ");
  if (static_cast<Eigen::Index>(t_index) >= h.cols()) throw std::invalid_argument("evaluation index beyond the grid");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(e);
  for (std::size_t i = 0; i < f.size(); ++i)
    for (std::size_t s = 0; s < t_index; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      acc += f[i].col(si) * (h(static_cast<Eigen::Index>(i), si + 1) - h(static_cast<Eigen::Index>(i), si));
    }
  return acc;
}

/// Grid index of time t, which must be a grid point.
inline std::size_t grid_index(const std::vector<double>& grid, double t) {
  const double T = grid.back();
  if (t < 0.0 || t > T * (1.0 + 1e-12)) throw std::invalid_argument("evaluation time outside the grid");
  const auto it = std::min_element(grid.begin(), grid.end(),
                                   [t](double a, double b) { return std::abs(a - t) < std::abs(b - t); });
  if (std::abs(*it - t) > 1e-9 * std::max(T, 1.0)) throw std::invalid_argument("evaluation time is not a grid point");
  return static_cast<std::size_t>(it - grid.begin());
}

inline PiecewiseLinearPath truncate_path(const PiecewiseLinearPath& path, std::size_t index) {
  if (index >= path.segments()) return path;
  std::vector<double> k(path.knots().begin(), path.knots().begin() + static_cast<std::ptrdiff_t>(index) + 1);
  std::vector<std::vector<double>> v(path.values().begin(), path.values().begin() + static_cast<std::ptrdiff_t>(index) + 1);
  return {std::move(k), std::move(v)};
}

inline double frobenius_rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-14) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

struct MalliavinSample {
  std::uint64_t seed = 0;
  Eigen::VectorXd y_t;
  Eigen::MatrixXd jacobian;             // J_{t<-0}
  Eigen::MatrixXd reduced;              // C_t
  Eigen::MatrixXd sigma;                // from J_{t<-s}
  Eigen::MatrixXd sigma_conjugated;     // J C_t J^T
  Eigen::VectorXd eigenvalues;          // of sigma, increasing
  Eigen::VectorXd reduced_eigenvalues;  // of C_t, increasing
  double determinant = 0.0;
  double reduced_determinant = 0.0;
  double cross_check_error = 0.0;  // relative Frobenius
  double determinant_error = 0.0;  // |det sigma - det(J)^2 det C| relative
  double symmetry_error = 0.0;
  bool cross_check_ok = true;
  bool degenerate = false;

  double min_eigenvalue() const { return eigenvalues.size() ? eigenvalues(0) : 0.0; }
};

struct MalliavinOptions {
  int depth = 3;                   // Euler depth m
  double threshold = 1e-12;        // degenerate iff min eig < threshold * max(1, trace)
  double cross_check_tol = 1e-6;   // relative
};

/// Both matrices at grid index t_index for one drive.
inline MalliavinSample malliavin_sample(const PolyVectorFieldSet& v, const Eigen::VectorXd& y0,
                                        const PiecewiseLinearPath& full_path, const CameronMartinBasis& basis,
                                        std::size_t t_index, const MalliavinOptions& opt = {}) {
  if (basis.components != v.driver_dim()) throw std::invalid_argument("basis components do not match the fields");
  if (basis.grid.size() != full_path.knots().size()) throw std::invalid_argument("basis grid does not match the drive");
  if (t_index >= basis.grid.size()) throw std::invalid_argument("evaluation index beyond the grid");
  const Eigen::Index e = v.state_dim;
  const int d = v.driver_dim();
  MalliavinSample out;
  const auto t = static_cast<Eigen::Index>(t_index);
  out.reduced = Eigen::MatrixXd::Zero(e, e);
  out.sigma = Eigen::MatrixXd::Zero(e, e);
  if (t_index == 0) {
    out.y_t = y0;
    out.jacobian = Eigen::MatrixXd::Identity(e, e);
  } else {
    const Trajectory tr = jacobian_flow(v, y0, truncate_path(full_path, t_index), opt.depth);
    out.y_t = tr.y[t_index];
    out.jacobian = tr.jac_forward[t_index];
    // increments of the scalar modes, t x n
    const Eigen::MatrixXd dh = basis.modes.middleRows(1, t) - basis.modes.topRows(t);
    for (int k = 0; k < d; ++k) {
      Eigen::MatrixXd adapted(e, t), anticipating(e, t);
      for (Eigen::Index s = 0; s < t; ++s) {
        const Eigen::VectorXd vk = v[k].evaluate(tr.y[static_cast<std::size_t>(s)]);
        adapted.col(s) = tr.jac_inverse[static_cast<std::size_t>(s)] * vk;
        anticipating.col(s) = tr.jacobian_between(t_index, static_cast<std::size_t>(s)) * vk;
      }
      const Eigen::MatrixXd vq = adapted * dh;
      const Eigen::MatrixXd wq = anticipating * dh;
      out.reduced += vq * vq.transpose();
      out.sigma += wq * wq.transpose();
    }
  }
  out.sigma_conjugated = out.jacobian * out.reduced * out.jacobian.transpose();
  out.cross_check_error = frobenius_rel_diff(out.sigma, out.sigma_conjugated);
  out.cross_check_ok = out.cross_check_error <= opt.cross_check_tol;
  out.symmetry_error = std::max((out.sigma - out.sigma.transpose()).cwiseAbs().maxCoeff(),
                                (out.reduced - out.reduced.transpose()).cwiseAbs().maxCoeff());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.sigma, Eigen::EigenvaluesOnly);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ec(out.reduced, Eigen::EigenvaluesOnly);
  out.eigenvalues = es.eigenvalues();
  out.reduced_eigenvalues = ec.eigenvalues();
  out.determinant = out.sigma.determinant();
  out.reduced_determinant = out.reduced.determinant();
  const double jdet = out.jacobian.determinant();
  const double rhs = jdet * jdet * out.reduced_determinant;
  out.determinant_error = std::abs(out.determinant - rhs) / std::max({std::abs(out.determinant), std::abs(rhs), 1e-300});
  const double limit = opt.threshold * std::max(1.0, out.sigma.trace());
  out.degenerate = out.min_eigenvalue() < limit;
  return out;
}

inline Eigen::MatrixXd reduced_covariance(const PolyVectorFieldSet& v, const Eigen::VectorXd& y0,
                                          const RoughDrive& drive, const CameronMartinBasis& basis, double t,
                                          int m = 3) {
  return malliavin_sample(v, y0, drive.path, basis, grid_index(basis.grid, t), {m}).reduced;
}

inline Eigen::MatrixXd malliavin_matrix(const PolyVectorFieldSet& v, const Eigen::VectorXd& y0,
                                        const RoughDrive& drive, const CameronMartinBasis& basis, double t,
                                        int m = 3) {
  return malliavin_sample(v, y0, drive.path, basis, grid_index(basis.grid, t), {m}).sigma;
}

/// Linear-interpolation quantile of a sorted sample.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline const std::vector<double>& report_quantile_levels() {
  static const std::vector<double> levels{0.0, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 1.0};
  return levels;
}

struct DensityProbeConfig {
  CovarianceSpec driver;
  PolyVectorFieldSet fields;
  Eigen::VectorXd y0;
  std::size_t grid_intervals = 512;
  int level = 2;                  // lift level N
  int depth = 3;                  // Euler depth m
  std::size_t basis_modes = 0;    // scalar modes per component; 0 selects by variance fraction
  double variance_fraction = 0.999;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct MalliavinReport {
  double t = 0.0;
  double threshold = 0.0;
  std::size_t basis_modes = 0;
  std::vector<std::string> basis_warnings;
  std::vector<MalliavinSample> samples;  // valid samples, in sample order
  std::vector<std::size_t> sample_index;
  std::vector<std::uint64_t> exploded_seeds;
  std::size_t requested = 0;
  std::size_t degenerate = 0;
  std::size_t cross_check_failures = 0;
  double max_cross_check_error = 0.0;
  double max_determinant_error = 0.0;
  double max_symmetry_error = 0.0;
  double min_eigenvalue_overall = 0.0;
  std::vector<double> min_eigenvalue_quantiles;  // at report_quantile_levels()

  std::size_t valid() const { return samples.size(); }
  double degenerate_fraction() const {
    return samples.empty() ? std::numeric_limits<double>::quiet_NaN()
                           : static_cast<double>(degenerate) / static_cast<double>(samples.size());
  }

  /// sample, seed, y_t..., eigenvalues..., degenerate
  void write_csv(std::ostream& os) const {
    if (samples.empty()) return;
    const Eigen::Index e = samples.front().eigenvalues.size();
    os << "sample,seed";
    for (Eigen::Index i = 0; i < e; ++i) os << ",y" << i;
    for (Eigen::Index i = 0; i < e; ++i) os << ",lambda" << i;
    os << ",degenerate\n";
    os.precision(17);
    for (std::size_t s = 0; s < samples.size(); ++s) {
      os << sample_index[s] << "," << samples[s].seed;
      for (Eigen::Index i = 0; i < e; ++i) os << "," << samples[s].y_t[i];
      for (Eigen::Index i = 0; i < e; ++i) os << "," << samples[s].eigenvalues[i];
      os << "," << (samples[s].degenerate ? 1 : 0) << "\n";
    }
  }
};

inline CameronMartinBasis probe_basis(const DensityProbeConfig& cfg, const std::vector<double>& grid) {
  return cfg.basis_modes == 0 ? cameron_martin_basis_by_fraction(cfg.driver, grid, cfg.variance_fraction)
                              : cameron_martin_basis(cfg.driver, grid, cfg.basis_modes);
}

/// Per-sample C_t and sigma_t over n_samples drives; sample i uses seed
/// stream_seed(cfg.seed, i). Exploding samples are excluded and counted.
inline MalliavinReport density_probe(const DensityProbeConfig& cfg, std::size_t n_samples, double t,
                                     double threshold = 1e-12) {
  if (n_samples < 1) throw std::invalid_argument("density probe needs at least one sample");
  if (cfg.driver.components != cfg.fields.driver_dim())
    throw std::invalid_argument("driver has " + std::to_string(cfg.driver.components) + " components but there are " +
                                std::to_string(cfg.fields.driver_dim()) + " fields");
  const auto grid = uniform_grid(cfg.driver.horizon, cfg.grid_intervals);
  const std::size_t t_index = grid_index(grid, t);
  const GaussianSampler sampler(cfg.driver, grid);
  const CameronMartinBasis basis = probe_basis(cfg, grid);
  const MalliavinOptions opt{cfg.depth, threshold, 1e-6};

  std::vector<std::optional<MalliavinSample>> slots(n_samples);
  std::vector<std::uint64_t> seeds(n_samples);
  parallel_for(n_samples, cfg.workers, [&](std::size_t i) {
    seeds[i] = stream_seed(cfg.seed, i);
    const RoughDrive drive = lift(sampler.sample(seeds[i]), cfg.level);
    try {
      MalliavinSample s = malliavin_sample(cfg.fields, cfg.y0, drive.path, basis, t_index, opt);
      s.seed = seeds[i];
      slots[i] = std::move(s);
    } catch (const NumericalExplosion&) {
      slots[i].reset();
    }
  });

  MalliavinReport rep;
  rep.t = t;
  rep.threshold = threshold;
  rep.basis_modes = basis.scalar_modes();
  rep.basis_warnings = basis.warnings;
  rep.requested = n_samples;
  std::vector<double> mins;
  rep.min_eigenvalue_overall = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n_samples; ++i) {
    if (!slots[i]) {
      rep.exploded_seeds.push_back(seeds[i]);
      continue;
    }
    const auto& s = *slots[i];
    if (s.degenerate) ++rep.degenerate;
    if (!s.cross_check_ok) ++rep.cross_check_failures;
    rep.max_cross_check_error = std::max(rep.max_cross_check_error, s.cross_check_error);
    rep.max_determinant_error = std::max(rep.max_determinant_error, s.determinant_error);
    rep.max_symmetry_error = std::max(rep.max_symmetry_error, s.symmetry_error);
    rep.min_eigenvalue_overall = std::min({rep.min_eigenvalue_overall, s.min_eigenvalue(),
                                           s.reduced_eigenvalues.size() ? s.reduced_eigenvalues(0) : 0.0});
    mins.push_back(s.min_eigenvalue());
    rep.samples.push_back(s);
    rep.sample_index.push_back(i);
  }
  std::sort(mins.begin(), mins.end());
  for (double q : report_quantile_levels()) rep.min_eigenvalue_quantiles.push_back(sorted_quantile(mins, q));
  if (mins.empty()) rep.min_eigenvalue_overall = std::numeric_limits<double>::quiet_NaN();
  return rep;
}

}  // namespace gaussrde
