#pragma once

// Small-time behaviour: bracket Taylor coefficients of J_{0<-t} W(y_t) and
// their remainder order, the covariance scaling defect against a
// fractional Brownian motion, and the dilated small-time support probe.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaussrde/gaussian_drivers.hpp"
#include "gaussrde/lie_hormander.hpp"
#include "gaussrde/malliavin_probe.hpp"
#include "gaussrde/parallel.hpp"
#include "gaussrde/rde_solver.hpp"
#include "gaussrde/tensor_algebra.hpp"

namespace gaussrde {

struct ExpansionReport {
  int m = 0;
  int driver_dim = 0;
  // coefficients[k][word] = [V_w1, ..., V_wk, W](y0); level 0 is W(y0)
  std::vector<std::vector<Eigen::VectorXd>> coefficients;
  std::vector<double> times;
  std::vector<double> remainders;
  std::vector<double> fitted_times;  // remainders above the noise floor
  double slope = std::numeric_limits<double>::quiet_NaN();
  double fit_residual = std::numeric_limits<double>::quiet_NaN();
  double noise_floor = 0.0;
  bool vacuous = false;  // scheme exact for this system: no slope is reported
  bool meets_contract = false;

  /// sum_k pi_k(g) . coefficients[k] for k <= m.
  Eigen::VectorXd expansion(const TruncatedTensor& g) const {
    Eigen::VectorXd acc = coefficients[0][0];
    for (int k = 1; k <= m; ++k) acc += contract_evaluated(g, k + 1, coefficients);
    return acc;
  }
};

inline ExpansionReport taylor_coefficients(const PolyVectorFieldSet& v, const PolyVectorField& w,
                                           const Eigen::VectorXd& y0, int m) {
  if (m < 1) throw std::invalid_argument("expansion order must be >= 1");
  if (y0.size() != v.state_dim || w.dim() != v.state_dim)
    throw std::invalid_argument("y0 and W must match the state dimension");
  ExpansionReport rep;
  rep.m = m;
  rep.driver_dim = v.driver_dim();
  rep.coefficients = evaluate_nested(nested_brackets(v, w, m), y0);
  return rep;
}

/// Least-squares slope of log y against log x, with RMS residual.
inline std::pair<double, double> loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::log(x[i]), b = std::log(y[i]);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double icpt = (sy - slope * sx) / static_cast<double>(n);
  double res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::log(y[i]) - (icpt + slope * std::log(x[i]));
    res += r * r;
  }
  return {slope, std::sqrt(res / static_cast<double>(n))};
}

using Curve = std::function<Eigen::VectorXd(double)>;

struct RemainderOptions {
  std::vector<int> dyadic_exponents{3, 4, 5, 6, 7, 8};  // t = 2^-j, past the pre-asymptotic range
  std::size_t steps = 256;                              // solver intervals on [0, t]
  int solver_depth = 5;
  double noise_floor = 1e-13;  // relative to max(1, |W(y0)|)
};

/// |z3_t - W(y0) - sum_{k<=m} X^k_{0,t} . [V,..,V,W](y0)| over t = 2^-j
/// for a smooth curve sampled finely on [0, t]; fits the log-log slope.
inline ExpansionReport remainder_slope(const PolyVectorFieldSet& v, const PolyVectorField& w,
                                       const Eigen::VectorXd& y0, const Curve& curve, int m, double p,
                                       const RemainderOptions& opt = {}) {
  if (!(p >= 1.0)) throw std::invalid_argument("p must be >= 1");
  if (!(m > p - 1.0)) throw std::invalid_argument("remainder order needs m > p - 1");
  ExpansionReport rep = taylor_coefficients(v, w, y0, m);
  rep.noise_floor = opt.noise_floor * std::max(1.0, rep.coefficients[0][0].norm());
  const int d = v.driver_dim();
  std::vector<double> fit_r;
  for (int j : opt.dyadic_exponents) {
    const double t = std::ldexp(1.0, -j);
    const auto grid = uniform_grid(t, opt.steps);
    const SampledDriver drv = sampled_curve(grid, d, curve);
    const PiecewiseLinearPath path = drv.path();
    const Trajectory tr = bracket_transport(v, w, y0, path, opt.solver_depth);
    const double r = (tr.transport.back() - rep.expansion(signature(path, m).tensor())).norm();
    rep.times.push_back(t);
    rep.remainders.push_back(r);
    if (r > rep.noise_floor) {
      rep.fitted_times.push_back(t);
      fit_r.push_back(r);
    }
  }
  if (fit_r.size() < 2) {
    rep.vacuous = true;
    return rep;
  }
  const auto [slope, res] = loglog_fit(rep.fitted_times, fit_r);
  rep.slope = slope;
  rep.fit_residual = res;
  rep.meets_contract = slope >= (m + 1) / p - 0.2;
  return rep;
}

/// E[(X_s - B_s)(X_t - B_t)] under the natural coupling of X with the
/// comparison fBm B: X = B for brownian and fbm, X_t = int e^{-(t-r)} dB_r
/// for the OU process, X_t = B_t - (t / T') B_T' for the bridge.
inline double coupled_difference_covariance(const CovarianceSpec& spec, double hurst, double s, double t) {
  switch (spec.kind) {
    case CovarianceKind::brownian:
      if (hurst != 0.5) throw std::invalid_argument("brownian compares only against H = 1/2");
      return 0.0;
    case CovarianceKind::fbm:
      if (hurst != spec.hurst) throw std::invalid_argument("fbm compares only against its own Hurst parameter");
      return 0.0;
    case CovarianceKind::ornstein_uhlenbeck: {
      if (hurst != 0.5) throw std::invalid_argument("OU compares only against H = 1/2");
      // int_0^min (e^{-(s-r)} - 1)(e^{-(t-r)} - 1) dr
      const double lo = std::min(s, t);
      const double rx = covariance(spec, s, t);
      const double cross = std::exp(-s) * std::expm1(lo) + std::exp(-t) * std::expm1(lo);
      return rx - cross + lo;
    }
    case CovarianceKind::bridge:
      if (hurst != 0.5) throw std::invalid_argument("bridge compares only against H = 1/2");
      return s * t / spec.bridge_return;
  }
  return 0.0;
}

struct DefectPoint {
  int n = 0;
  double defect = 0.0;
};

/// n^{2H} sup_{[0,1/n]^2} |R_{X-B}| on a subgrid x subgrid lattice.
inline std::vector<DefectPoint> scaling_defect(const CovarianceSpec& spec, double hurst, const std::vector<int>& n_list,
                                               int subgrid = 64) {
  spec.validate();
  if (subgrid < 1) throw std::invalid_argument("subgrid must be positive");
  std::vector<DefectPoint> out;
  for (int n : n_list) {
    if (n < 1) throw std::invalid_argument("n must be positive");
    const double h = 1.0 / n;
    if (h > spec.horizon) throw std::invalid_argument("1/n exceeds the horizon");
    double sup = 0.0;
    for (int a = 1; a <= subgrid; ++a)
      for (int b = 1; b <= subgrid; ++b) {
        const double s = (a == subgrid) ? h : h * a / subgrid;
        const double t = (b == subgrid) ? h : h * b / subgrid;
        sup = std::max(sup, std::abs(coupled_difference_covariance(spec, hurst, s, t)));
      }
    out.push_back({n, std::pow(static_cast<double>(n), 2.0 * hurst) * sup});
  }
  return out;
}

/// {unit, exp(e_1), exp(random Lie element up to level 2)}.
inline std::vector<GroupElement> default_support_targets(int d, int level, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::vector<GroupElement> t;
  t.push_back(GroupElement::identity(d, level));
  t.push_back(GroupElement::exp(TruncatedTensor::letter(d, level, 0)));
  TruncatedTensor lie = random_lie_element(d, std::min(level, 2), rng, 0.5);
  t.push_back(GroupElement::exp(lie.truncated(level)));
  return t;
}

struct SupportProbeConfig {
  CovarianceSpec driver;
  double hurst = 0.5;
  int level = 2;
  std::vector<int> n_list{4, 64};
  std::vector<GroupElement> targets;  // empty selects the defaults
  std::vector<double> eps;            // empty: eps at the 50th distance percentile per (n, target)
  std::size_t n_samples = 1000;
  std::size_t grid_intervals = 64;  // per [0, 1/n]
  std::uint64_t seed = 0;
  int workers = 1;
};

struct SupportCell {
  int n = 0;
  std::size_t target = 0;
  double eps = 0.0;
  double frequency = 0.0;
  double stderr_ = 0.0;
};

struct SupportReport {
  std::vector<int> n_list;
  std::vector<GroupElement> targets;
  std::vector<SupportCell> cells;
  // distance_quantiles[n index][target] at report_quantile_levels()
  std::vector<std::vector<std::vector<double>>> distance_quantiles;
  std::vector<std::string> findings;

  std::vector<SupportCell> cells_for(std::size_t target, double eps) const {
    std::vector<SupportCell> out;
    for (const auto& c : cells)
      if (c.target == target && c.eps == eps) out.push_back(c);
    return out;
  }
};

/// Distances d(dilate(S_N(X)_{0,1/n}, n^H), target) for each sample; sample
/// i for the a-th n uses seed stream_seed(stream_seed(seed, a), i).
inline std::vector<std::vector<double>> support_distances(const SupportProbeConfig& cfg, std::size_t n_index,
                                                          const std::vector<GroupElement>& targets) {
  const int n = cfg.n_list.at(n_index);
  const double h = 1.0 / n;
  if (h > cfg.driver.horizon) throw std::invalid_argument("1/n exceeds the driver horizon");
  const GaussianSampler sampler(cfg.driver, uniform_grid(h, cfg.grid_intervals));
  const double lambda = std::pow(static_cast<double>(n), cfg.hurst);
  const std::uint64_t stream = stream_seed(cfg.seed, n_index);
  std::vector<GroupElement> inv;
  for (const auto& t : targets) inv.push_back(t.inverse());
  std::vector<std::vector<double>> dist(targets.size(), std::vector<double>(cfg.n_samples));
  parallel_for(cfg.n_samples, cfg.workers, [&](std::size_t i) {
    const SampledDriver s = sampler.sample(stream_seed(stream, i));
    const GroupElement g = dilate(signature(s.path(), cfg.level), lambda);
    for (std::size_t k = 0; k < targets.size(); ++k) dist[k][i] = hom_norm(inv[k] * g);
  });
  return dist;
}

inline SupportReport support_probe(const SupportProbeConfig& cfg) {
  cfg.driver.validate();
  if (cfg.n_samples < 1) throw std::invalid_argument("support probe needs samples");
  SupportReport rep;
  rep.n_list = cfg.n_list;
  rep.targets = cfg.targets.empty() ? default_support_targets(cfg.driver.components, cfg.level) : cfg.targets;
  for (const auto& t : rep.targets)
    if (t.dim() != cfg.driver.components || t.level() != cfg.level)
      throw std::invalid_argument("support targets must live in G^N(R^d) of the probe");
  for (double e : cfg.eps)
    if (!(e > 0.0)) throw std::invalid_argument("eps must be positive");
  const double ns = static_cast<double>(cfg.n_samples);
  for (std::size_t a = 0; a < cfg.n_list.size(); ++a) {
    auto dist = support_distances(cfg, a, rep.targets);
    rep.distance_quantiles.emplace_back();
    for (std::size_t k = 0; k < rep.targets.size(); ++k) {
      std::vector<double> sorted = dist[k];
      std::sort(sorted.begin(), sorted.end());
      std::vector<double> q;
      for (double lv : report_quantile_levels()) q.push_back(sorted_quantile(sorted, lv));
      rep.distance_quantiles.back().push_back(q);
      std::vector<double> eps_list = cfg.eps;
      if (eps_list.empty()) eps_list.push_back(sorted_quantile(sorted, 0.5));
      bool any_hit = false;
      for (double e : eps_list) {
        const auto hits = static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), e) - sorted.begin());
        const double f = hits / ns;
        rep.cells.push_back({cfg.n_list[a], k, e, f, std::sqrt(f * (1.0 - f) / ns)});
        any_hit = any_hit || hits > 0;
      }
      if (!any_hit)
        rep.findings.push_back("no hits for n=" + std::to_string(cfg.n_list[a]) + " target " + std::to_string(k) +
                               "; median distance " + std::to_string(q[4]));
    }
  }
  return rep;
}

}  // namespace gaussrde
