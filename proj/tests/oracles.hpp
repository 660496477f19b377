#pragma once

// Reference computations that avoid the library code paths they check.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "gaussrde/tensor_algebra.hpp"

namespace oracle {

/// Iterated integrals of a piecewise-linear path by trapezoidal substeps,
/// S^k += avg(S^{k-1}) (x) dx. Exact at level 2 on linear pieces, O(h^2)
/// beyond. Returns levels[k] with d^k entries, first letter most significant.
inline std::vector<std::vector<double>> riemann_signature(const gaussrde::PiecewiseLinearPath& path, int level,
                                                         int substeps) {
  const int d = path.dim();
  std::vector<std::vector<double>> s(static_cast<std::size_t>(level) + 1);
  s[0] = {1.0};
  std::size_t sz = 1;
  for (int k = 1; k <= level; ++k) {
    sz *= static_cast<std::size_t>(d);
    s[k].assign(sz, 0.0);
  }
  for (std::size_t seg = 0; seg < path.segments(); ++seg) {
    const auto inc = path.increment(seg);
    std::vector<double> dx(inc.begin(), inc.end());
    for (double& v : dx) v /= substeps;
    for (int step = 0; step < substeps; ++step) {
      std::vector<std::vector<double>> next = s;
      for (int k = 1; k <= level; ++k) {
        const auto& lo_old = s[k - 1];
        const auto& lo_new = next[k - 1];
        for (std::size_t w = 0; w < lo_old.size(); ++w)
          for (int i = 0; i < d; ++i) next[k][w * d + i] += 0.5 * (lo_old[w] + lo_new[w]) * dx[i];
      }
      s = std::move(next);
    }
  }
  return s;
}

/// Composite Simpson rule.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 2000) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double acc = f(a) + f(b);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return acc * h / 3.0;
}

/// Exhaustive sup over all partitions drawn from the given points of
/// sum d(x_{t_i}, x_{t_{i+1}})^p, to the power 1/p.
inline double brute_p_variation(const gaussrde::PiecewiseLinearPath& path, int level, double p,
                                const std::vector<double>& pts) {
  const std::size_t inner = pts.size() - 2;
  double best = 0.0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << inner); ++mask) {
    std::vector<double> part{pts.front()};
    for (std::size_t j = 0; j < inner; ++j)
      if (mask >> j & 1) part.push_back(pts[j + 1]);
    part.push_back(pts.back());
    double acc = 0.0;
    for (std::size_t j = 0; j + 1 < part.size(); ++j)
      acc += std::pow(gaussrde::hom_norm(gaussrde::signature_between(path, part[j], part[j + 1], level)), p);
    best = std::max(best, acc);
  }
  return std::pow(best, 1.0 / p);
}

inline gaussrde::PiecewiseLinearPath random_path(int d, int segments, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::vector<double> knots{0.0};
  std::vector<std::vector<double>> vals{std::vector<double>(static_cast<std::size_t>(d), 0.0)};
  for (int s = 0; s < segments; ++s) {
    knots.push_back(knots.back() + u(rng));
    auto v = vals.back();
    for (double& x : v) x += n(rng);
    vals.push_back(std::move(v));
  }
  return gaussrde::PiecewiseLinearPath(std::move(knots), std::move(vals));
}

}  // namespace oracle
