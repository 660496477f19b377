#pragma once

// Fast invariant suite run by `gaussrde selftest`: each check reports the
// worst observed defect against its tolerance.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gaussrde/asymptotics.hpp"
#include "gaussrde/gaussian_drivers.hpp"
#include "gaussrde/lie_hormander.hpp"
#include "gaussrde/malliavin_probe.hpp"
#include "gaussrde/rde_solver.hpp"
#include "gaussrde/systems.hpp"
#include "gaussrde/tensor_algebra.hpp"

namespace gaussrde::selftest {

struct Check {
  std::string name;
  bool pass = false;
  double value = 0.0;  // worst defect (or the measured quantity)
  double tolerance = 0.0;
  std::string detail;
};

namespace detail {

inline PiecewiseLinearPath random_path(int d, int segs, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> knots{0.0};
  std::vector<std::vector<double>> vals{std::vector<double>(static_cast<std::size_t>(d), 0.0)};
  for (int j = 1; j <= segs; ++j) {
    knots.push_back(knots.back() + 0.1 + std::abs(g(rng)));
    auto v = vals.back();
    for (double& x : v) x += g(rng);
    vals.push_back(std::move(v));
  }
  return PiecewiseLinearPath(std::move(knots), std::move(vals));
}

inline PiecewiseLinearPath smooth_path(int d, std::size_t n) {
  return sampled_curve(uniform_grid(1.0, n), d, [d](double t) {
           Eigen::VectorXd x(d);
           for (int i = 0; i < d; ++i) x[i] = (i + 1) * 0.4 * t + 0.5 * (std::sin(2 * M_PI * t + i) - std::sin(i));
           return x;
         })
      .path();
}

inline Check at_most(std::string name, double v, double tol, std::string detail = {}) {
  return {std::move(name), v <= tol, v, tol, std::move(detail)};
}

}  // namespace detail

inline std::vector<Check> run_all(std::uint64_t seed = 0) {
  using detail::at_most;
  std::vector<Check> out;
  std::mt19937_64 rng(seed);

  {  // Chen, shuffle, reversal
    double chen = 0, shuffle = 0, rev = 0;
    for (int rep = 0; rep < 30; ++rep) {
      const int d = 1 + rep % 3, n = 2 + rep % 3;
      const auto x = detail::random_path(d, 3, rng), y = detail::random_path(d, 2, rng);
      const auto sx = signature(x, n), sy = signature(y, n);
      const double scale = std::pow(1.0 + hom_norm(sx) + hom_norm(sy), n);  // bounds every coordinate
      chen = std::max(chen, signature(x.concat(y), n).tensor().max_abs_diff((sx * sy).tensor()) / scale);
      shuffle = std::max(shuffle, shuffle_defect_level2(sx) / std::max(1.0, sx.tensor().level_norm(1) * sx.tensor().level_norm(1)));
      rev = std::max(rev, (signature(x.reversed(), n) * sx).tensor().max_abs_diff(TruncatedTensor::unit(d, n)) /
                              (scale * scale));
    }
    out.push_back(at_most("chen_identity", chen, 1e-12));
    out.push_back(at_most("shuffle_level2", shuffle, 1e-12));
    out.push_back(at_most("time_reversal_inverse", rev, 1e-12));
  }
  {  // exp/log, dilation
    double rt = 0, dil = 0, hom = 0;
    for (int rep = 0; rep < 30; ++rep) {
      const int d = 1 + rep % 3, n = 1 + rep % 4;
      const auto a = random_lie_element(d, n, rng, 0.5), b = random_lie_element(d, n, rng, 0.5);
      const auto g = GroupElement::exp(a), h = GroupElement::exp(b);
      rt = std::max(rt, g.log().max_abs_diff(a));
      const double lam = 0.3 + 0.2 * rep / 10.0;
      dil = std::max(dil, dilate(g * h, lam).tensor().max_abs_diff((dilate(g, lam) * dilate(h, lam)).tensor()));
      hom = std::max(hom, std::abs(hom_norm(dilate(g, -lam)) - lam * hom_norm(g)));
    }
    out.push_back(at_most("exp_log_roundtrip", rt, 1e-12));
    out.push_back(at_most("dilation_homomorphism", dil, 1e-12));
    out.push_back(at_most("hom_norm_homogeneity", hom, 1e-12));
  }
  {  // sampling reproducibility and KL reconstruction
    const auto spec = CovarianceSpec::fbm(0.7, 1.0, 2);
    const auto grid = uniform_grid(1.0, 64);
    const auto a = sample_paths(spec, grid, 8, seed, 1), b = sample_paths(spec, grid, 8, seed, 4);
    double diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, (a[i].values - b[i].values).cwiseAbs().maxCoeff());
    out.push_back(at_most("sampling_worker_independence", diff, 0.0));
    const auto bm = CovarianceSpec::brownian();
    const auto basis = cameron_martin_basis(bm, grid, 64);
    double rec = 0;
    for (std::size_t i = 1; i < grid.size(); i += 7)
      for (std::size_t j = 1; j < grid.size(); j += 5)
        rec = std::max(rec, std::abs(basis.reconstructed_covariance(i, j) - covariance(bm, grid[i], grid[j])));
    out.push_back(at_most("kl_reconstruction", rec, 1e-8));
    double chain = 0;
    const auto drive = lift(a[0], 3);
    chain = drive.signature().tensor().max_abs_diff(signature(drive.path, 3).tensor());
    out.push_back(at_most("lift_chen_chaining", chain, 1e-12));
  }
  {  // Euler against the closed form e^{x}
    const auto path = detail::smooth_path(1, 1024);
    const auto tr = solve(systems::linear_scalar(), Eigen::VectorXd::Ones(1), path, 3);
    double err = 0;
    for (std::size_t j = 0; j < tr.times.size(); ++j)
      err = std::max(err, std::abs(tr.y[j][0] - std::exp(path.values()[j][0])));
    out.push_back(at_most("euler_linear_closed_form", err, 1e-8));
  }
  {  // Jacobian inverse identity and the transport identities
    const auto path = detail::smooth_path(2, 4096);
    const auto h = systems::heisenberg();
    const Polynomial zero(3), x = Polynomial::variable(3, 0);
    const PolyVectorField w({x * x, zero, x});
    const auto tr = bracket_transport(h, w, Eigen::Vector3d(0.1, -0.2, 0.3), path, 4);
    double inv = 0, agree = 0, lie = 0;
    const auto integral = transported_bracket_integral(tr, h, w, path);
    for (std::size_t j = 0; j < tr.times.size(); ++j) {
      inv = std::max(inv, (tr.jac_inverse[j] * tr.jac_forward[j] - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff());
      agree = std::max(agree, (tr.transport[j] - tr.transport_direct[j]).norm());
      lie = std::max(lie, (tr.transport[j] - tr.transport[0] - integral[j]).norm());
    }
    out.push_back(at_most("jacobian_inverse_identity", inv, 1e-6));
    out.push_back(at_most("transport_consistency", agree, 1e-8));
    out.push_back(at_most("lie_identity", lie, 1e-6));
  }
  {  // brackets
    int jacobi_fail = 0, rank_fail = 0;
    for (int rep = 0; rep < 10; ++rep) {
      const int e = 2 + rep % 3;
      const auto a = systems::random_field(e, 2, 3, rng), b = systems::random_field(e, 2, 3, rng),
                 c = systems::random_field(e, 2, 3, rng);
      if (!(lie_bracket(a, lie_bracket(b, c)) + lie_bracket(b, lie_bracket(c, a)) + lie_bracket(c, lie_bracket(a, b)))
               .is_zero())
        ++jacobi_fail;
      const auto v = systems::random_system(e, 1 + rep % 3, 2, rng);
      const Eigen::VectorXd y0 = Eigen::VectorXd::Ones(e);
      for (int r = 1; r <= 3; ++r)
        if (ht_rank(v, y0, r, 3, seed + rep).rank != hormander_rank(v, y0, r).rank) ++rank_fail;
    }
    out.push_back(at_most("jacobi_identity", jacobi_fail, 0));
    const bool ref = hormander_rank(systems::heisenberg(), Eigen::Vector3d::Zero(), 2).rank == 3 &&
                     hormander_rank(systems::grushin(), Eigen::Vector2d::Zero(), 1).rank == 1 &&
                     hormander_rank(systems::grushin(), Eigen::Vector2d::Zero(), 2).rank == 2;
    out.push_back(at_most("reference_ranks", ref ? 0 : 1, 0));
    out.push_back(at_most("h_equals_ht", rank_fail, 0));
  }
  {  // Malliavin identities
    DensityProbeConfig cfg;
    cfg.driver = CovarianceSpec::brownian(1.0, 2);
    cfg.fields = systems::elliptic(2);
    cfg.y0 = Eigen::Vector2d::Zero();
    cfg.grid_intervals = 64;
    cfg.basis_modes = 64;
    cfg.seed = seed;
    const auto ell = density_probe(cfg, 10, 1.0);
    double closed = 0;
    for (const auto& s : ell.samples) closed = std::max(closed, (s.sigma - Eigen::Matrix2d::Identity()).norm());
    out.push_back(at_most("elliptic_sigma_closed_form", closed, 1e-6));
    cfg.fields = systems::grushin();
    const auto gr = density_probe(cfg, 10, 1.0);
    out.push_back(at_most("sigma_cross_check", gr.max_cross_check_error, 1e-6));
    out.push_back(at_most("grushin_nondegenerate", static_cast<double>(gr.degenerate), 0));
    cfg.driver = CovarianceSpec::bridge(1.0, 1.0, 1, true);
    cfg.fields = systems::elliptic(1);
    cfg.y0 = Eigen::VectorXd::Zero(1);
    cfg.basis_modes = 0;
    const auto br = density_probe(cfg, 5, 1.0);
    double bnorm = 0;
    for (const auto& s : br.samples) bnorm = std::max(bnorm, s.sigma.norm());
    out.push_back(at_most("bridge_sigma_vanishes", bnorm, 1e-10));

    const auto grid = uniform_grid(1.0, 64);
    const auto drive = lift(GaussianSampler(CovarianceSpec::brownian(1.0, 2), grid).sample(seed), 2);
    Eigen::MatrixXd prev = Eigen::MatrixXd::Zero(3, 3);
    double worst = 0;
    for (std::size_t n : {8u, 16u, 32u, 64u}) {
      const auto c = malliavin_sample(systems::heisenberg(), Eigen::Vector3d::Zero(), drive.path,
                                      cameron_martin_basis(CovarianceSpec::brownian(1.0, 2), grid, n), 64)
                         .reduced;
      worst = std::max(worst, -Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c - prev).eigenvalues()(0));
      prev = c;
    }
    out.push_back(at_most("psd_monotone_in_basis", worst, 1e-12));
  }
  {  // asymptotics
    const auto bm = scaling_defect(CovarianceSpec::brownian(), 0.5, {4, 16, 64});
    double z = 0;
    for (const auto& p : bm) z = std::max(z, p.defect);
    out.push_back(at_most("brownian_defect_zero", z, 0.0));
    double rel = 0;
    for (const auto& p : scaling_defect(CovarianceSpec::bridge(1.5, 1.0, 1), 0.5, {4, 16, 64}))
      rel = std::max(rel, std::abs(p.defect * p.n * 1.5 - 1.0));
    out.push_back(at_most("bridge_defect_closed_form", rel, 0.01));
    const auto rep = remainder_slope(systems::linear_scalar(), PolyVectorField::constant({1.0}), Eigen::VectorXd::Ones(1),
                                     [](double t) { return Eigen::VectorXd::Constant(1, t + 0.5 * std::sin(2 * M_PI * t)); }, 2,
                                     1.0);
    out.push_back(at_most("taylor_remainder_order", std::abs(rep.slope - 3.0), 0.25));
  }
  return out;
}

}  // namespace gaussrde::selftest
