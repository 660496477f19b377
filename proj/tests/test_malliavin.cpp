#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "gaussrde/malliavin_probe.hpp"
#include "gaussrde/systems.hpp"

using namespace gaussrde;

namespace {

Eigen::MatrixXd grid_function(std::size_t n, int d, double (*f)(double, int)) {
  Eigen::MatrixXd h(d, static_cast<Eigen::Index>(n + 1));
  for (std::size_t j = 0; j <= n; ++j)
    for (int i = 0; i < d; ++i) h(i, static_cast<Eigen::Index>(j)) = f(static_cast<double>(j) / n, i);
  return h;
}

RoughDrive brownian_drive(int d, std::size_t n, std::uint64_t seed, double T = 1.0) {
  const GaussianSampler s(CovarianceSpec::brownian(T, d), uniform_grid(T, n));
  return lift(s.sample(seed), 2);
}

}  // namespace

TEST(YoungIntegral, Examples) {
  const std::size_t n = 1000;
  const Eigen::MatrixXd h = grid_function(n, 2, [](double s, int i) { return s * s + i * std::sin(s); });
  const std::vector<Eigen::MatrixXd> zero(2, Eigen::MatrixXd::Zero(1, n + 1));
  EXPECT_EQ(young_integral(zero, h, n)[0], 0.0);
  const std::vector<Eigen::MatrixXd> one(2, Eigen::MatrixXd::Ones(1, n + 1));
  EXPECT_NEAR(young_integral(one, h, n)[0], (h(0, n) - h(0, 0)) + (h(1, n) - h(1, 0)), 1e-13);
  EXPECT_NEAR(young_integral(one, h, 400)[0], (h(0, 400) - h(0, 0)) + (h(1, 400) - h(1, 0)), 1e-13);

  // int_0^1 s d(s^2) = 2/3, left points err by O(mesh)
  std::vector<Eigen::MatrixXd> f{grid_function(n, 1, [](double s, int) { return s; })};
  const Eigen::MatrixXd h2 = grid_function(n, 1, [](double s, int) { return s * s; });
  const double v = young_integral(f, h2, n)[0];
  EXPECT_NEAR(v, 2.0 / 3.0, 1.0 / n);
  EXPECT_LT(v, 2.0 / 3.0);

  EXPECT_THROW(young_integral(f, Eigen::MatrixXd::Zero(1, 10), 5), std::invalid_argument);
  EXPECT_THROW(young_integral(one, h2, 5), std::invalid_argument);
}

TEST(ReducedCovariance, ZeroFields) {
  const PolyVectorFieldSet zero(2, {PolyVectorField(2), PolyVectorField(2)});
  const auto drive = brownian_drive(2, 64, 1);
  const auto basis = cameron_martin_basis(CovarianceSpec::brownian(1.0, 2), drive.driver.grid, 64);
  EXPECT_TRUE(reduced_covariance(zero, Eigen::Vector2d(1, 1), drive, basis, 1.0).isZero());
  EXPECT_TRUE(malliavin_matrix(zero, Eigen::Vector2d(1, 1), drive, basis, 1.0).isZero());
}

TEST(ReducedCovariance, ScalarBrownianRecoversVariance) {
  const std::size_t n = 512;
  const auto drive = brownian_drive(1, n, 2);
  const auto basis = cameron_martin_basis(CovarianceSpec::brownian(), drive.driver.grid, n);
  const auto one = PolyVectorFieldSet(1, {PolyVectorField::constant({1.0})});
  for (double t : {0.25, 0.5, 1.0}) {
    const double c = reduced_covariance(one, Eigen::VectorXd::Zero(1), drive, basis, t)(0, 0);
    EXPECT_NEAR(c / t, 1.0, 0.02);
  }
}

TEST(ReducedCovariance, BridgeAtReturnTimeVanishes) {
  const auto spec = CovarianceSpec::bridge(1.0, 1.0, 1, true);
  const auto grid = uniform_grid(1.0, 256);
  const auto drive = lift(GaussianSampler(spec, grid).sample(5), 2);
  const auto basis = cameron_martin_basis_by_fraction(spec, grid);
  const auto id = PolyVectorFieldSet(1, {PolyVectorField::constant({1.0})});
  EXPECT_LT(reduced_covariance(id, Eigen::VectorXd::Zero(1), drive, basis, 1.0).norm(), 1e-10);
  EXPECT_LT(malliavin_matrix(id, Eigen::VectorXd::Zero(1), drive, basis, 1.0).norm(), 1e-10);
  EXPECT_GT(reduced_covariance(id, Eigen::VectorXd::Zero(1), drive, basis, 0.5)(0, 0), 0.2);
}

TEST(MalliavinMatrix, ZeroTime) {
  const auto drive = brownian_drive(2, 32, 3);
  const auto basis = cameron_martin_basis(CovarianceSpec::brownian(1.0, 2), drive.driver.grid, 16);
  EXPECT_TRUE(malliavin_matrix(systems::grushin(), Eigen::Vector2d(0.1, 0.2), drive, basis, 0.0).isZero());
}

TEST(MalliavinMatrix, CommutingConstantFields) {
  const auto c = PolyVectorFieldSet(2, {PolyVectorField::constant({1.0, 0.5}), PolyVectorField::constant({-0.3, 2.0})});
  const auto basis = cameron_martin_basis(CovarianceSpec::brownian(1.0, 2), uniform_grid(1.0, 64), 40);
  const std::size_t t = 48;
  Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(2, 2);
  for (std::size_t q = 0; q < basis.mode_count(); ++q) {
    const Eigen::MatrixXd h = basis.mode(q);
    const Eigen::Vector2d u = Eigen::Vector2d(1.0, 0.5) * h(0, t) + Eigen::Vector2d(-0.3, 2.0) * h(1, t);
    expect += u * u.transpose();
  }
  for (std::uint64_t seed : {1u, 2u}) {
    const auto drive = brownian_drive(2, 64, seed);
    const auto s = malliavin_sample(c, Eigen::Vector2d(0, 0), drive.path, basis, t);
    EXPECT_LT((s.sigma - expect).norm(), 1e-12);
    EXPECT_LT((s.reduced - expect).norm(), 1e-12);
  }
}

TEST(MalliavinMatrix, CrossCheckAndSymmetry) {
  const auto basis = cameron_martin_basis_by_fraction(CovarianceSpec::brownian(1.0, 2), uniform_grid(1.0, 256));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const auto& [v, y0] : {std::pair{systems::heisenberg(), Eigen::VectorXd(Eigen::Vector3d(0.2, 0.0, 0.1))},
                                std::pair{systems::grushin(), Eigen::VectorXd(Eigen::Vector2d(0.0, 0.0))}}) {
      const auto drive = brownian_drive(2, 256, seed);
      const auto s = malliavin_sample(v, y0, drive.path, basis, 256);
      EXPECT_TRUE(s.cross_check_ok) << s.cross_check_error;
      EXPECT_LT(s.cross_check_error, 1e-6);
      EXPECT_LT(s.symmetry_error, 1e-10);
      EXPECT_GT(s.reduced_eigenvalues(0), -1e-10);
      EXPECT_GT(s.eigenvalues(0), -1e-10);
      EXPECT_LT(s.determinant_error, 1e-6);
    }
  }
}

TEST(MalliavinMatrix, MonotoneInBasisSize) {
  const auto grid = uniform_grid(1.0, 128);
  const auto drive = brownian_drive(2, 128, 9);
  const auto v = systems::heisenberg();
  const Eigen::Vector3d y0(0.1, 0.2, 0.3);
  Eigen::MatrixXd prev = Eigen::MatrixXd::Zero(3, 3);
  for (std::size_t n : {4u, 8u, 16u, 32u, 64u, 128u}) {
    const auto basis = cameron_martin_basis(CovarianceSpec::brownian(1.0, 2), grid, n);
    const auto c = malliavin_sample(v, y0, drive.path, basis, 128).reduced;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c - prev);
    EXPECT_GT(es.eigenvalues()(0), -1e-12);
    prev = c;
  }
}

TEST(DensityProbe, EllipticHasNoDegenerateSamples) {
  DensityProbeConfig cfg;
  cfg.driver = CovarianceSpec::brownian(1.0, 2);
  cfg.fields = systems::elliptic(2);
  cfg.y0 = Eigen::Vector2d::Zero();
  cfg.grid_intervals = 128;
  cfg.basis_modes = 128;
  cfg.seed = 4;
  const auto rep = density_probe(cfg, 50, 1.0);
  EXPECT_EQ(rep.valid(), 50u);
  EXPECT_EQ(rep.degenerate, 0u);
  EXPECT_EQ(rep.degenerate_fraction(), 0.0);
  for (const auto& s : rep.samples) EXPECT_LT((s.sigma - Eigen::Matrix2d::Identity()).norm(), 1e-6);
  EXPECT_EQ(rep.min_eigenvalue_quantiles.size(), report_quantile_levels().size());
}

TEST(DensityProbe, BridgeAtReturnTimeIsDegenerate) {
  DensityProbeConfig cfg;
  cfg.driver = CovarianceSpec::bridge(1.0, 1.0, 1, true);
  cfg.fields = PolyVectorFieldSet(1, {PolyVectorField::constant({1.0})});
  cfg.y0 = Eigen::VectorXd::Zero(1);
  cfg.grid_intervals = 128;
  const auto rep = density_probe(cfg, 20, 1.0);
  EXPECT_EQ(rep.degenerate_fraction(), 1.0);
  for (const auto& s : rep.samples) EXPECT_LT(s.sigma.norm(), 1e-10);
}

TEST(DensityProbe, GrushinIsNondegenerate) {
  DensityProbeConfig cfg;
  cfg.driver = CovarianceSpec::brownian(1.0, 2);
  cfg.fields = systems::grushin();
  cfg.y0 = Eigen::Vector2d::Zero();
  cfg.grid_intervals = 128;
  cfg.seed = 8;
  const auto rep = density_probe(cfg, 40, 1.0);
  EXPECT_EQ(rep.degenerate, 0u);
  EXPECT_GT(rep.min_eigenvalue_overall, 0.0);
  EXPECT_EQ(rep.cross_check_failures, 0u);
}

TEST(DensityProbe, DeterministicAcrossWorkers) {
  DensityProbeConfig cfg;
  cfg.driver = CovarianceSpec::fbm(0.6, 1.0, 2);
  cfg.fields = systems::heisenberg();
  cfg.y0 = Eigen::Vector3d::Zero();
  cfg.grid_intervals = 64;
  cfg.seed = 17;
  cfg.workers = 1;
  const auto a = density_probe(cfg, 12, 1.0);
  cfg.workers = 4;
  const auto b = density_probe(cfg, 12, 1.0);
  std::ostringstream sa, sb;
  a.write_csv(sa);
  b.write_csv(sb);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_FALSE(sa.str().empty());
}

TEST(DensityProbe, ExplodingSamplesAreExcluded) {
  DensityProbeConfig cfg;
  cfg.driver = CovarianceSpec::brownian(1.0, 1);
  cfg.fields = PolyVectorFieldSet(1, {PolyVectorField({Polynomial::variable(1, 0) * Polynomial::variable(1, 0) * 30.0})});
  cfg.y0 = Eigen::VectorXd::Constant(1, 1.0);
  cfg.grid_intervals = 64;
  const auto rep = density_probe(cfg, 20, 1.0);
  EXPECT_GT(rep.exploded_seeds.size(), 0u);
  EXPECT_EQ(rep.exploded_seeds.size() + rep.valid(), 20u);
}

TEST(DensityProbe, RejectsDimensionMismatch) {
  DensityProbeConfig cfg;
  cfg.driver = CovarianceSpec::brownian(1.0, 3);
  cfg.fields = systems::grushin();
  cfg.y0 = Eigen::Vector2d::Zero();
  EXPECT_THROW(density_probe(cfg, 2, 1.0), std::invalid_argument);
}

TEST(DensityProbe, GrushinMeanSigmaStableUnderRefinement) {
  // Y^y = int B1 dB2 has D Y^y = (B2(1) - B2(s), B1(s)), so E sigma_1 = I at every grid;
  // Var sigma_yy = 2/3 bounds the Monte-Carlo error
  DensityProbeConfig cfg;
  cfg.driver = CovarianceSpec::brownian(1.0, 2);
  cfg.fields = systems::grushin();
  cfg.y0 = Eigen::Vector2d::Zero();
  cfg.seed = 5;
  cfg.workers = 4;
  const std::size_t n = 300;
  const double se = std::sqrt(2.0 / 3.0 / n);
  std::vector<Eigen::Matrix2d> means;
  for (std::size_t grid : {256u, 1024u}) {
    cfg.grid_intervals = grid;
    const auto r = density_probe(cfg, n, 1.0);
    Eigen::Matrix2d mean = Eigen::Matrix2d::Zero();
    for (const auto& s : r.samples) mean += s.sigma / static_cast<double>(r.valid());
    EXPECT_LT(std::abs(mean(0, 0) - 1.0), 0.01) << grid;  // sigma_xx = int 1 ds, up to basis truncation
    EXPECT_LT(std::abs(mean(1, 1) - 1.0), 4 * se) << grid;
    EXPECT_LT(std::abs(mean(0, 1)), 4 * std::sqrt(0.5 / n)) << grid;
    means.push_back(mean);
  }
  EXPECT_LT(std::abs(means[0](1, 1) - means[1](1, 1)), 4 * std::sqrt(2.0) * se);
}
