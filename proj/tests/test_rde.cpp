#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gaussrde/gaussian_drivers.hpp"
#include "gaussrde/rde_solver.hpp"
#include "gaussrde/systems.hpp"

using namespace gaussrde;

namespace {

constexpr double kPi = std::numbers::pi;

PiecewiseLinearPath smooth_path(int d, std::size_t n, double phase = 0.0, double amp = 1.0) {
  return sampled_curve(uniform_grid(1.0, n), d,
                       [&](double t) {
                         Eigen::VectorXd v(d);
                         for (int i = 0; i < d; ++i)
                           v[i] = amp * ((i + 1) * 0.4 * t + 0.5 * std::sin(2 * kPi * t + phase + i) - 0.5 * std::sin(phase + i));
                         return v;
                       })
      .path();
}

/// The path restricted to [t_i, T], shifted to start at time 0.
PiecewiseLinearPath tail(const PiecewiseLinearPath& p, std::size_t i) {
  std::vector<double> k(p.knots().begin() + static_cast<std::ptrdiff_t>(i), p.knots().end());
  const double t0 = k.front();
  for (double& x : k) x -= t0;
  std::vector<std::vector<double>> v(p.values().begin() + static_cast<std::ptrdiff_t>(i), p.values().end());
  return {k, v};
}

double rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

}  // namespace

TEST(ApplyOperator, Examples) {
  const auto c = PolyVectorFieldSet(2, {PolyVectorField::constant({1.0, 2.0})});
  EXPECT_TRUE(apply_operator(c, {0, 0}, Eigen::Vector2d(3, 4)).isZero());
  EXPECT_EQ(apply_operator(c, {0}, Eigen::Vector2d(3, 4)), Eigen::Vector2d(1, 2));
  const auto lin = systems::linear_scalar();
  for (int k = 1; k <= 5; ++k)
    EXPECT_DOUBLE_EQ(apply_operator(lin, Word(static_cast<std::size_t>(k), 0), Eigen::VectorXd::Constant(1, 1.7))[0], 1.7);
  const auto h = systems::heisenberg();
  const Eigen::Vector3d y(0.3, 0.2, 0.1);
  EXPECT_EQ(apply_operator(h, {1}, y), h[1].evaluate(y));
  // V1 V2 I = D(V2) V1 = e_z
  EXPECT_EQ(apply_operator(h, {0, 1}, y), Eigen::Vector3d(0, 0, 1));
  EXPECT_TRUE(apply_operator(h, {1, 0}, y).isZero());
  EXPECT_THROW(apply_operator(h, {2}, y), std::invalid_argument);
}

TEST(EulerStep, Examples) {
  const auto lin = systems::linear_scalar();
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 2.0);
  EXPECT_EQ(euler_step(lin, y, GroupElement::identity(1, 3)), y);
  const double a = 0.3;
  for (int m = 1; m <= 4; ++m) {
    const auto g = segment_signature(std::vector<double>{a}, m);
    double series = 0.0, term = 1.0;
    for (int k = 0; k <= m; ++k) {
      series += term;
      term *= a / (k + 1);
    }
    EXPECT_NEAR(euler_step(lin, y, g)[0], 2.0 * series, 1e-15);
  }
  const auto c = PolyVectorFieldSet(2, {PolyVectorField::constant({1.0, 0.0}), PolyVectorField::constant({0.5, 2.0})});
  for (int m = 1; m <= 4; ++m) {
    const auto g = segment_signature(std::vector<double>{0.2, -0.4}, m);
    EXPECT_LT((euler_step(c, Eigen::Vector2d(1, 1), g) - Eigen::Vector2d(1 + 0.2 - 0.2, 1 - 0.8)).norm(), 1e-15);
  }
}

TEST(EulerStep, LevelOneIsClassicalEuler) {
  std::mt19937_64 rng(4);
  const auto v = systems::random_system(3, 2, 2, rng);
  const Eigen::Vector3d y(0.1, -0.2, 0.3);
  const std::vector<double> dx{0.05, -0.02};
  const Eigen::VectorXd expect = y + v[0].evaluate(y) * dx[0] + v[1].evaluate(y) * dx[1];
  EXPECT_LT((euler_step(v, y, segment_signature(dx, 1)) - expect).norm(), 1e-15);
}

TEST(Solve, LinearScalarClosedForm) {
  const auto path = smooth_path(1, 1024);
  const auto tr = solve(systems::linear_scalar(), Eigen::VectorXd::Constant(1, 1.5), path, 3);
  for (std::size_t j = 0; j < tr.times.size(); j += 64)
    EXPECT_NEAR(tr.y[j][0], 1.5 * std::exp(path.values()[j][0]), 1e-8);
}

TEST(Solve, ZeroFieldIsConstant) {
  const PolyVectorFieldSet zero(2, {PolyVectorField(2)});
  const auto tr = solve(zero, Eigen::Vector2d(1, 2), smooth_path(1, 32), 3);
  for (const auto& y : tr.y) EXPECT_EQ(y, Eigen::Vector2d(1, 2));
}

TEST(Solve, RejectsMismatchedInput) {
  EXPECT_THROW(solve(systems::heisenberg(), Eigen::Vector2d(0, 0), smooth_path(2, 8), 2), std::invalid_argument);
  EXPECT_THROW(solve(systems::heisenberg(), Eigen::Vector3d(0, 0, 0), smooth_path(3, 8), 2), std::invalid_argument);
}

TEST(Solve, ExplosionIsReported) {
  const auto quad = PolyVectorFieldSet(1, {PolyVectorField({Polynomial::variable(1, 0) * Polynomial::variable(1, 0)})});
  const auto path = sampled_curve(uniform_grid(1.0, 64), 1, [](double t) { return Eigen::VectorXd::Constant(1, 40 * t); }).path();
  try {
    solve(quad, Eigen::VectorXd::Constant(1, 1.0), path, 2);
    FAIL() << "expected explosion";
  } catch (const NumericalExplosion& e) {
    EXPECT_GT(e.time(), 0.0);
    EXPECT_LE(e.time(), 1.0);
    EXPECT_GE(e.step(), 1u);
  }
}

TEST(Solve, SubdivisionConsistency) {
  // halving every interval of a linear-in-time drive changes the result only by truncation error
  const auto h = systems::heisenberg();
  const auto coarse = smooth_path(2, 256);
  std::vector<double> k;
  std::vector<std::vector<double>> v;
  for (std::size_t j = 0; j + 1 < coarse.knots().size(); ++j) {
    k.push_back(coarse.knots()[j]);
    v.push_back(coarse.values()[j]);
    k.push_back(0.5 * (coarse.knots()[j] + coarse.knots()[j + 1]));
    std::vector<double> mid(2);
    for (int i = 0; i < 2; ++i) mid[i] = 0.5 * (coarse.values()[j][i] + coarse.values()[j + 1][i]);
    v.push_back(mid);
  }
  k.push_back(coarse.knots().back());
  v.push_back(coarse.values().back());
  const PiecewiseLinearPath fine(k, v);
  const Eigen::Vector3d y0(0.2, 0.1, -0.3);
  // Heisenberg is polynomial of degree one, so a depth-2 step is exact on each piece
  EXPECT_LT((solve(h, y0, coarse, 3).y.back() - solve(h, y0, fine, 3).y.back()).norm(), 1e-12);
}

TEST(Jacobian, IdentityAtStartAndInverse) {
  std::mt19937_64 rng(31);
  int checked = 0;
  for (int rep = 0; rep < 10 && checked < 5; ++rep) {
    const auto v = systems::random_system(3, 2, 2, rng);
    Trajectory tr;
    try {
      tr = jacobian_flow(v, Eigen::Vector3d(0.1, 0.0, -0.1), smooth_path(2, 1024, rep, 0.3), 4);
    } catch (const NumericalExplosion&) {
      continue;
    }
    if (tr.jac_forward.back().norm() > 100) continue;  // keep to tame flows
    ++checked;
    EXPECT_EQ(tr.jac_forward.front(), Eigen::Matrix3d::Identity());
    EXPECT_EQ(tr.jac_inverse.front(), Eigen::Matrix3d::Identity());
    for (std::size_t j = 0; j < tr.times.size(); ++j)
      EXPECT_LT((tr.jac_inverse[j] * tr.jac_forward[j] - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-6);
  }
  EXPECT_GE(checked, 3);
}

TEST(Jacobian, LinearScalarClosedForm) {
  const auto path = smooth_path(1, 1024);
  const auto tr = jacobian_flow(systems::linear_scalar(), Eigen::VectorXd::Constant(1, 0.7), path, 3);
  for (std::size_t j = 0; j < tr.times.size(); j += 128) {
    EXPECT_NEAR(tr.jac_forward[j](0, 0), std::exp(path.values()[j][0]), 1e-8);
    EXPECT_NEAR(tr.jac_inverse[j](0, 0), std::exp(-path.values()[j][0]), 1e-8);
  }
}

TEST(Jacobian, Cocycle) {
  const auto v = systems::heisenberg();
  std::vector<Eigen::MatrixXd> a{Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2)};
  a[0] << 0.3, -1, 1, 0.2;
  a[1] << 0, 0.5, -0.2, 0.1;
  for (const auto& sys : {v, systems::linear(a)}) {
    const auto path = smooth_path(2, 512);
    const Eigen::VectorXd y0 = Eigen::VectorXd::Constant(sys.state_dim, 0.3);
    const auto full = jacobian_flow(sys, y0, path, 3);
    for (std::size_t t1 : {100u, 333u}) {
      const auto rest = jacobian_flow(sys, full.y[t1], tail(path, t1), 3);
      const std::size_t t2 = 512 - t1;
      EXPECT_LT(rel(rest.jac_forward[t2] * full.jac_forward[t1], full.jac_forward[512]), 1e-6);
    }
  }
}

TEST(Jacobian, MatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 0.3);
  int checked = 0;
  for (int rep = 0; rep < 12 && checked < 5; ++rep) {
    const auto v = systems::random_system(2, 2, 2, rng);
    const auto path = smooth_path(2, 2048, rep, 0.3);
    const Eigen::Vector2d y0(g(rng), g(rng));
    Trajectory tr;
    try {
      tr = jacobian_flow(v, y0, path, 3);
    } catch (const NumericalExplosion&) {
      continue;
    }
    if (tr.jac_forward.back().norm() > 100) continue;
    ++checked;
    Eigen::Matrix2d fd;
    const double e = 1e-5;
    for (int c = 0; c < 2; ++c) {
      Eigen::Vector2d d = Eigen::Vector2d::Zero();
      d[c] = e;
      fd.col(c) = (solve(v, y0 + d, path, 3).y.back() - solve(v, y0 - d, path, 3).y.back()) / (2 * e);
    }
    EXPECT_LT(rel(tr.jac_forward.back(), fd), 1e-4);
  }
  EXPECT_GE(checked, 3);
}

TEST(Transport, StartAndCommutingFields) {
  const auto c = PolyVectorFieldSet(2, {PolyVectorField::constant({1.0, 0.0}), PolyVectorField::constant({0.0, 2.0})});
  const auto tr = bracket_transport(c, c[0], Eigen::Vector2d(0.5, 0.5), smooth_path(2, 256), 3);
  EXPECT_EQ(tr.transport.front(), c[0].evaluate(Eigen::Vector2d(0.5, 0.5)));
  for (std::size_t j = 0; j < tr.times.size(); ++j) {
    EXPECT_LT((tr.transport[j] - Eigen::Vector2d(1, 0)).norm(), 1e-8);
    EXPECT_LT((tr.transport_direct[j] - Eigen::Vector2d(1, 0)).norm(), 1e-8);
  }
  // diagonal linear fields commute as well
  std::vector<Eigen::MatrixXd> a{Eigen::Vector2d(1.0, -0.5).asDiagonal(), Eigen::Vector2d(0.3, 0.2).asDiagonal()};
  const auto lin = systems::linear(a);
  const Eigen::Vector2d y0(0.4, -1.0);
  const auto tl = bracket_transport(lin, lin[0], y0, smooth_path(2, 1024), 3);
  EXPECT_LT((tl.transport_direct.back() - lin[0].evaluate(y0)).norm(), 1e-8);
  EXPECT_LT((tl.transport.back() - lin[0].evaluate(y0)).norm(), 1e-8);
}

TEST(Transport, EvolvedAndDirectAgree) {
  const auto h = systems::heisenberg();
  PolyVectorField w({Polynomial::variable(3, 1) * Polynomial::variable(3, 1), Polynomial::variable(3, 2),
                     Polynomial::constant(3, 1.0)});
  const auto tr = bracket_transport(h, w, Eigen::Vector3d(0.1, 0.2, 0.3), smooth_path(2, 1024), 4);
  for (std::size_t j = 0; j < tr.times.size(); ++j) EXPECT_LT((tr.transport[j] - tr.transport_direct[j]).norm(), 1e-8);
}

TEST(Transport, LieIdentityIntegral) {
  const auto h = systems::heisenberg();
  PolyVectorField wh({Polynomial::variable(3, 1) * Polynomial::variable(3, 1), Polynomial::variable(3, 2),
                      Polynomial::constant(3, 1.0)});
  const auto g = systems::grushin();
  PolyVectorField wg({Polynomial::variable(2, 1), Polynomial::variable(2, 0) * Polynomial::variable(2, 0)});
  struct Case {
    PolyVectorFieldSet v;
    PolyVectorField w;
    Eigen::VectorXd y0;
  };
  for (const auto& c : {Case{h, wh, Eigen::Vector3d(0.1, 0.2, 0.3)}, Case{h, h[1], Eigen::Vector3d(0, 0, 0)},
                        Case{g, wg, Eigen::Vector2d(0.2, -0.1)}, Case{g, g[1], Eigen::Vector2d(0, 0)}}) {
    const auto path = smooth_path(2, 4096);
    const auto tr = bracket_transport(c.v, c.w, c.y0, path, 4);
    const auto integral = transported_bracket_integral(tr, c.v, c.w, path);
    const Eigen::VectorXd w0 = c.w.evaluate(c.y0);
    double worst = 0.0;
    for (std::size_t j = 0; j < tr.times.size(); ++j)
      worst = std::max(worst, (tr.transport_direct[j] - w0 - integral[j]).norm());
    EXPECT_LT(worst, 1e-6);
  }
}

TEST(DirectionalDerivative, TrivialCases) {
  const auto h = systems::heisenberg();
  const auto path = smooth_path(2, 64);
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 65);
  EXPECT_TRUE(directional_derivative(h, Eigen::Vector3d(0, 0, 0), path, zero, 64).isZero());

  const auto c = PolyVectorFieldSet(2, {PolyVectorField::constant({1.0, 0.5}), PolyVectorField::constant({-2.0, 1.0})});
  Eigen::MatrixXd hh(2, 65);
  for (int j = 0; j <= 64; ++j) {
    hh(0, j) = std::sin(j / 10.0);
    hh(1, j) = j / 64.0 * j / 64.0;
  }
  for (std::size_t t : {10u, 64u}) {
    const Eigen::Vector2d expect = Eigen::Vector2d(1.0, 0.5) * (hh(0, t) - hh(0, 0)) + Eigen::Vector2d(-2.0, 1.0) * (hh(1, t) - hh(1, 0));
    EXPECT_LT((directional_derivative(c, Eigen::Vector2d(0, 0), path, hh, t) - expect).norm(), 1e-14);
  }
}

TEST(DirectionalDerivative, LinearInH) {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> g;
  const auto v = systems::heisenberg();
  const auto path = smooth_path(2, 128);
  const auto tr = jacobian_flow(v, Eigen::Vector3d(0.1, 0, 0), path, 3);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::MatrixXd a(2, 129), b(2, 129);
    for (int j = 0; j <= 128; ++j)
      for (int i = 0; i < 2; ++i) {
        a(i, j) = g(rng);
        b(i, j) = g(rng);
      }
    const Eigen::VectorXd lhs = directional_derivative(tr, v, 2.0 * a - 3.0 * b, 128);
    const Eigen::VectorXd rhs = 2.0 * directional_derivative(tr, v, a, 128) - 3.0 * directional_derivative(tr, v, b, 128);
    EXPECT_LT((lhs - rhs).norm(), 1e-10 * std::max(1.0, rhs.norm()));
  }
}

TEST(DirectionalDerivative, MatchesFiniteDifferences) {
  const auto v = systems::heisenberg();
  const auto g = systems::grushin();
  // left-point sums carry O(mesh) error, so the grid is fine
  const std::size_t n = 65536;
  const auto grid = uniform_grid(1.0, n);
  Eigen::MatrixXd hh(2, n + 1);
  for (std::size_t j = 0; j <= n; ++j) {
    hh(0, j) = std::sin(kPi * grid[j]);
    hh(1, j) = grid[j] * grid[j] - 0.3 * grid[j];
  }
  for (const auto& [sys, y0] : {std::pair{v, Eigen::VectorXd(Eigen::Vector3d(0.1, 0.2, 0.0))},
                                std::pair{g, Eigen::VectorXd(Eigen::Vector2d(0.3, 0.0))}}) {
    const auto path = smooth_path(2, n);
    const Eigen::VectorXd dh = directional_derivative(sys, y0, path, hh, n, 3);
    const double eps = 1e-4;
    const Eigen::VectorXd fd =
        (solve(sys, y0, translate(path, hh, eps), 3).y.back() - solve(sys, y0, translate(path, hh, -eps), 3).y.back()) /
        (2 * eps);
    EXPECT_LT(rel(dh, fd), 1e-4) << dh.transpose() << " vs " << fd.transpose();
  }
}
