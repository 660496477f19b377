#pragma once

// A few reference vector-field systems and a random polynomial generator.

#include <Eigen/Dense>

#include <random>
#include <vector>

#include "gaussrde/polynomial.hpp"

namespace gaussrde::systems {

/// V1 = d/dx, V2 = d/dy + x d/dz on R^3.
inline PolyVectorFieldSet heisenberg() {
  const Polynomial one = Polynomial::constant(3, 1.0), zero(3);
  PolyVectorField v1({one, zero, zero});
  PolyVectorField v2({zero, one, Polynomial::variable(3, 0)});
  return PolyVectorFieldSet(3, {v1, v2});
}

/// V1 = d/dx, V2 = x d/dy on R^2.
inline PolyVectorFieldSet grushin() {
  const Polynomial one = Polynomial::constant(2, 1.0), zero(2);
  PolyVectorField v1({one, zero});
  PolyVectorField v2({zero, Polynomial::variable(2, 0)});
  return PolyVectorFieldSet(2, {v1, v2});
}

/// V_i = e_i on R^e.
inline PolyVectorFieldSet elliptic(int e) {
  std::vector<PolyVectorField> v;
  for (int i = 0; i < e; ++i) {
    std::vector<double> c(static_cast<std::size_t>(e), 0.0);
    c[static_cast<std::size_t>(i)] = 1.0;
    v.push_back(PolyVectorField::constant(c));
  }
  return PolyVectorFieldSet(e, std::move(v));
}

/// dY = a Y dX on R.
inline PolyVectorFieldSet linear_scalar(double a = 1.0) {
  return PolyVectorFieldSet(1, {PolyVectorField({Polynomial::variable(1, 0, a)})});
}

/// V_i(y) = A_i y.
inline PolyVectorFieldSet linear(const std::vector<Eigen::MatrixXd>& a) {
  std::vector<PolyVectorField> v;
  for (const auto& m : a) v.push_back(PolyVectorField::linear(m));
  return PolyVectorFieldSet(static_cast<int>(a.front().rows()), std::move(v));
}

/// Random polynomial with small integer coefficients, total degree <= degree.
inline Polynomial random_polynomial(int nvars, int degree, int terms, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coef(-3, 3), var(0, nvars - 1), deg(0, degree);
  Polynomial p(nvars);
  for (int t = 0; t < terms; ++t) {
    Exponents ex(static_cast<std::size_t>(nvars), 0);
    const int k = deg(rng);
    for (int j = 0; j < k; ++j) ++ex[static_cast<std::size_t>(var(rng))];
    const int c = coef(rng);
    if (c != 0) p.add_term(ex, c);
  }
  return p;
}

inline PolyVectorField random_field(int e, int degree, int terms, std::mt19937_64& rng) {
  std::vector<Polynomial> c;
  for (int i = 0; i < e; ++i) c.push_back(random_polynomial(e, degree, terms, rng));
  return PolyVectorField(std::move(c));
}

inline PolyVectorFieldSet random_system(int e, int d, int degree, std::mt19937_64& rng, int terms = 2) {
  std::vector<PolyVectorField> v;
  for (int i = 0; i < d; ++i) v.push_back(random_field(e, degree, terms, rng));
  return PolyVectorFieldSet(e, std::move(v));
}

}  // namespace gaussrde::systems
