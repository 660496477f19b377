#pragma once

// Step-m Euler scheme for dy = V(y) dx driven by piecewise-linear paths,
// together with the Jacobian flows, transported brackets and directional
// derivatives along Cameron-Martin-type perturbations.
//
// Each grid interval is stepped with the exact level-m signature exp(dx) of
// its straight segment, so the scheme is exact in the driver for every m.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaussrde/gaussian_drivers.hpp"
#include "gaussrde/lie_hormander.hpp"
#include "gaussrde/polynomial.hpp"
#include "gaussrde/tensor_algebra.hpp"

namespace gaussrde {

class NumericalExplosion : public std::runtime_error {
 public:
  NumericalExplosion(double time, std::size_t step)
      : std::runtime_error("numerical explosion at t=" + std::to_string(time)), time_(time), step_(step) {}
  double time() const { return time_; }
  std::size_t step() const { return step_; }

 private:
  double time_;
  std::size_t step_;
};

/// V_{i_1} ... V_{i_k} I as explicit polynomials, for every word up to
/// length m. Word (i, u) is L_{V_i} applied to the entry of u.
class OperatorWords {
 public:
  OperatorWords(const std::vector<PolyVectorField>& fields, int m) : d_(static_cast<int>(fields.size())), m_(m) {
    if (fields.empty()) throw std::invalid_argument("operator words need at least one field");
    if (m < 1) throw std::invalid_argument("operator depth must be >= 1");
    e_ = fields.front().dim();
    words_.resize(static_cast<std::size_t>(m) + 1);
    for (const auto& f : fields) words_[1].push_back(f.components());
    for (int k = 2; k <= m; ++k)
      for (int i = 0; i < d_; ++i)
        for (const auto& prev : words_[k - 1]) words_[k].push_back(directional_derivative(prev, fields[i]));
    compiled_.resize(static_cast<std::size_t>(m) + 1);
    for (int k = 1; k <= m; ++k) {
      std::vector<Polynomial> flat;
      for (const auto& w : words_[k]) flat.insert(flat.end(), w.begin(), w.end());
      compiled_[k] = CompiledPolynomials(flat);
    }
  }

  int driver_dim() const { return d_; }
  int state_dim() const { return e_; }
  int depth() const { return m_; }

  const std::vector<Polynomial>& word(std::size_t k, std::size_t index) const { return words_.at(k).at(index); }
  const CompiledPolynomials& level(std::size_t k) const { return compiled_.at(k); }

 private:
  int d_ = 0;
  int e_ = 0;
  int m_ = 0;
  std::vector<std::vector<std::vector<Polynomial>>> words_;
  std::vector<CompiledPolynomials> compiled_;
};

/// V_{i_1} ... V_{i_k} I (y); word letters are zero-based.
inline Eigen::VectorXd apply_operator(const PolyVectorFieldSet& v, const Word& word, const Eigen::VectorXd& y) {
  if (word.empty()) throw std::invalid_argument("operator word must be non-empty");
  for (int c : word)
    if (c < 0 || c >= v.driver_dim()) throw std::invalid_argument("operator word letter out of range");
  std::vector<Polynomial> f = v[word.back()].components();
  for (std::size_t p = word.size() - 1; p-- > 0;) f = directional_derivative(f, v[word[p]]);
  Eigen::VectorXd out(v.state_dim);
  for (int i = 0; i < v.state_dim; ++i) out[i] = f[i].evaluate(y);
  return out;
}

/// y + sum_{k <= m} sum_w g^{k,w} V_w I (y).
class EulerStepper {
 public:
  EulerStepper(const std::vector<PolyVectorField>& fields, int m)
      : words_(fields, m),
        scratch_(static_cast<std::size_t>(words_.state_dim()) * ipow(static_cast<std::size_t>(words_.driver_dim()), m)) {}

  int depth() const { return words_.depth(); }
  const OperatorWords& words() const { return words_; }

  Eigen::VectorXd step(const Eigen::VectorXd& y, const TruncatedTensor& g) const {
    if (g.dim() != words_.driver_dim()) throw std::invalid_argument("increment dimension does not match fields");
    if (y.size() != words_.state_dim()) throw std::invalid_argument("state dimension does not match fields");
    const std::size_t e = static_cast<std::size_t>(words_.state_dim());
    Eigen::VectorXd out = y;
    thread_local std::vector<double> buf;
    buf.resize(scratch_);
    const int top = std::min(words_.depth(), g.level());
    for (int k = 1; k <= top; ++k) {
      const auto coeffs = g.level_span(k);
      words_.level(static_cast<std::size_t>(k)).evaluate(y.data(), buf.data());
      for (std::size_t w = 0; w < coeffs.size(); ++w) {
        const double c = coeffs[w];
        if (c == 0.0) continue;
        const double* f = buf.data() + w * e;
        for (std::size_t i = 0; i < e; ++i) out[static_cast<Eigen::Index>(i)] += c * f[i];
      }
    }
    return out;
  }

 private:
  OperatorWords words_;
  std::size_t scratch_;  // e * d^m outputs of the top level
};

inline Eigen::VectorXd euler_step(const PolyVectorFieldSet& v, const Eigen::VectorXd& y, const GroupElement& g) {
  return EulerStepper(v.fields, g.level()).step(y, g.tensor());
}

/// Solution of the augmented system, one entry per grid time.
struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> y;
  std::vector<Eigen::MatrixXd> jac_forward;        // J_{t<-0}
  std::vector<Eigen::MatrixXd> jac_inverse;        // J_{0<-t}
  std::vector<Eigen::VectorXd> transport;          // z3 evolved by its own equation
  std::vector<Eigen::VectorXd> transport_direct;   // J_{0<-t} W(y_t)

  bool has_jacobian() const { return !jac_forward.empty(); }
  bool has_transport() const { return !transport.empty(); }

  /// J_{t<-s} = J_{t<-0} J_{0<-s} on grid indices.
  Eigen::MatrixXd jacobian_between(std::size_t t, std::size_t s) const { return jac_forward[t] * jac_inverse[s]; }

  void write_csv(std::ostream& os) const {
    const Eigen::Index e = y.empty() ? 0 : y.front().size();
    os << "time";
    for (Eigen::Index i = 0; i < e; ++i) os << ",y" << i;
    if (has_jacobian()) {
      for (Eigen::Index a = 0; a < e; ++a)
        for (Eigen::Index b = 0; b < e; ++b) os << ",J" << a << b;
      for (Eigen::Index a = 0; a < e; ++a)
        for (Eigen::Index b = 0; b < e; ++b) os << ",Jinv" << a << b;
    }
    if (has_transport()) {
      for (Eigen::Index i = 0; i < e; ++i) os << ",z3_" << i;
      for (Eigen::Index i = 0; i < e; ++i) os << ",z3direct_" << i;
    }
    os << "\n";
    os.precision(17);
    for (std::size_t j = 0; j < times.size(); ++j) {
      os << times[j];
      for (Eigen::Index i = 0; i < e; ++i) os << "," << y[j][i];
      if (has_jacobian()) {
        for (Eigen::Index a = 0; a < e; ++a)
          for (Eigen::Index b = 0; b < e; ++b) os << "," << jac_forward[j](a, b);
        for (Eigen::Index a = 0; a < e; ++a)
          for (Eigen::Index b = 0; b < e; ++b) os << "," << jac_inverse[j](a, b);
      }
      if (has_transport()) {
        for (Eigen::Index i = 0; i < e; ++i) os << "," << transport[j][i];
        for (Eigen::Index i = 0; i < e; ++i) os << "," << transport_direct[j][i];
      }
      os << "\n";
    }
  }
};

namespace detail {

/// Composes Euler steps over the path's segments.
inline std::vector<Eigen::VectorXd> run_scheme(const EulerStepper& stepper, const Eigen::VectorXd& z0,
                                               const PiecewiseLinearPath& path) {
  if (path.segments() < 1) throw std::invalid_argument("drive needs at least one interval");
  std::vector<Eigen::VectorXd> zs;
  zs.reserve(path.segments() + 1);
  zs.push_back(z0);
  for (std::size_t j = 0; j < path.segments(); ++j) {
    const auto dx = path.increment(j);
    const TruncatedTensor g = tensor_exp(TruncatedTensor::from_vector(stepper.depth(), dx));
    Eigen::VectorXd next = stepper.step(zs.back(), g);
    if (!next.allFinite()) throw NumericalExplosion(path.knots()[j + 1], j + 1);
    zs.push_back(std::move(next));
  }
  return zs;
}

}  // namespace detail

/// Layout of the augmented state z = (y, J_{0<-t}, J_{t<-0}[, z3]), matrices row-major.
struct AugmentedLayout {
  int e = 0;
  bool transport = false;

  int inverse_offset() const { return e; }
  int forward_offset() const { return e + e * e; }
  int transport_offset() const { return e + 2 * e * e; }
  int size() const { return e + 2 * e * e + (transport ? e : 0); }
};

/// Vector fields of the augmented system on R^{e + 2e^2 (+ e)}:
///   dy   = V_i(y) dx^i
///   dZ   = -Z DV_i(y) dx^i            (Z = J_{0<-t})
///   dJ   = DV_i(y) J dx^i             (J = J_{t<-0})
///   dz3  = Z [V_i, W](y) dx^i
inline std::vector<PolyVectorField> augmented_fields(const PolyVectorFieldSet& v, const PolyVectorField* w) {
  const int e = v.state_dim;
  const AugmentedLayout lay{e, w != nullptr};
  const int n = lay.size();
  auto zinv = [&](int a, int c) { return Polynomial::variable(n, lay.inverse_offset() + a * e + c); };
  auto jfwd = [&](int c, int b) { return Polynomial::variable(n, lay.forward_offset() + c * e + b); };
  std::vector<PolyVectorField> out;
  for (int i = 0; i < v.driver_dim(); ++i) {
    const auto& vi = v[i];
    const auto dv = vi.jacobian();
    std::vector<Polynomial> comps(static_cast<std::size_t>(n), Polynomial(n));
    for (int a = 0; a < e; ++a) comps[a] = vi[a].embedded(n);
    for (int a = 0; a < e; ++a)
      for (int b = 0; b < e; ++b) {
        Polynomial inv(n), fwd(n);
        for (int c = 0; c < e; ++c) {
          const Polynomial dcb = dv[c][b].embedded(n);
          if (!dcb.is_zero()) inv -= zinv(a, c) * dcb;
          const Polynomial dac = dv[a][c].embedded(n);
          if (!dac.is_zero()) fwd += dac * jfwd(c, b);
        }
        comps[lay.inverse_offset() + a * e + b] = std::move(inv);
        comps[lay.forward_offset() + a * e + b] = std::move(fwd);
      }
    if (w) {
      const PolyVectorField br = lie_bracket(vi, *w);
      for (int a = 0; a < e; ++a) {
        Polynomial acc(n);
        for (int c = 0; c < e; ++c) {
          const Polynomial bc = br[c].embedded(n);
          if (!bc.is_zero()) acc += zinv(a, c) * bc;
        }
        comps[lay.transport_offset() + a] = std::move(acc);
      }
    }
    out.emplace_back(std::move(comps));
  }
  return out;
}

inline Trajectory solve(const PolyVectorFieldSet& v, const Eigen::VectorXd& y0, const PiecewiseLinearPath& path,
                        int m) {
  if (y0.size() != v.state_dim) throw std::invalid_argument("y0 dimension does not match the fields");
  if (path.dim() != v.driver_dim()) throw std::invalid_argument("drive dimension does not match the fields");
  const EulerStepper stepper(v.fields, m);
  Trajectory tr;
  tr.times = path.knots();
  tr.y = detail::run_scheme(stepper, y0, path);
  return tr;
}

inline Trajectory solve(const PolyVectorFieldSet& v, const Eigen::VectorXd& y0, const RoughDrive& drive, int m) {
  return solve(v, y0, drive.path, m);
}

namespace detail {

inline Trajectory augmented_solve(const PolyVectorFieldSet& v, const PolyVectorField* w, const Eigen::VectorXd& y0,
                                  const PiecewiseLinearPath& path, int m) {
  if (y0.size() != v.state_dim) throw std::invalid_argument("y0 dimension does not match the fields");
  if (path.dim() != v.driver_dim()) throw std::invalid_argument("drive dimension does not match the fields");
  const int e = v.state_dim;
  const AugmentedLayout lay{e, w != nullptr};
  const EulerStepper stepper(augmented_fields(v, w), m);
  Eigen::VectorXd z0 = Eigen::VectorXd::Zero(lay.size());
  z0.head(e) = y0;
  for (int a = 0; a < e; ++a) {
    z0[lay.inverse_offset() + a * e + a] = 1.0;
    z0[lay.forward_offset() + a * e + a] = 1.0;
  }
  if (w) z0.segment(lay.transport_offset(), e) = w->evaluate(y0);
  const auto zs = run_scheme(stepper, z0, path);
  Trajectory tr;
  tr.times = path.knots();
  for (const auto& z : zs) {
    tr.y.push_back(z.head(e));
    Eigen::MatrixXd inv(e, e), fwd(e, e);
    for (int a = 0; a < e; ++a)
      for (int b = 0; b < e; ++b) {
        inv(a, b) = z[lay.inverse_offset() + a * e + b];
        fwd(a, b) = z[lay.forward_offset() + a * e + b];
      }
    tr.jac_inverse.push_back(inv);
    tr.jac_forward.push_back(fwd);
    if (w) {
      tr.transport.push_back(z.segment(lay.transport_offset(), e));
      tr.transport_direct.push_back(inv * w->evaluate(tr.y.back()));
    }
  }
  return tr;
}

}  // namespace detail

/// y together with J_{t<-0} and J_{0<-t}, evolved as one polynomial system.
inline Trajectory jacobian_flow(const PolyVectorFieldSet& v, const Eigen::VectorXd& y0,
                                const PiecewiseLinearPath& path, int m) {
  return detail::augmented_solve(v, nullptr, y0, path, m);
}

inline Trajectory jacobian_flow(const PolyVectorFieldSet& v, const Eigen::VectorXd& y0, const RoughDrive& drive,
                                int m) {
  return jacobian_flow(v, y0, drive.path, m);
}

/// z3_t = J_{0<-t} W(y_t), both evolved and computed directly.
inline Trajectory bracket_transport(const PolyVectorFieldSet& v, const PolyVectorField& w, const Eigen::VectorXd& y0,
                                    const PiecewiseLinearPath& path, int m) {
  if (w.dim() != v.state_dim) throw std::invalid_argument("transported field has wrong dimension");
  return detail::augmented_solve(v, &w, y0, path, m);
}

inline Trajectory bracket_transport(const PolyVectorFieldSet& v, const PolyVectorField& w, const Eigen::VectorXd& y0,
                                    const RoughDrive& drive, int m) {
  return bracket_transport(v, w, y0, drive.path, m);
}

/// Cumulative trapezoidal integral of J_{0<-s}([V_i, W](y_s)) dx^i_s along
/// the trajectory; the right side of the transport identity.
inline std::vector<Eigen::VectorXd> transported_bracket_integral(const Trajectory& tr, const PolyVectorFieldSet& v,
                                                                 const PolyVectorField& w,
                                                                 const PiecewiseLinearPath& path) {
  if (!tr.has_jacobian()) throw std::invalid_argument("trajectory lacks Jacobian flows");
  const int d = v.driver_dim();
  std::vector<PolyVectorField> brackets;
  for (int i = 0; i < d; ++i) brackets.push_back(lie_bracket(v[i], w));
  auto integrand = [&](std::size_t j, int i) { return Eigen::VectorXd(tr.jac_inverse[j] * brackets[i].evaluate(tr.y[j])); };
  std::vector<Eigen::VectorXd> out;
  out.push_back(Eigen::VectorXd::Zero(v.state_dim));
  for (std::size_t j = 0; j + 1 < tr.times.size(); ++j) {
    const auto dx = path.increment(j);
    Eigen::VectorXd step = Eigen::VectorXd::Zero(v.state_dim);
    for (int i = 0; i < d; ++i) step += 0.5 * (integrand(j, i) + integrand(j + 1, i)) * dx[i];
    out.push_back(out.back() + step);
  }
  return out;
}

/// D_h U_{t<-0} = sum_s sum_i J_{t<-s} V_i(y_s) (h^i_{s+1} - h^i_s), left
/// points, from a trajectory carrying Jacobians. h is d x (M+1).
inline Eigen::VectorXd directional_derivative(const Trajectory& tr, const PolyVectorFieldSet& v,
                                              const Eigen::MatrixXd& h, std::size_t t_index) {
  if (!tr.has_jacobian()) throw std::invalid_argument("trajectory lacks Jacobian flows");
  if (h.rows() != v.driver_dim() || h.cols() != static_cast<Eigen::Index>(tr.times.size()))
    throw std::invalid_argument("perturbation must be d x (grid size)");
  if (t_index >= tr.times.size()) throw std::invalid_argument("evaluation index beyond the grid");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(v.state_dim);
  for (std::size_t s = 0; s < t_index; ++s) {
    Eigen::VectorXd inner = Eigen::VectorXd::Zero(v.state_dim);
    for (int i = 0; i < v.driver_dim(); ++i) {
      const double dh = h(i, static_cast<Eigen::Index>(s + 1)) - h(i, static_cast<Eigen::Index>(s));
      if (dh != 0.0) inner += v[i].evaluate(tr.y[s]) * dh;
    }
    acc += tr.jac_inverse[s] * inner;
  }
  return tr.jac_forward[t_index] * acc;
}

inline Eigen::VectorXd directional_derivative(const PolyVectorFieldSet& v, const Eigen::VectorXd& y0,
                                              const PiecewiseLinearPath& path, const Eigen::MatrixXd& h,
                                              std::size_t t_index, int m = 3) {
  return directional_derivative(jacobian_flow(v, y0, path, m), v, h, t_index);
}

/// The path x + eps * h on the same knots.
inline PiecewiseLinearPath translate(const PiecewiseLinearPath& path, const Eigen::MatrixXd& h, double eps) {
  auto vals = path.values();
  for (std::size_t j = 0; j < vals.size(); ++j)
    for (int i = 0; i < path.dim(); ++i) vals[j][i] += eps * h(i, static_cast<Eigen::Index>(j));
  return {path.knots(), std::move(vals)};
}

}  // namespace gaussrde
