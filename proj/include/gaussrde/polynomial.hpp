#pragma once

// Sparse multivariate polynomials and polynomial vector fields. Terms are
// kept in an ordered map keyed by exponent vectors, so iteration order and
// therefore every evaluation is deterministic. Exact zero coefficients are
// erased after every operation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gaussrde {

using Exponents = std::vector<int>;

class Polynomial {
 public:
  Polynomial() = default;
  explicit Polynomial(int nvars) : nvars_(nvars) {
    if (nvars < 0) throw std::invalid_argument("polynomial needs nonnegative variable count");
  }

  static Polynomial constant(int nvars, double c) {
    Polynomial p(nvars);
    p.add_term(Exponents(static_cast<std::size_t>(nvars), 0), c);
    return p;
  }

  static Polynomial variable(int nvars, int var, double c = 1.0) {
    Polynomial p(nvars);
    Exponents e(static_cast<std::size_t>(nvars), 0);
    e.at(static_cast<std::size_t>(var)) = 1;
    p.add_term(std::move(e), c);
    return p;
  }

  int nvars() const { return nvars_; }
  const std::map<Exponents, double>& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  std::size_t term_count() const { return terms_.size(); }

  void add_term(Exponents e, double c) {
    if (static_cast<int>(e.size()) != nvars_) throw std::invalid_argument("exponent vector has wrong length");
    for (int x : e)
      if (x < 0) throw std::invalid_argument("negative exponent");
    if (c == 0.0) return;
    auto [it, inserted] = terms_.try_emplace(std::move(e), c);
    if (!inserted) {
      it->second += c;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  int degree() const {
    int d = -1;
    for (const auto& [e, c] : terms_) {
      int s = 0;
      for (int x : e) s += x;
      d = std::max(d, s);
    }
    return d;
  }

  double evaluate(const double* y) const {
    double acc = 0.0;
    for (const auto& [e, c] : terms_) {
      double m = c;
      for (int v = 0; v < nvars_; ++v)
        for (int k = 0; k < e[v]; ++k) m *= y[v];
      acc += m;
    }
    return acc;
  }
  double evaluate(const Eigen::VectorXd& y) const {
    check_point(y.size());
    return evaluate(y.data());
  }

  Polynomial derivative(int var) const {
    if (var < 0 || var >= nvars_) throw std::out_of_range("derivative variable out of range");
    Polynomial out(nvars_);
    for (const auto& [e, c] : terms_) {
      if (e[var] == 0) continue;
      Exponents f = e;
      f[var] -= 1;
      out.add_term(std::move(f), c * e[var]);
    }
    return out;
  }

  /// Same polynomial viewed in `nvars` >= nvars() variables, variable v
  /// mapped to v + offset.
  Polynomial embedded(int nvars, int offset = 0) const {
    if (offset < 0 || offset + nvars_ > nvars) throw std::invalid_argument("embedding out of range");
    Polynomial out(nvars);
    for (const auto& [e, c] : terms_) {
      Exponents f(static_cast<std::size_t>(nvars), 0);
      std::copy(e.begin(), e.end(), f.begin() + offset);
      out.add_term(std::move(f), c);
    }
    return out;
  }

  Polynomial& operator+=(const Polynomial& o) {
    check_vars(o);
    for (const auto& [e, c] : o.terms_) add_term(e, c);
    return *this;
  }
  Polynomial& operator-=(const Polynomial& o) {
    check_vars(o);
    for (const auto& [e, c] : o.terms_) add_term(e, -c);
    return *this;
  }
  Polynomial& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto& [e, c] : terms_) c *= s;
    return *this;
  }

  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }
  friend Polynomial operator*(double s, Polynomial a) { return a *= s; }
  Polynomial operator-() const { return *this * -1.0; }

  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    a.check_vars(b);
    Polynomial out(a.nvars_);
    for (const auto& [ea, ca] : a.terms_)
      for (const auto& [eb, cb] : b.terms_) {
        Exponents e(ea.size());
        for (std::size_t v = 0; v < e.size(); ++v) e[v] = ea[v] + eb[v];
        out.add_term(std::move(e), ca * cb);
      }
    return out;
  }

  friend bool operator==(const Polynomial& a, const Polynomial& b) {
    return a.nvars_ == b.nvars_ && a.terms_ == b.terms_;
  }

 private:
  void check_vars(const Polynomial& o) const {
    if (o.nvars_ != nvars_) throw std::invalid_argument("polynomials in different variable counts");
  }
  void check_point(Eigen::Index n) const {
    if (n != nvars_) throw std::invalid_argument("evaluation point has wrong dimension");
  }

  int nvars_ = 0;
  std::map<Exponents, double> terms_;
};

/// e polynomial components on R^e.
class PolyVectorField {
 public:
  PolyVectorField() = default;
  explicit PolyVectorField(int dim) : comps_(static_cast<std::size_t>(dim), Polynomial(dim)) {}
  explicit PolyVectorField(std::vector<Polynomial> comps) : comps_(std::move(comps)) {
    for (const auto& p : comps_)
      if (p.nvars() != dim()) throw std::invalid_argument("vector field component has wrong variable count");
  }

  /// Constant field c.
  static PolyVectorField constant(const std::vector<double>& c) {
    const int e = static_cast<int>(c.size());
    PolyVectorField f(e);
    for (int i = 0; i < e; ++i) f.comps_[i] = Polynomial::constant(e, c[i]);
    return f;
  }

  /// Linear field y -> A y.
  static PolyVectorField linear(const Eigen::MatrixXd& a) {
    const int e = static_cast<int>(a.rows());
    if (a.cols() != e) throw std::invalid_argument("linear field needs a square matrix");
    PolyVectorField f(e);
    for (int i = 0; i < e; ++i)
      for (int j = 0; j < e; ++j)
        if (a(i, j) != 0.0) f.comps_[i] += Polynomial::variable(e, j, a(i, j));
    return f;
  }

  int dim() const { return static_cast<int>(comps_.size()); }
  const Polynomial& operator[](int i) const { return comps_[static_cast<std::size_t>(i)]; }
  Polynomial& operator[](int i) { return comps_[static_cast<std::size_t>(i)]; }
  const std::vector<Polynomial>& components() const { return comps_; }

  bool is_zero() const {
    return std::all_of(comps_.begin(), comps_.end(), [](const Polynomial& p) { return p.is_zero(); });
  }

  Eigen::VectorXd evaluate(const Eigen::VectorXd& y) const {
    if (y.size() != dim()) throw std::invalid_argument("evaluation point has wrong dimension");
    Eigen::VectorXd out(dim());
    for (int i = 0; i < dim(); ++i) out[i] = comps_[i].evaluate(y.data());
    return out;
  }

  /// DF as a matrix of polynomials: entry (i, j) = d F_i / d y_j.
  std::vector<std::vector<Polynomial>> jacobian() const {
    std::vector<std::vector<Polynomial>> j(comps_.size());
    for (std::size_t i = 0; i < comps_.size(); ++i)
      for (int v = 0; v < dim(); ++v) j[i].push_back(comps_[i].derivative(v));
    return j;
  }

  Eigen::MatrixXd evaluate_jacobian(const Eigen::VectorXd& y) const {
    Eigen::MatrixXd out(dim(), dim());
    for (int i = 0; i < dim(); ++i)
      for (int v = 0; v < dim(); ++v) out(i, v) = comps_[i].derivative(v).evaluate(y.data());
    return out;
  }

  PolyVectorField& operator+=(const PolyVectorField& o) {
    check(o);
    for (std::size_t i = 0; i < comps_.size(); ++i) comps_[i] += o.comps_[i];
    return *this;
  }
  PolyVectorField& operator-=(const PolyVectorField& o) {
    check(o);
    for (std::size_t i = 0; i < comps_.size(); ++i) comps_[i] -= o.comps_[i];
    return *this;
  }
  PolyVectorField& operator*=(double s) {
    for (auto& p : comps_) p *= s;
    return *this;
  }
  friend PolyVectorField operator+(PolyVectorField a, const PolyVectorField& b) { return a += b; }
  friend PolyVectorField operator-(PolyVectorField a, const PolyVectorField& b) { return a -= b; }
  friend PolyVectorField operator*(PolyVectorField a, double s) { return a *= s; }
  friend PolyVectorField operator*(double s, PolyVectorField a) { return a *= s; }
  friend bool operator==(const PolyVectorField& a, const PolyVectorField& b) { return a.comps_ == b.comps_; }

 private:
  void check(const PolyVectorField& o) const {
    if (o.dim() != dim()) throw std::invalid_argument("vector fields of different dimension");
  }
  std::vector<Polynomial> comps_;
};

/// (A . grad) F for a vector of functions F sharing A's variables: DF * A.
inline std::vector<Polynomial> directional_derivative(const std::vector<Polynomial>& f, const PolyVectorField& a) {
  std::vector<Polynomial> out;
  out.reserve(f.size());
  for (const auto& fi : f) {
    Polynomial acc(a.dim());
    for (int v = 0; v < a.dim(); ++v) {
      if (a[v].is_zero()) continue;
      const Polynomial dv = fi.derivative(v);
      if (dv.is_zero()) continue;
      acc += dv * a[v];
    }
    out.push_back(std::move(acc));
  }
  return out;
}

/// Driving fields V_1..V_d on R^e plus an optional extra field W.
struct PolyVectorFieldSet {
  int state_dim = 0;
  std::vector<PolyVectorField> fields;
  std::optional<PolyVectorField> extra;

  PolyVectorFieldSet() = default;
  PolyVectorFieldSet(int e, std::vector<PolyVectorField> v, std::optional<PolyVectorField> w = std::nullopt)
      : state_dim(e), fields(std::move(v)), extra(std::move(w)) {
    if (fields.empty()) throw std::invalid_argument("field set needs at least one driving field");
    for (const auto& f : fields)
      if (f.dim() != e) throw std::invalid_argument("driving field has wrong state dimension");
    if (extra && extra->dim() != e) throw std::invalid_argument("extra field has wrong state dimension");
  }

  int driver_dim() const { return static_cast<int>(fields.size()); }
  const PolyVectorField& operator[](int i) const { return fields[static_cast<std::size_t>(i)]; }
};

/// Flattened form of a list of polynomials for fast repeated evaluation.
class CompiledPolynomials {
 public:
  CompiledPolynomials() = default;
  explicit CompiledPolynomials(const std::vector<Polynomial>& polys) {
    outputs_ = polys.size();
    nvars_ = polys.empty() ? 0 : polys.front().nvars();
    std::vector<int> max_pow(static_cast<std::size_t>(nvars_), 0);
    for (std::size_t o = 0; o < polys.size(); ++o) {
      if (polys[o].nvars() != nvars_) throw std::invalid_argument("compiled polynomials need equal variable counts");
      for (const auto& [e, c] : polys[o].terms()) {
        Term t{o, c, factors_.size(), 0};
        for (int v = 0; v < nvars_; ++v)
          if (e[v] > 0) {
            factors_.push_back({v, e[v]});
            max_pow[v] = std::max(max_pow[v], e[v]);
            ++t.nfactors;
          }
        terms_.push_back(t);
      }
    }
    pow_offset_.resize(static_cast<std::size_t>(nvars_) + 1, 0);
    for (int v = 0; v < nvars_; ++v) pow_offset_[v + 1] = pow_offset_[v] + static_cast<std::size_t>(max_pow[v]) + 1;
  }

  std::size_t outputs() const { return outputs_; }
  int nvars() const { return nvars_; }

  /// out.size() == outputs().
  void evaluate(const double* y, double* out) const {
    thread_local std::vector<double> pows;
    pows.resize(pow_offset_.empty() ? 0 : pow_offset_.back());
    for (int v = 0; v < nvars_; ++v) {
      double* p = pows.data() + pow_offset_[v];
      const std::size_t n = pow_offset_[v + 1] - pow_offset_[v];
      p[0] = 1.0;
      for (std::size_t k = 1; k < n; ++k) p[k] = p[k - 1] * y[v];
    }
    std::fill(out, out + outputs_, 0.0);
    for (const auto& t : terms_) {
      double m = t.coef;
      for (std::size_t f = t.first; f < t.first + t.nfactors; ++f)
        m *= pows[pow_offset_[factors_[f].var] + static_cast<std::size_t>(factors_[f].exp)];
      out[t.output] += m;
    }
  }

 private:
  struct Term {
    std::size_t output;
    double coef;
    std::size_t first;
    std::size_t nfactors;
  };
  struct Factor {
    int var;
    int exp;
  };
  std::size_t outputs_ = 0;
  int nvars_ = 0;
  std::vector<Term> terms_;
  std::vector<Factor> factors_;
  std::vector<std::size_t> pow_offset_;
};

}  // namespace gaussrde
