#pragma once

// Truncated tensor algebra T^N(R^d), the free step-N nilpotent group G^N(R^d)
// and signatures of piecewise-linear paths.
//
// Storage is dense: level k holds d^k coefficients, words are encoded in
// base d with the first letter most significant.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaussrde {

inline std::size_t ipow(std::size_t base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

class TruncatedTensor {
 public:
  TruncatedTensor() = default;

  TruncatedTensor(int dim, int level) : dim_(dim), level_(level) {
    if (dim < 1) throw std::invalid_argument("tensor dimension must be positive");
    if (level < 0) throw std::invalid_argument("tensor level must be nonnegative");
    offsets_.resize(static_cast<std::size_t>(level) + 2);
    offsets_[0] = 0;
    for (int k = 0; k <= level; ++k)
      offsets_[k + 1] = offsets_[k] + ipow(static_cast<std::size_t>(dim), k);
    data_.assign(offsets_.back(), 0.0);
  }

  static TruncatedTensor unit(int dim, int level) {
    TruncatedTensor t(dim, level);
    t.data_[0] = 1.0;
    return t;
  }

  /// e_i at level one (zero-based letter).
  static TruncatedTensor letter(int dim, int level, int i, double scale = 1.0) {
    TruncatedTensor t(dim, level);
    if (i < 0 || i >= dim) throw std::invalid_argument("letter index out of range");
    if (level >= 1) t.at(1, static_cast<std::size_t>(i)) = scale;
    return t;
  }

  static TruncatedTensor from_vector(int level, std::span<const double> v) {
    TruncatedTensor t(static_cast<int>(v.size()), level);
    if (level >= 1) std::copy(v.begin(), v.end(), t.level_span(1).begin());
    return t;
  }

  int dim() const { return dim_; }
  int level() const { return level_; }
  std::size_t size() const { return data_.size(); }

  double scalar() const { return data_[0]; }
  double& scalar() { return data_[0]; }

  std::size_t level_size(int k) const { return offsets_[k + 1] - offsets_[k]; }

  std::span<const double> level_span(int k) const {
    check_level(k);
    return {data_.data() + offsets_[k], level_size(k)};
  }
  std::span<double> level_span(int k) {
    check_level(k);
    return {data_.data() + offsets_[k], level_size(k)};
  }

  double at(int k, std::size_t word) const { return data_[offsets_[k] + word]; }
  double& at(int k, std::size_t word) { return data_[offsets_[k] + word]; }

  /// Coefficient of the word (i_1, ..., i_k), zero-based letters.
  double coeff(std::span<const int> word) const {
    const int k = static_cast<int>(word.size());
    if (k > level_) return 0.0;
    return at(k, encode(word));
  }

  std::size_t encode(std::span<const int> word) const {
    std::size_t idx = 0;
    for (int c : word) idx = idx * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(c);
    return idx;
  }

  std::span<const double> raw() const { return data_; }
  std::span<double> raw() { return data_; }

  /// Same dimension, higher or lower level (extra levels are zero).
  TruncatedTensor truncated(int level) const {
    TruncatedTensor t(dim_, level);
    const int common = std::min(level, level_);
    std::copy_n(data_.begin(), offsets_[common + 1], t.data_.begin());
    return t;
  }

  TruncatedTensor& operator+=(const TruncatedTensor& o) {
    check_compatible(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  TruncatedTensor& operator-=(const TruncatedTensor& o) {
    check_compatible(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  TruncatedTensor& operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
  }

  friend TruncatedTensor operator+(TruncatedTensor a, const TruncatedTensor& b) { return a += b; }
  friend TruncatedTensor operator-(TruncatedTensor a, const TruncatedTensor& b) { return a -= b; }
  friend TruncatedTensor operator*(TruncatedTensor a, double s) { return a *= s; }
  friend TruncatedTensor operator*(double s, TruncatedTensor a) { return a *= s; }
  TruncatedTensor operator-() const { return *this * -1.0; }

  void check_compatible(const TruncatedTensor& o) const {
    if (dim_ != o.dim_ || level_ != o.level_)
      throw std::invalid_argument("tensor mismatch: (d=" + std::to_string(dim_) + ", N=" +
                                  std::to_string(level_) + ") vs (d=" + std::to_string(o.dim_) +
                                  ", N=" + std::to_string(o.level_) + ")");
  }

  /// Largest absolute coefficient difference.
  double max_abs_diff(const TruncatedTensor& o) const {
    check_compatible(o);
    double m = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::abs(data_[i] - o.data_[i]));
    return m;
  }

  double level_norm(int k) const {
    double s = 0.0;
    for (double x : level_span(k)) s += x * x;
    return std::sqrt(s);
  }

 private:
  void check_level(int k) const {
    if (k < 0 || k > level_) throw std::out_of_range("tensor level out of range");
  }

  int dim_ = 0;
  int level_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<double> data_;
};

/// Truncated product: level k of the result is sum_j a^j (x) b^(k-j).
inline TruncatedTensor tensor_mul(const TruncatedTensor& a, const TruncatedTensor& b) {
  a.check_compatible(b);
  const int n = a.level();
  TruncatedTensor out(a.dim(), n);
  for (int k = 0; k <= n; ++k) {
    auto dst = out.level_span(k);
    for (int j = 0; j <= k; ++j) {
      const auto lhs = a.level_span(j);
      const auto rhs = b.level_span(k - j);
      const std::size_t stride = rhs.size();
      for (std::size_t u = 0; u < lhs.size(); ++u) {
        const double x = lhs[u];
        if (x == 0.0) continue;
        double* row = dst.data() + u * stride;
        for (std::size_t v = 0; v < stride; ++v) row[v] += x * rhs[v];
      }
    }
  }
  return out;
}

/// Truncated exponential series; input must have zero scalar part.
inline TruncatedTensor tensor_exp(const TruncatedTensor& a) {
  if (a.scalar() != 0.0) throw std::invalid_argument("exp requires zero scalar part");
  const int n = a.level();
  // Horner: 1 + a(1 + a/2(1 + a/3(...)))
  TruncatedTensor acc = TruncatedTensor::unit(a.dim(), n);
  for (int k = n; k >= 1; --k) {
    acc = tensor_mul(a, acc) * (1.0 / k);
    acc.scalar() += 1.0;
  }
  return acc;
}

/// Truncated logarithm series; input must have scalar part one.
inline TruncatedTensor tensor_log(const TruncatedTensor& g) {
  if (g.scalar() != 1.0) throw std::invalid_argument("log requires scalar part 1");
  const int n = g.level();
  TruncatedTensor x = g;
  x.scalar() = 0.0;
  // x - x^2/2 + x^3/3 - ... via Horner in x
  TruncatedTensor acc(g.dim(), n);
  for (int k = n; k >= 1; --k) {
    TruncatedTensor term = TruncatedTensor::unit(g.dim(), n) * ((k % 2 == 1 ? 1.0 : -1.0) / k);
    acc = tensor_mul(x, acc + term);
  }
  return acc;
}

/// Tensor commutator ab - ba.
inline TruncatedTensor tensor_commutator(const TruncatedTensor& a, const TruncatedTensor& b) {
  return tensor_mul(a, b) - tensor_mul(b, a);
}

/// Element of G^N(R^d): a tensor with scalar part one. Group-likeness of
/// the higher levels is a property of how the element was built (exp of a
/// Lie element, signature, products and inverses thereof).
class GroupElement {
 public:
  GroupElement() = default;

  explicit GroupElement(TruncatedTensor t) : t_(std::move(t)) {
    if (t_.scalar() != 1.0) throw std::invalid_argument("group element needs scalar part 1");
  }

  static GroupElement identity(int dim, int level) {
    return GroupElement(TruncatedTensor::unit(dim, level));
  }

  static GroupElement exp(const TruncatedTensor& lie) { return GroupElement(tensor_exp(lie)); }

  const TruncatedTensor& tensor() const { return t_; }
  int dim() const { return t_.dim(); }
  int level() const { return t_.level(); }

  TruncatedTensor log() const { return tensor_log(t_); }

  GroupElement inverse() const {
    // (1 + x)^-1 = sum_k (-x)^k, finite by nilpotency
    TruncatedTensor x = t_;
    x.scalar() = 0.0;
    x *= -1.0;
    TruncatedTensor acc = TruncatedTensor::unit(dim(), level());
    for (int k = 0; k < level(); ++k) {
      acc = tensor_mul(x, acc);
      acc.scalar() += 1.0;
    }
    return GroupElement(std::move(acc));
  }

  GroupElement truncated(int level) const { return GroupElement(t_.truncated(level)); }

  friend GroupElement operator*(const GroupElement& a, const GroupElement& b) {
    return GroupElement(tensor_mul(a.t_, b.t_));
  }

 private:
  TruncatedTensor t_;
};

/// Scales level k by lambda^k.
inline TruncatedTensor dilate(const TruncatedTensor& a, double lambda) {
  TruncatedTensor out = a;
  double f = 1.0;
  for (int k = 1; k <= a.level(); ++k) {
    f *= lambda;
    for (double& x : out.level_span(k)) x *= f;
  }
  return out;
}

inline GroupElement dilate(const GroupElement& g, double lambda) {
  return GroupElement(dilate(g.tensor(), lambda));
}

/// Homogeneous gauge max_k |g^k|^(1/k) with Euclidean level norms.
inline double hom_norm(const GroupElement& g) {
  double m = 0.0;
  for (int k = 1; k <= g.level(); ++k)
    m = std::max(m, std::pow(g.tensor().level_norm(k), 1.0 / k));
  return m;
}

/// d(g, h) = hom_norm(g^-1 h).
inline double group_distance(const GroupElement& g, const GroupElement& h) {
  return hom_norm(g.inverse() * h);
}

/// Largest deviation from the level-2 shuffle identity Sym(g^2) = g^1 (x) g^1 / 2.
inline double shuffle_defect_level2(const GroupElement& g) {
  if (g.level() < 2) return 0.0;
  const auto& t = g.tensor();
  const std::size_t d = static_cast<std::size_t>(g.dim());
  double m = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double sym = 0.5 * (t.at(2, i * d + j) + t.at(2, j * d + i));
      m = std::max(m, std::abs(sym - 0.5 * t.at(1, i) * t.at(1, j)));
    }
  return m;
}

/// Random element of the free Lie algebra truncated at `level`: a Gaussian
/// combination of right-nested brackets [e_i1, [e_i2, ... e_ik]] per level.
template <class Rng>
TruncatedTensor random_lie_element(int dim, int level, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  TruncatedTensor out(dim, level);
  if (level < 1) return out;
  std::vector<TruncatedTensor> prev;
  for (int i = 0; i < dim; ++i) prev.push_back(TruncatedTensor::letter(dim, level, i));
  for (const auto& e : prev) out += e * (scale * normal(rng));
  for (int k = 2; k <= level; ++k) {
    std::vector<TruncatedTensor> next;
    next.reserve(prev.size() * dim);
    for (int i = 0; i < dim; ++i)
      for (const auto& b : prev) next.push_back(tensor_commutator(TruncatedTensor::letter(dim, level, i), b));
    const double s = std::pow(scale, k);
    for (const auto& b : next) out += b * (s * normal(rng));
    prev = std::move(next);
  }
  return out;
}

class PiecewiseLinearPath {
 public:
  PiecewiseLinearPath() = default;

  /// values[j] is the R^d point at knots[j].
  PiecewiseLinearPath(std::vector<double> knots, std::vector<std::vector<double>> values)
      : knots_(std::move(knots)), values_(std::move(values)) {
    if (knots_.empty() || knots_.size() != values_.size())
      throw std::invalid_argument("path needs matching non-empty knots and values");
    if (knots_.front() != 0.0) throw std::invalid_argument("path must start at time 0");
    dim_ = static_cast<int>(values_.front().size());
    if (dim_ < 1) throw std::invalid_argument("path dimension must be positive");
    for (std::size_t j = 0; j < knots_.size(); ++j) {
      if (static_cast<int>(values_[j].size()) != dim_)
        throw std::invalid_argument("path values have inconsistent dimension");
      if (j > 0 && !(knots_[j] > knots_[j - 1]))
        throw std::invalid_argument("path knots must be strictly increasing");
    }
  }

  int dim() const { return dim_; }
  std::size_t segments() const { return knots_.empty() ? 0 : knots_.size() - 1; }
  const std::vector<double>& knots() const { return knots_; }
  const std::vector<std::vector<double>>& values() const { return values_; }
  double final_time() const { return knots_.back(); }

  std::vector<double> increment(std::size_t seg) const {
    std::vector<double> dx(static_cast<std::size_t>(dim_));
    for (int i = 0; i < dim_; ++i) dx[i] = values_[seg + 1][i] - values_[seg][i];
    return dx;
  }

  std::vector<double> value_at(double t) const {
    if (t <= knots_.front()) return values_.front();
    if (t >= knots_.back()) return values_.back();
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
    const std::size_t j = static_cast<std::size_t>(it - knots_.begin()) - 1;
    const double w = (t - knots_[j]) / (knots_[j + 1] - knots_[j]);
    std::vector<double> out(static_cast<std::size_t>(dim_));
    for (int i = 0; i < dim_; ++i) out[i] = values_[j][i] + w * (values_[j + 1][i] - values_[j][i]);
    return out;
  }

  /// Path run backwards on the same time span.
  PiecewiseLinearPath reversed() const {
    const double T = final_time();
    std::vector<double> k;
    std::vector<std::vector<double>> v;
    for (std::size_t j = knots_.size(); j-- > 0;) {
      k.push_back(T - knots_[j]);
      v.push_back(values_[j]);
    }
    return {std::move(k), std::move(v)};
  }

  /// This path followed by `next`, shifted to start where this one ends.
  PiecewiseLinearPath concat(const PiecewiseLinearPath& next) const {
    if (next.dim_ != dim_) throw std::invalid_argument("concat dimension mismatch");
    std::vector<double> k = knots_;
    std::vector<std::vector<double>> v = values_;
    const double t0 = final_time();
    for (std::size_t j = 1; j < next.knots_.size(); ++j) {
      k.push_back(t0 + next.knots_[j]);
      std::vector<double> p(static_cast<std::size_t>(dim_));
      for (int i = 0; i < dim_; ++i) p[i] = values_.back()[i] + next.values_[j][i] - next.values_[0][i];
      v.push_back(std::move(p));
    }
    return {std::move(k), std::move(v)};
  }

 private:
  int dim_ = 0;
  std::vector<double> knots_;
  std::vector<std::vector<double>> values_;
};

/// exp of a straight segment with displacement dx.
inline GroupElement segment_signature(std::span<const double> dx, int level) {
  return GroupElement::exp(TruncatedTensor::from_vector(level, dx));
}

/// Step-N signature over [s, t] by Chen's relation over linear pieces.
inline GroupElement signature_between(const PiecewiseLinearPath& path, double s, double t, int level) {
  GroupElement g = GroupElement::identity(path.dim(), level);
  if (!(t > s)) return g;
  const auto& k = path.knots();
  std::vector<double> a = path.value_at(s);
  double cur = s;
  std::size_t j = static_cast<std::size_t>(std::upper_bound(k.begin(), k.end(), s) - k.begin());
  while (cur < t) {
    const double next = (j < k.size()) ? std::min(k[j], t) : t;
    std::vector<double> b = path.value_at(next);
    std::vector<double> dx(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) dx[i] = b[i] - a[i];
    g = g * segment_signature(dx, level);
    a = std::move(b);
    cur = next;
    ++j;
  }
  return g;
}

inline GroupElement signature(const PiecewiseLinearPath& path, int level) {
  if (path.segments() < 1) throw std::invalid_argument("signature needs at least one segment");
  GroupElement g = GroupElement::identity(path.dim(), level);
  for (std::size_t j = 0; j < path.segments(); ++j) {
    const auto dx = path.increment(j);
    g = g * segment_signature(dx, level);
  }
  return g;
}

/// p-variation of the lifted path, sup taken over partitions whose points
/// are dyadic points of [0, T] up to `depth`. Exact over that family by
/// dynamic programming.
inline double p_variation(const PiecewiseLinearPath& path, int level, double p, int depth = 8) {
  if (!(p >= 1.0)) throw std::invalid_argument("p-variation needs p >= 1");
  if (depth < 0) throw std::invalid_argument("p-variation depth must be nonnegative");
  const std::size_t n = ipow(2, depth);
  const double T = path.final_time();
  std::vector<GroupElement> prefix;
  prefix.reserve(n + 1);
  prefix.push_back(GroupElement::identity(path.dim(), level));
  for (std::size_t j = 1; j <= n; ++j) {
    const double a = T * static_cast<double>(j - 1) / static_cast<double>(n);
    const double b = T * static_cast<double>(j) / static_cast<double>(n);
    prefix.push_back(prefix.back() * signature_between(path, a, b, level));
  }
  std::vector<GroupElement> inv;
  inv.reserve(prefix.size());
  for (const auto& g : prefix) inv.push_back(g.inverse());
  std::vector<double> best(n + 1, 0.0);
  for (std::size_t j = 1; j <= n; ++j) {
    double b = 0.0;
    for (std::size_t i = 0; i < j; ++i)
      b = std::max(b, best[i] + std::pow(hom_norm(inv[i] * prefix[j]), p));
    best[j] = b;
  }
  return std::pow(best[n], 1.0 / p);
}

}  // namespace gaussrde
