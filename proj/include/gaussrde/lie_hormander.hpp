#pragma once

// Iterated Lie brackets of polynomial vector fields, the Hormander span
// (H)_r and the group-contracted span (HT)_r.
//
// Sign convention: [A, B] = DB * A - DA * B.

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaussrde/polynomial.hpp"
#include "gaussrde/tensor_algebra.hpp"

namespace gaussrde {

using Word = std::vector<int>;

inline std::string word_label(const Word& w) {
  std::string s = "[";
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(w[i] + 1);
  }
  return s + "]";
}

/// Letters of word number `idx` of length k over d letters, first letter most significant.
inline Word decode_word(std::size_t idx, int k, int d) {
  Word w(static_cast<std::size_t>(k));
  for (int p = k - 1; p >= 0; --p) {
    w[p] = static_cast<int>(idx % static_cast<std::size_t>(d));
    idx /= static_cast<std::size_t>(d);
  }
  return w;
}

inline PolyVectorField lie_bracket(const PolyVectorField& a, const PolyVectorField& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("lie bracket of fields with different dimension");
  std::vector<Polynomial> db_a = directional_derivative(b.components(), a);
  const std::vector<Polynomial> da_b = directional_derivative(a.components(), b);
  for (std::size_t i = 0; i < db_a.size(); ++i) db_a[i] -= da_b[i];
  return PolyVectorField(std::move(db_a));
}

/// V_I for every multi-index with 1 <= |I| <= r, right-nested:
/// V_(i, I') = [V_i, V_I'].
struct BracketTable {
  int max_length = 0;
  std::map<Word, PolyVectorField> entries;

  const PolyVectorField& at(const Word& w) const { return entries.at(w); }
};

inline BracketTable bracket_table(const PolyVectorFieldSet& v, int r) {
  if (r < 1) throw std::invalid_argument("bracket table needs r >= 1");
  BracketTable t;
  t.max_length = r;
  const int d = v.driver_dim();
  std::vector<Word> prev;
  for (int i = 0; i < d; ++i) {
    t.entries.emplace(Word{i}, v[i]);
    prev.push_back({i});
  }
  for (int k = 2; k <= r; ++k) {
    std::vector<Word> next;
    for (int i = 0; i < d; ++i)
      for (const auto& w : prev) {
        Word u{i};
        u.insert(u.end(), w.begin(), w.end());
        t.entries.emplace(u, lie_bracket(v[i], t.entries.at(w)));
        next.push_back(std::move(u));
      }
    prev = std::move(next);
  }
  return t;
}

/// [V_w1, [V_w2, ... [V_wk, W]]] for every word with |w| <= depth, indexed
/// [k][word number]; level 0 holds W itself.
inline std::vector<std::vector<PolyVectorField>> nested_brackets(const PolyVectorFieldSet& v, const PolyVectorField& w,
                                                                 int depth) {
  const int d = v.driver_dim();
  std::vector<std::vector<PolyVectorField>> out(static_cast<std::size_t>(depth) + 1);
  out[0].push_back(w);
  for (int k = 1; k <= depth; ++k) {
    const auto& prev = out[k - 1];
    out[k].reserve(prev.size() * static_cast<std::size_t>(d));
    // word (i, u) has number i * d^(k-1) + number(u)
    for (int i = 0; i < d; ++i)
      for (const auto& b : prev) out[k].push_back(lie_bracket(v[i], b));
  }
  return out;
}

inline std::vector<std::vector<Eigen::VectorXd>> evaluate_nested(
    const std::vector<std::vector<PolyVectorField>>& table, const Eigen::VectorXd& y0) {
  std::vector<std::vector<Eigen::VectorXd>> out(table.size());
  for (std::size_t k = 0; k < table.size(); ++k)
    for (const auto& f : table[k]) out[k].push_back(f.evaluate(y0));
  return out;
}

struct RankResult {
  int rank = 0;
  std::vector<double> singular_values;
  double tolerance = 0.0;
};

/// Singular values below 1e-9 * max(largest, 1) count as zero.
inline RankResult numerical_rank(const Eigen::MatrixXd& columns, double rel_tol = 1e-9) {
  RankResult r;
  if (columns.cols() == 0 || columns.rows() == 0) return r;
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(columns);
  const Eigen::VectorXd s = svd.singularValues();
  r.singular_values.assign(s.data(), s.data() + s.size());
  r.tolerance = rel_tol * std::max(s.size() ? s(0) : 0.0, 1.0);
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > r.tolerance) ++r.rank;
  return r;
}

inline Eigen::MatrixXd stack_columns(const std::vector<Eigen::VectorXd>& v, Eigen::Index rows) {
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(v.size()));
  for (std::size_t j = 0; j < v.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = v[j];
  return m;
}

struct SpanReport {
  Eigen::VectorXd y0;
  int r = 0;
  int rank = 0;
  std::vector<Eigen::VectorXd> vectors;
  std::vector<std::string> labels;
  std::vector<double> singular_values;
  double tolerance = 0.0;
  // (HT)_r only: the two inclusions between the (HT)_r and (H)_r spans.
  bool within_bracket_span = true;
  bool covers_bracket_span = true;
  int bracket_rank = 0;

  bool full_rank() const { return rank == static_cast<int>(y0.size()); }
};

/// Rank of {V_I(y0) : |I| <= r}.
inline SpanReport hormander_rank(const PolyVectorFieldSet& v, const Eigen::VectorXd& y0, int r) {
  if (y0.size() != v.state_dim) throw std::invalid_argument("y0 dimension does not match the fields");
  const BracketTable table = bracket_table(v, r);
  SpanReport rep;
  rep.y0 = y0;
  rep.r = r;
  // shortest words first, each length in lexicographic order
  for (int k = 1; k <= r; ++k)
    for (const auto& [w, f] : table.entries)
      if (static_cast<int>(w.size()) == k) {
        rep.vectors.push_back(f.evaluate(y0));
        rep.labels.push_back("V" + word_label(w));
      }
  const auto rk = numerical_rank(stack_columns(rep.vectors, y0.size()));
  rep.rank = rk.rank;
  rep.singular_values = rk.singular_values;
  rep.tolerance = rk.tolerance;
  rep.bracket_rank = rk.rank;
  return rep;
}

/// pi_{k-1}(g) . [V, ..., V, W](y0), from brackets already evaluated at y0
/// (see evaluate_nested). Level k-1 must exist in both g and the table.
inline Eigen::VectorXd contract_evaluated(const TruncatedTensor& g, int k,
                                          const std::vector<std::vector<Eigen::VectorXd>>& evaluated) {
  if (k < 1) throw std::invalid_argument("contraction order must be >= 1");
  if (k - 1 > g.level()) throw std::invalid_argument("contraction order exceeds group level + 1");
  if (k == 1) return g.scalar() * evaluated.at(0).at(0);
  const auto coeffs = g.level_span(k - 1);
  const auto& brackets = evaluated.at(static_cast<std::size_t>(k - 1));
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(brackets.front().size());
  for (std::size_t w = 0; w < coeffs.size(); ++w)
    if (coeffs[w] != 0.0) acc += coeffs[w] * brackets[w];
  return acc;
}

/// The k = 1 convention pi_0(g) . W = W holds since g has scalar part one.
inline Eigen::VectorXd contract_bracket(const GroupElement& g, int k, const PolyVectorFieldSet& v,
                                        const PolyVectorField& w, const Eigen::VectorXd& y0) {
  if (k < 1 || k - 1 > g.level()) throw std::invalid_argument("contraction order must satisfy 1 <= k <= level + 1");
  if (g.dim() != v.driver_dim()) throw std::invalid_argument("group dimension must equal the number of fields");
  const auto table = evaluate_nested(nested_brackets(v, w, k - 1), y0);
  return contract_evaluated(g.tensor(), k, table);
}

/// Rank of the (HT)_r span, sampling g in G^{r-1}(R^d) from two families:
/// products exp(t_1 e_j1) ... exp(t_{k-1} e_j(k-1)) over every word, at
/// random t, and exp of random Lie elements. Both inclusions against the
/// (H)_r span are checked and reported.
inline SpanReport ht_rank(const PolyVectorFieldSet& v, const Eigen::VectorXd& y0, int r, int n_group_samples,
                          std::uint64_t seed) {
  if (n_group_samples < 1) throw std::invalid_argument("ht_rank needs at least one group sample");
  if (r < 1) throw std::invalid_argument("ht_rank needs r >= 1");
  if (y0.size() != v.state_dim) throw std::invalid_argument("y0 dimension does not match the fields");
  const int d = v.driver_dim();
  const int level = r - 1;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<GroupElement> group;
  group.push_back(GroupElement::identity(d, level));
  for (int len = 1; len <= level; ++len) {
    const std::size_t nw = ipow(static_cast<std::size_t>(d), len);
    for (std::size_t idx = 0; idx < nw; ++idx) {
      const Word w = decode_word(idx, len, d);
      for (int s = 0; s < n_group_samples; ++s) {
        GroupElement g = GroupElement::identity(d, level);
        for (int letter : w) g = g * GroupElement::exp(TruncatedTensor::letter(d, level, letter, normal(rng)));
        group.push_back(std::move(g));
      }
    }
  }
  if (level >= 1)
    for (int s = 0; s < n_group_samples; ++s) group.push_back(GroupElement::exp(random_lie_element(d, level, rng)));

  std::vector<std::vector<std::vector<Eigen::VectorXd>>> evaluated;
  for (int i = 0; i < d; ++i) evaluated.push_back(evaluate_nested(nested_brackets(v, v[i], level), y0));

  SpanReport rep;
  rep.y0 = y0;
  rep.r = r;
  for (std::size_t gi = 0; gi < group.size(); ++gi)
    for (int k = 1; k <= r; ++k) {
      if (k == 1 && gi > 0) continue;  // pi_0(g) = 1 for every g
      for (int i = 0; i < d; ++i) {
        rep.vectors.push_back(contract_evaluated(group[gi].tensor(), k, evaluated[i]));
        rep.labels.push_back("g" + std::to_string(gi) + ".k" + std::to_string(k) + ".V" + std::to_string(i + 1));
      }
    }
  const Eigen::MatrixXd ht = stack_columns(rep.vectors, y0.size());
  const auto rk = numerical_rank(ht);
  rep.rank = rk.rank;
  rep.singular_values = rk.singular_values;
  rep.tolerance = rk.tolerance;

  const SpanReport h = hormander_rank(v, y0, r);
  const Eigen::MatrixXd hm = stack_columns(h.vectors, y0.size());
  Eigen::MatrixXd joint(y0.size(), ht.cols() + hm.cols());
  joint << ht, hm;
  const int joint_rank = numerical_rank(joint).rank;
  rep.bracket_rank = h.rank;
  rep.within_bracket_span = joint_rank == h.rank;
  rep.covers_bracket_span = joint_rank == rep.rank;
  return rep;
}

}  // namespace gaussrde
