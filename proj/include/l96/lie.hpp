#pragma once

// Exact rational reproduction of the bracket-generation argument for the
// transverse interaction matrices M_k: commutator closure tracked by an
// incremental reduced row-echelon basis, the cyclic shift symmetry, the
// standard generating set of sl_n and the Hoermander rank of the full
// process.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "l96/core_model.hpp"
#include "l96/errors.hpp"
#include "l96/rational.hpp"

namespace l96 {

inline RationalMatrix bracket(const RationalMatrix& a, const RationalMatrix& b) {
  if (!a.square() || !b.square() || a.rows() != b.rows())
    throw DimensionError("bracket: operands must be square of equal size");
  return a * b - b * a;
}

/// P A P^{-1} for the permutation P e_c = e_{c + 2 steps mod 2K} of the
/// compact transverse basis, so (P A P^{-1})_{s(i), s(j)} = A_{i,j}.
/// steps = 1 maps M_k to M_{k+3}; steps = -1 maps E_{i,j} to E_{i-2,j-2}.
inline RationalMatrix shift_conjugate(const RationalMatrix& a, std::size_t K, long steps = 1) {
  const std::size_t n = 2 * K;
  if (a.rows() != n || a.cols() != n) throw DimensionError("shift_conjugate: matrix must be 2K x 2K");
  RationalMatrix out(n, n);
  auto s = [&](std::size_t c) { return wrap(static_cast<long>(c) + 2 * steps, n); };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (a(i, j) != 0) out(s(i), s(j)) = a(i, j);
  return out;
}

/// Incremental fully reduced row-echelon basis of a subspace of Q^d.
///
/// Every basis vector has a pivot entry equal to 1 at its leftmost nonzero
/// position, and that pivot column is zero in every other basis vector, so a
/// single pass reduces any vector against the basis.
class SpanTracker {
 public:
  explicit SpanTracker(std::size_t ambient_dim) : dim_(ambient_dim) {}

  std::size_t ambient_dim() const { return dim_; }
  std::size_t rank() const { return basis_.size(); }
  const std::vector<RationalVector>& basis() const { return basis_; }
  const std::vector<std::size_t>& pivots() const { return pivots_; }

  RationalVector reduce(RationalVector v) const {
    check(v);
    for (std::size_t b = 0; b < basis_.size(); ++b) {
      const std::size_t p = pivots_[b];
      if (v[p] == 0) continue;
      const Rational c = v[p];
      const auto& row = basis_[b];
      for (std::size_t k = p; k < dim_; ++k)
        if (row[k] != 0) v[k] -= c * row[k];
    }
    return v;
  }

  bool contains(const RationalVector& v) const {
    for (const auto& x : reduce(v))
      if (x != 0) return false;
    return true;
  }

  /// Adds v to the span; returns true iff the rank increased.
  bool insert(const RationalVector& v) {
    RationalVector r = reduce(v);
    std::size_t q = 0;
    while (q < dim_ && r[q] == 0) ++q;
    if (q == dim_) return false;
    const Rational inv = 1 / r[q];
    for (std::size_t k = q; k < dim_; ++k)
      if (r[k] != 0) r[k] *= inv;
    for (auto& row : basis_) {
      if (row[q] == 0) continue;
      const Rational c = row[q];
      for (std::size_t k = q; k < dim_; ++k)
        if (r[k] != 0) row[k] -= c * r[k];
    }
    basis_.push_back(std::move(r));
    pivots_.push_back(q);
    return true;
  }

  bool contains(const RationalMatrix& m) const { return contains(m.data()); }
  bool insert(const RationalMatrix& m) { return insert(m.data()); }

  /// Checks the fully-reduced echelon invariants.
  bool well_formed() const {
    for (std::size_t b = 0; b < basis_.size(); ++b) {
      const auto& row = basis_[b];
      const std::size_t p = pivots_[b];
      if (row[p] != 1) return false;
      for (std::size_t k = 0; k < p; ++k)
        if (row[k] != 0) return false;
      for (std::size_t o = 0; o < basis_.size(); ++o)
        if (o != b && basis_[o][p] != 0) return false;
    }
    return basis_.size() <= dim_;
  }

 private:
  void check(const RationalVector& v) const {
    if (v.size() != dim_) throw DimensionError("SpanTracker: vector length differs from ambient dimension");
  }

  std::size_t dim_;
  std::vector<RationalVector> basis_;
  std::vector<std::size_t> pivots_;
};

/// Breadth-first commutator closure.
///
/// Level 0 inserts the generators. Level l+1 brackets every element retained
/// at level l with every generator and with every element retained up to
/// level l; a bracket is retained only if it raises the rank. Once a level
/// adds nothing, the span of the retained elements is closed under brackets.
class BracketClosure {
 public:
  explicit BracketClosure(std::vector<RationalMatrix> generators)
      : generators_(std::move(generators)),
        n_(generators_.empty() ? 0 : generators_.front().rows()),
        tracker_(n_ * n_) {
    for (const auto& g : generators_) {
      if (!g.square() || g.rows() != n_) throw DimensionError("closure: generators must be square of equal size");
      consider(g, 0);
    }
    frontier_end_ = elements_.size();
    if (generators_.empty()) stable_ = true;
  }

  /// Computes one more bracket level; returns true if it raised the rank.
  bool advance() {
    if (stable_) return false;
    const std::size_t frontier_begin = frontier_begin_;
    const std::size_t frontier_end = frontier_end_;
    const std::size_t snapshot = elements_.size();
    ++depth_;
    for (std::size_t f = frontier_begin; f < frontier_end; ++f) {
      for (const auto& g : generators_) consider(bracket(elements_[f], g), depth_);
      for (std::size_t r = 0; r < snapshot; ++r) {
        // [f, r] = -[r, f] for two frontier elements: compute once
        if (r == f || (r >= frontier_begin && r < f)) continue;
        consider(bracket(elements_[f], elements_[r]), depth_);
      }
    }
    frontier_begin_ = snapshot;
    frontier_end_ = elements_.size();
    const bool grew = frontier_end_ > snapshot;
    if (grew)
      last_growth_ = depth_;
    else
      stable_ = true;
    return grew;
  }

  void run(std::size_t depth_cap) {
    while (!stable_ && depth_ < depth_cap) advance();
  }

  std::size_t size() const { return n_; }
  std::size_t dim() const { return tracker_.rank(); }
  // Number of bracket levels computed so far.
  std::size_t depth() const { return depth_; }
  std::size_t last_growth_level() const { return last_growth_; }
  bool stable() const { return stable_; }
  bool all_traceless() const { return all_traceless_; }
  const SpanTracker& tracker() const { return tracker_; }
  SpanTracker& tracker() { return tracker_; }
  const std::vector<RationalMatrix>& elements() const { return elements_; }
  const std::vector<std::size_t>& levels() const { return levels_; }
  std::size_t brackets_computed() const { return brackets_; }

 private:
  void consider(const RationalMatrix& m, std::size_t level) {
    if (level > 0) ++brackets_;
    if (m.trace() != 0) all_traceless_ = false;
    if (tracker_.insert(m)) {
      elements_.push_back(m);
      levels_.push_back(level);
    }
  }

  std::vector<RationalMatrix> generators_;
  std::size_t n_;
  SpanTracker tracker_;
  std::vector<RationalMatrix> elements_;
  std::vector<std::size_t> levels_;
  std::size_t frontier_begin_ = 0;
  std::size_t frontier_end_ = 0;
  std::size_t depth_ = 0;
  std::size_t last_growth_ = 0;
  std::size_t brackets_ = 0;
  bool stable_ = false;
  bool all_traceless_ = true;
};

struct ClosureResult {
  SpanTracker tracker{0};
  std::vector<RationalMatrix> elements;
  std::size_t dim = 0;
  std::size_t depth_reached = 0;  // bracket levels computed
  std::size_t last_growth_level = 0;
  bool stable = false;
  bool all_traceless = true;
};

inline ClosureResult closure(const std::vector<RationalMatrix>& generators, std::size_t depth_cap) {
  if (depth_cap < 1) throw DomainError("closure: depthCap must be >= 1");
  BracketClosure c(generators);
  c.run(depth_cap);
  return {c.tracker(), c.elements(), c.dim(), c.depth(), c.last_growth_level(), c.stable(), c.all_traceless()};
}

/// Whether E_{i,j} (1-based) lies in the span tracked by `tracker`.
inline bool contains_elementary(const SpanTracker& tracker, std::size_t i, std::size_t j) {
  const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tracker.ambient_dim()))));
  if (n * n != tracker.ambient_dim()) throw DimensionError("contains_elementary: tracker is not over square matrices");
  if (i < 1 || j < 1 || i > n || j > n) throw IndexError("contains_elementary: index out of range");
  return tracker.contains(elementary(n, i, j));
}

/// M_k for every forced k in ascending order (M_0 stands for M_N).
inline std::vector<RationalMatrix> all_generators(std::size_t N) {
  std::vector<RationalMatrix> g;
  for (std::size_t k = 0; k < N; k += 3) g.push_back(to_rational(m_k_matrix(static_cast<long>(k), N)));
  return g;
}

/// {M_3, M_6, M_9}: the three generators of the local computation.
inline std::vector<RationalMatrix> local_generators(std::size_t N) {
  if (N < 9) throw DomainError("local generators need N >= 9");
  return {to_rational(m_k_matrix(3, N)), to_rational(m_k_matrix(6, N)), to_rational(m_k_matrix(9, N))};
}

struct GenerationReport {
  std::size_t N = 0;
  std::size_t dim = 0;
  std::size_t expected = 0;  // (2K)^2 - 1
  bool generated = false;
  std::size_t depth_used = 0;
  bool stable = false;
  bool all_traceless = true;
  double elapsed_seconds = 0.0;
};

/// Closure of all K generators, starting with depth 5 and escalating one
/// level at a time up to 16 until a level adds nothing.
inline GenerationReport verify_sl_generation(std::size_t N, std::size_t start_depth = 5, std::size_t depth_cap = 16,
                                             ClosureResult* keep = nullptr) {
  if (N == 0 || N % 3 != 0) throw DomainError("verify_sl_generation: N must be a positive multiple of 3");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n = 2 * (N / 3);
  BracketClosure c(all_generators(N));
  c.run(std::min(start_depth, depth_cap));
  while (!c.stable() && c.depth() < depth_cap) c.advance();
  GenerationReport r;
  r.N = N;
  r.dim = c.dim();
  r.expected = n * n - 1;
  r.generated = c.dim() == r.expected && c.all_traceless();
  r.depth_used = c.depth();
  r.stable = c.stable();
  r.all_traceless = c.all_traceless();
  r.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (keep) *keep = {c.tracker(), c.elements(), c.dim(), c.depth(), c.last_growth_level(), c.stable(), c.all_traceless()};
  return r;
}

struct ConjugationStep {
  std::size_t from_i, from_j;  // source E_{i,j}, 1-based
  std::size_t to_i, to_j;      // produced E_{i,j}
  long shift;                  // shift_conjugate steps used
  bool matches_formula;        // produced matrix equals E_{i -/+ 2, j -/+ 2}
  bool was_member;             // already in the span before insertion
};

struct GenerationPathReport {
  std::vector<ConjugationStep> chain;
  std::size_t inserted = 0;
  bool all_of_G_reached = false;
  std::size_t G_size = 0;
};

/// The standard generating set {E_{j+1,j} : j < n} and E_{1,n} of sl_n.
inline std::vector<RationalMatrix> standard_generators(std::size_t n) {
  std::vector<RationalMatrix> g;
  for (std::size_t j = 1; j < n; ++j) g.push_back(elementary(n, j + 1, j));
  g.push_back(elementary(n, 1, n));
  return g;
}

/// Replays the conjugation chains that carry the seeds E_{3,2}, E_{4,3},
/// E_{5,4} to all of {E_{j+1,j}} and E_{1,2K}: the wrap-around elements via
/// E_{i,j} -> E_{i-2,j-2} and the sub-diagonal via E_{i,j} -> E_{i+2,j+2}.
/// Each produced matrix is checked for span membership and inserted into
/// `tracker` when missing (the algebra is invariant under the shift).
inline GenerationPathReport lemma_gen_G_path(std::size_t N, SpanTracker& tracker) {
  if (N < 15 || N % 3 != 0) throw PreconditionError("lemma_gen_G_path: N must be a multiple of 3 with N >= 15");
  const std::size_t K = N / 3, n = 2 * K;
  if (tracker.ambient_dim() != n * n) throw DimensionError("lemma_gen_G_path: tracker dimension differs from (2K)^2");
  for (auto [i, j] : {std::pair{3, 2}, {4, 3}, {5, 4}})
    if (!contains_elementary(tracker, i, j))
      throw PreconditionError("lemma_gen_G_path: tracker lacks seed E_{" + std::to_string(i) + "," +
                              std::to_string(j) + "}");

  GenerationPathReport rep;
  auto conj = [&](std::size_t i, std::size_t j, long steps) {
    const RationalMatrix produced = shift_conjugate(elementary(n, i, j), K, steps);
    const std::size_t ti = wrap(static_cast<long>(i) - 1 + 2 * steps, n) + 1;
    const std::size_t tj = wrap(static_cast<long>(j) - 1 + 2 * steps, n) + 1;
    ConjugationStep s{i, j, ti, tj, steps, produced == elementary(n, ti, tj), tracker.contains(produced)};
    if (!s.was_member && tracker.insert(produced)) ++rep.inserted;
    rep.chain.push_back(s);
  };
  conj(4, 3, -1);  // E_{2,1}
  conj(3, 2, -1);  // E_{1,2K}
  for (std::size_t j = 3; j + 3 <= n; j += 2) conj(j + 1, j, +1);  // E_{4,3} -> E_{6,5} -> ...
  for (std::size_t j = 4; j + 3 <= n; j += 2) conj(j + 1, j, +1);  // E_{5,4} -> E_{7,6} -> ...

  const auto G = standard_generators(n);
  rep.G_size = G.size();
  rep.all_of_G_reached = true;
  for (const auto& g : G) rep.all_of_G_reached = rep.all_of_G_reached && tracker.contains(g);
  return rep;
}

struct StandardGeneratorsReport {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::size_t expected = 0;
  bool generated = false;
  std::size_t depth = 0;
};

inline StandardGeneratorsReport standard_generators_check(std::size_t n, std::size_t depth_cap = 4 * 12) {
  if (n < 2) throw DomainError("standard_generators_check: n >= 2 required");
  auto c = closure(standard_generators(n), depth_cap);
  return {n, c.dim, n * n - 1, c.dim == n * n - 1, c.depth_reached};
}

/// Embeds a 2K x 2K transverse matrix as an N x N matrix acting on H_I^perp
/// (forced rows and columns zero).
inline RationalMatrix embed_transverse(const RationalMatrix& a, std::size_t N) {
  const SubspaceIndexing idx(N);
  if (a.rows() != idx.transverse_dim() || !a.square()) throw DimensionError("embed_transverse: expected 2K x 2K");
  RationalMatrix out(N, N);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(idx.from_compact(i), idx.from_compact(j)) = a(i, j);
  return out;
}

enum class RankMode { exact, floating };

/// What hormander_rank_at demands of its basis. `spans_sl` is the default;
/// `traceless` accepts any traceless family, e.g. the closure of the M_k.
enum class BasisCheck { spans_sl, traceless };

struct HormanderRank {
  std::size_t rank = 0;
  bool full_rank = false;
};

/// Rank at u of {e_k : k in I} together with {M Pi^perp u : M in slBasis}
/// embedded in R^N. Exact mode converts u to rationals (doubles convert
/// exactly); floating mode uses an SVD with tolerance 1e-9 * top singular value.
inline HormanderRank hormander_rank_at(const StateVector& u, const std::vector<RationalMatrix>& sl_basis,
                                       RankMode mode = RankMode::exact,
                                       BasisCheck check = BasisCheck::spans_sl) {
  const std::size_t N = u.size();
  const SubspaceIndexing idx(N);
  const std::size_t n = idx.transverse_dim();
  if (!u.all_finite()) throw DomainError("hormander_rank_at: non-finite state");
  SpanTracker span_check(n * n);
  for (const auto& m : sl_basis) {
    if (m.rows() != n || !m.square()) throw DimensionError("hormander_rank_at: basis matrices must be 2K x 2K");
    if (m.trace() != 0) throw PreconditionError("hormander_rank_at: basis element is not traceless");
    span_check.insert(m);
  }
  if (check == BasisCheck::spans_sl && span_check.rank() != n * n - 1) throw PreconditionError("hormander_rank_at: slBasis does not span sl_2K");

  RationalVector w(n);
  for (std::size_t c = 0; c < n; ++c) w[c] = Rational(u[idx.from_compact(c)]);

  std::vector<RationalVector> family;
  for (std::size_t k : idx.forced) {
    RationalVector e(N);
    e[k] = 1;
    family.push_back(std::move(e));
  }
  for (const auto& m : sl_basis) {
    const RationalVector mw = m.apply(w);
    RationalVector e(N);
    for (std::size_t c = 0; c < n; ++c) e[idx.from_compact(c)] = mw[c];
    family.push_back(std::move(e));
  }

  HormanderRank r;
  if (mode == RankMode::exact) {
    SpanTracker t(N);
    for (const auto& v : family) t.insert(v);
    r.rank = t.rank();
  } else {
    Eigen::MatrixXd a(static_cast<Eigen::Index>(family.size()), static_cast<Eigen::Index>(N));
    for (std::size_t i = 0; i < family.size(); ++i)
      for (std::size_t j = 0; j < N; ++j) a(i, j) = family[i][j].get_d();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
    const auto& s = svd.singularValues();
    const double tol = 1e-9 * (s.size() ? s(0) : 0.0);
    for (Eigen::Index i = 0; i < s.size(); ++i)
      if (s(i) > tol) ++r.rank;
  }
  r.full_rank = r.rank == N;
  return r;
}

/// One row per basis vector, row-major vectorized, entries as "num/den".
inline void write_basis_csv(std::ostream& os, const SpanTracker& tracker) {
  for (const auto& row : tracker.basis()) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k) os << ',';
      os << to_fraction_string(row[k]);
    }
    os << '\n';
  }
}

}  // namespace l96
