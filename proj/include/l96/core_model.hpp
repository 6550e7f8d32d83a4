#pragma once

// Deterministic building blocks of the Lorenz-96 model: the bilinear
// advection term, its Jacobian, the forced/transverse splitting of the
// coordinates and the transverse interaction matrices M_k.
//
// Indices are 0-based and cyclic mod N. The forced set is I = {0, 3, 6, ...}
// (index 0 is the same coordinate as index N); every other index is
// transverse.

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <vector>

#include "l96/errors.hpp"
#include "l96/matrix.hpp"

namespace l96 {

inline std::size_t wrap(long j, std::size_t n) {
  const long m = static_cast<long>(n);
  return static_cast<std::size_t>(((j % m) + m) % m);
}

/// A point u in R^N with cyclic index semantics.
class StateVector {
 public:
  StateVector() = default;
  explicit StateVector(std::size_t n) : v_(n, 0.0) {}
  explicit StateVector(std::vector<double> v) : v_(std::move(v)) {}
  StateVector(std::initializer_list<double> v) : v_(v) {}

  static StateVector basis(std::size_t n, long k) {
    StateVector e(n);
    e[wrap(k, n)] = 1.0;
    return e;
  }

  std::size_t size() const { return v_.size(); }
  double& operator[](std::size_t j) { return v_[j]; }
  double operator[](std::size_t j) const { return v_[j]; }
  // Cyclic access, any integer index.
  double at(long j) const { return v_[wrap(j, v_.size())]; }

  std::span<const double> values() const { return v_; }
  std::span<double> values() { return v_; }
  const std::vector<double>& vec() const { return v_; }

  double dot(const StateVector& o) const {
    check(o);
    return std::inner_product(v_.begin(), v_.end(), o.v_.begin(), 0.0);
  }
  double norm2() const { return dot(*this); }
  double norm() const { return std::sqrt(norm2()); }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  StateVector& operator+=(const StateVector& o) {
    check(o);
    for (std::size_t j = 0; j < v_.size(); ++j) v_[j] += o.v_[j];
    return *this;
  }
  StateVector& operator-=(const StateVector& o) {
    check(o);
    for (std::size_t j = 0; j < v_.size(); ++j) v_[j] -= o.v_[j];
    return *this;
  }
  StateVector& operator*=(double s) {
    for (double& x : v_) x *= s;
    return *this;
  }
  friend StateVector operator+(StateVector a, const StateVector& b) { return a += b; }
  friend StateVector operator-(StateVector a, const StateVector& b) { return a -= b; }
  friend StateVector operator*(double s, StateVector a) { return a *= s; }
  friend StateVector operator*(StateVector a, double s) { return a *= s; }
  friend bool operator==(const StateVector&, const StateVector&) = default;

 private:
  void check(const StateVector& o) const {
    if (o.v_.size() != v_.size()) throw DimensionError("state vectors differ in length");
  }

  std::vector<double> v_;
};

/// Forced/transverse index bookkeeping for a given N = 3K.
///
/// Compact transverse indexing is the order-preserving bijection
/// T = {1, 2, 4, 5, ..., N-2, N-1} -> {0, 1, ..., 2K-1}.
struct SubspaceIndexing {
  std::size_t N = 0;
  std::vector<std::size_t> forced;      // I, ascending
  std::vector<std::size_t> transverse;  // T, ascending; transverse[c] = original index
  std::vector<long> to_compact;         // length N, -1 on forced indices

  explicit SubspaceIndexing(std::size_t n) : N(n), to_compact(n, -1) {
    if (n == 0 || n % 3 != 0) throw DimensionError("N must be a positive multiple of 3");
    for (std::size_t j = 0; j < n; ++j) {
      if (j % 3 == 0) {
        forced.push_back(j);
      } else {
        to_compact[j] = static_cast<long>(transverse.size());
        transverse.push_back(j);
      }
    }
  }

  std::size_t K() const { return forced.size(); }
  std::size_t transverse_dim() const { return transverse.size(); }
  bool is_forced(long j) const { return wrap(j, N) % 3 == 0; }
  std::size_t from_compact(std::size_t c) const { return transverse.at(c); }
};

// w_j = (u_{j+1} - u_{j-2}) v_{j-1}
inline StateVector bilinear_b(const StateVector& u, const StateVector& v) {
  if (u.size() != v.size()) throw DimensionError("bilinear_b: u and v differ in length");
  const long n = static_cast<long>(u.size());
  StateVector w(u.size());
  for (long j = 0; j < n; ++j) w[j] = (u.at(j + 1) - u.at(j - 2)) * v.at(j - 1);
  return w;
}

/// X_0(u) = B(u,u) - epsilon u.
inline StateVector drift(const StateVector& u, double epsilon) {
  StateVector out = bilinear_b(u, u);
  for (std::size_t j = 0; j < u.size(); ++j) out[j] -= epsilon * u[j];
  if (!out.all_finite()) throw BlowUpError("drift produced a non-finite value");
  return out;
}

/// Matrix of v -> DB(u)v, where
/// (DB(u)v)_l = (v_{l+1} - v_{l-2}) u_{l-1} + (u_{l+1} - u_{l-2}) v_{l-1}.
inline RealMatrix jacobian_db(const StateVector& u) {
  const std::size_t n = u.size();
  const long ln = static_cast<long>(n);
  RealMatrix J(n, n);
  for (long l = 0; l < ln; ++l) {
    const double um1 = u.at(l - 1);
    J(l, wrap(l + 1, n)) += um1;
    J(l, wrap(l - 2, n)) -= um1;
    J(l, wrap(l - 1, n)) += u.at(l + 1) - u.at(l - 2);
  }
  return J;
}

inline StateVector project_invariant(const StateVector& u) {
  StateVector out(u.size());
  for (std::size_t j = 0; j < u.size(); j += 3) out[j] = u[j];
  return out;
}

inline StateVector project_transverse(const StateVector& u) {
  StateVector out = u;
  for (std::size_t j = 0; j < u.size(); j += 3) out[j] = 0.0;
  return out;
}

inline bool in_invariant_subspace(const StateVector& u) {
  for (std::size_t j = 0; j < u.size(); ++j)
    if (j % 3 != 0 && u[j] != 0.0) return false;
  return true;
}

/// One signed entry of a sparse matrix in compact transverse indexing.
struct SparseEntry {
  std::size_t row;
  std::size_t col;
  long value;
};

/// Sparse description of M_k = DB(e_k) restricted to the transverse space:
/// M_k = E_{k+1,k+2} - E_{k+1,k-1} + E_{k-1,k-2} - E_{k+2,k+1}, original
/// indices mod N, re-indexed compactly. Coincident positions (N < 9) are
/// summed and zeros dropped.
inline std::vector<SparseEntry> m_k_entries(long k, std::size_t n) {
  const SubspaceIndexing idx(n);
  if (!idx.is_forced(k)) throw IndexError("m_k: k = " + std::to_string(k) + " is not a forced index");
  auto c = [&](long j) { return static_cast<std::size_t>(idx.to_compact[wrap(j, n)]); };
  const SparseEntry raw[4] = {
      {c(k + 1), c(k + 2), +1},
      {c(k + 1), c(k - 1), -1},
      {c(k - 1), c(k - 2), +1},
      {c(k + 2), c(k + 1), -1},
  };
  std::vector<SparseEntry> out;
  for (const auto& e : raw) {
    bool merged = false;
    for (auto& o : out)
      if (o.row == e.row && o.col == e.col) {
        o.value += e.value;
        merged = true;
      }
    if (!merged) out.push_back(e);
  }
  std::erase_if(out, [](const SparseEntry& e) { return e.value == 0; });
  return out;
}

inline IntMatrix m_k_matrix(long k, std::size_t n) {
  const std::size_t d = 2 * (n / 3);
  IntMatrix m(d, d);
  for (const auto& e : m_k_entries(k, n)) m(e.row, e.col) += e.value;
  return m;
}

/// The matrix of DB(y) on the transverse space for y in H_I, i.e.
/// sum over k in I of y_k M_k, in compact indexing.
inline RealMatrix transverse_generator(const StateVector& y) {
  const std::size_t n = y.size();
  if (!in_invariant_subspace(y))
    throw DomainError("transverse_generator: y has a nonzero transverse component");
  const std::size_t d = 2 * (n / 3);
  RealMatrix g(d, d);
  for (std::size_t k = 0; k < n; k += 3) {
    if (y[k] == 0.0) continue;
    for (const auto& e : m_k_entries(static_cast<long>(k), n))
      g(e.row, e.col) += y[k] * static_cast<double>(e.value);
  }
  return g;
}

/// Precomputed sparse form of y -> G(y) for hot loops. `forced` holds the K
/// forced coordinates y_0, y_3, ... in order.
class TransverseOperator {
 public:
  explicit TransverseOperator(std::size_t n) : n_(n), dim_(2 * (n / 3)) {
    for (std::size_t k = 0; k < n; k += 3)
      for (const auto& e : m_k_entries(static_cast<long>(k), n))
        terms_.push_back({k / 3, e.row, e.col, static_cast<double>(e.value)});
  }

  std::size_t N() const { return n_; }
  std::size_t dim() const { return dim_; }

  // out = G(y) v
  void apply(std::span<const double> forced, std::span<const double> v, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& t : terms_) out[t.row] += t.value * forced[t.mode] * v[t.col];
  }

  void dense(std::span<const double> forced, RealMatrix& g) const {
    g = RealMatrix(dim_, dim_);
    for (const auto& t : terms_) g(t.row, t.col) += t.value * forced[t.mode];
  }

  double trace(std::span<const double> forced) const {
    double s = 0.0;
    for (const auto& t : terms_)
      if (t.row == t.col) s += t.value * forced[t.mode];
    return s;
  }

 private:
  struct Term {
    std::size_t mode;
    std::size_t row;
    std::size_t col;
    double value;
  };
  std::size_t n_;
  std::size_t dim_;
  std::vector<Term> terms_;
};

}  // namespace l96
