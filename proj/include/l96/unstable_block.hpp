#pragma once

// Exact certificate for the 4x4 block of the transverse generator at
// y = a e_0 + b e_3, acting on span{e_1, e_2, e_4, e_5}.

#include <string>
#include <vector>

#include "l96/core_model.hpp"
#include "l96/errors.hpp"
#include "l96/rational.hpp"

namespace l96 {

/// Characteristic polynomial det(t I - A) by Faddeev-LeVerrier; coeffs[i]
/// multiplies t^i, coeffs[n] == 1.
inline RationalVector charpoly(const RationalMatrix& a) {
  if (!a.square()) throw DimensionError("charpoly: square matrix required");
  const std::size_t n = a.rows();
  RationalVector c(n + 1);
  c[n] = 1;
  RationalMatrix m(n, n);  // M_0 = 0
  const auto id = RationalMatrix::identity(n);
  for (std::size_t k = 1; k <= n; ++k) {
    m = a * m + id * c[n - k + 1];
    c[n - k] = -(a * m).trace() / Rational(static_cast<long>(k));
  }
  return c;
}

inline RationalVector poly_mul(const RationalVector& p, const RationalVector& q) {
  RationalVector r(p.size() + q.size() - 1);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < q.size(); ++j) r[i + j] += p[i] * q[j];
  return r;
}

struct UnstableBlock {
  Rational a, b;
  RationalMatrix matrix{4, 4};
  RationalVector charpoly;  // ascending powers
  RationalVector factored;  // (b^2 + t^2)(a^2 - ab + t^2), ascending powers
  bool factored_check = false;
  // Roots: +-i*imag_part and +-sqrt(radicand).
  Rational imag_part;
  Rational radicand;
  bool unstable = false;  // radicand > 0: a real positive eigenvalue

  std::string roots_string() const {
    return "+-i*" + to_fraction_string(imag_part) + ", +-sqrt(" + to_fraction_string(radicand) + ")";
  }
};

inline UnstableBlock unstable_block(const Rational& a, const Rational& b) {
  UnstableBlock u;
  u.a = a;
  u.b = b;
  auto& m = u.matrix;
  m(0, 1) = a;
  m(1, 0) = b - a;
  m(2, 1) = -b;
  m(2, 3) = b;
  m(3, 2) = -b;
  u.charpoly = charpoly(m);
  u.factored = poly_mul({b * b, 0, 1}, {a * a - a * b, 0, 1});
  u.factored_check = u.charpoly == u.factored;
  u.imag_part = abs(b);
  u.radicand = a * (b - a);
  u.unstable = u.radicand > 0;
  return u;
}

/// Principal submatrix of transverse_generator(a e_0 + b e_3) on the compact
/// indices of {1, 2, 4, 5}, plus whether every entry coupling this block to
/// the remaining transverse coordinates vanishes.
struct GeneratorBlock {
  RationalMatrix block{4, 4};
  bool invariant = false;
};

inline GeneratorBlock generator_block(const Rational& a, const Rational& b, std::size_t N) {
  if (N < 9 || N % 3 != 0) throw DomainError("generator_block: N must be a multiple of 3 with N >= 9");
  const SubspaceIndexing idx(N);
  const std::size_t n = idx.transverse_dim();
  RationalMatrix g(n, n);
  const auto m0 = m_k_entries(0, N), m3 = m_k_entries(3, N);
  for (const auto& e : m0) g(e.row, e.col) += a * Rational(e.value);
  for (const auto& e : m3) g(e.row, e.col) += b * Rational(e.value);

  GeneratorBlock r;
  std::vector<std::size_t> in;
  for (std::size_t orig : {1, 2, 4, 5}) in.push_back(static_cast<std::size_t>(idx.to_compact[orig]));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) r.block(i, j) = g(in[i], in[j]);
  auto inside = [&](std::size_t c) { return c == in[0] || c == in[1] || c == in[2] || c == in[3]; };
  r.invariant = true;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (inside(i) != inside(j) && inside(j) && g(i, j) != 0) r.invariant = false;
  return r;
}

}  // namespace l96
