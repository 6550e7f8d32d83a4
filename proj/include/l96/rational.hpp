#pragma once

#include <gmpxx.h>

#include <string>
#include <vector>

#include "l96/matrix.hpp"

namespace l96 {

using Rational = mpq_class;
using RationalMatrix = Matrix<Rational>;
using RationalVector = std::vector<Rational>;

/// Always "num/den", also for integers, so dumps parse uniformly.
inline std::string to_fraction_string(const Rational& q) {
  return q.get_num().get_str() + "/" + q.get_den().get_str();
}

inline Rational parse_fraction(const std::string& s) {
  Rational q(s, 10);
  q.canonicalize();
  return q;
}

inline RationalMatrix to_rational(const IntMatrix& m) {
  RationalMatrix r(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) r(i, j) = Rational(m(i, j));
  return r;
}

/// E_{i,j} in 1-based indices, n x n.
inline RationalMatrix elementary(std::size_t n, std::size_t i, std::size_t j) {
  RationalMatrix e(n, n);
  e(i - 1, j - 1) = 1;
  return e;
}

inline RationalMatrix from_row_major(const RationalVector& v, std::size_t n) {
  RationalMatrix m(n, n);
  m.data() = v;
  return m;
}

}  // namespace l96
