#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "l96/errors.hpp"

namespace l96 {

enum class ForcingMode {
  degenerate,  // sigma[j] > 0 exactly on j = 0 mod 3
  custom,      // arbitrary nonnegative sigma, for exploratory runs
};

inline std::string to_string(ForcingMode m) {
  return m == ForcingMode::degenerate ? "degenerate" : "custom";
}

inline ForcingMode forcing_mode_from_string(const std::string& s) {
  if (s == "degenerate") return ForcingMode::degenerate;
  if (s == "custom") return ForcingMode::custom;
  throw ConfigError("unknown forcing mode '" + s + "'");
}

/// Parameters of the damped, stochastically forced Lorenz-96 system.
///
/// `sigma` carries one amplitude per coordinate. In degenerate mode the
/// forcing pattern is validated once here; the integrators never re-check it.
struct L96Config {
  std::size_t N = 9;
  double epsilon = 1.0;
  std::vector<double> sigma;
  double dt = 1e-3;
  std::uint64_t seed = 0;
  ForcingMode mode = ForcingMode::degenerate;
  bool tamed = true;

  L96Config() : sigma(degenerate_sigma(9, 1.0)) {}

  L96Config(std::size_t n, double eps, std::vector<double> sig, double step, std::uint64_t sd,
            ForcingMode m = ForcingMode::degenerate, bool tame = true)
      : N(n), epsilon(eps), sigma(std::move(sig)), dt(step), seed(sd), mode(m), tamed(tame) {
    validate();
  }

  /// Degenerate forcing with the same amplitude on every forced mode.
  static L96Config degenerate(std::size_t n, double eps, double sigma_forced, double step = 1e-3,
                              std::uint64_t sd = 0) {
    return L96Config(n, eps, degenerate_sigma(n, sigma_forced), step, sd);
  }

  static std::vector<double> degenerate_sigma(std::size_t n, double amplitude) {
    std::vector<double> s(n, 0.0);
    for (std::size_t j = 0; j < n; j += 3) s[j] = amplitude;
    return s;
  }

  std::size_t K() const { return N / 3; }

  double max_forced_sigma() const {
    double m = 0.0;
    for (double s : sigma) m = std::max(m, std::abs(s));
    return m;
  }

  void validate() const {
    if (N == 0 || N % 3 != 0) throw ConfigError("N must be a positive multiple of 3");
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be finite and >= 0");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be finite and > 0");
    if (sigma.size() != N) throw ConfigError("sigma must have exactly N entries");
    for (std::size_t j = 0; j < N; ++j) {
      if (!(sigma[j] >= 0.0) || !std::isfinite(sigma[j]))
        throw ConfigError("sigma entries must be finite and >= 0");
      if (mode == ForcingMode::degenerate && ((j % 3 == 0) != (sigma[j] > 0.0)))
        throw ConfigError("degenerate forcing requires sigma[j] > 0 iff j = 0 mod 3 (index " +
                          std::to_string(j) + ")");
    }
  }

  friend bool operator==(const L96Config&, const L96Config&) = default;
};

}  // namespace l96
