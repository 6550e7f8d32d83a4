#pragma once

// Time integration of the damped, degenerately forced Lorenz-96 SDE
//
//   du = (B(u,u) - eps u) dt + sqrt(eps) sum_j sigma_j dW^j,
//
// the Ornstein-Uhlenbeck base process on H_I, noise-coupled pairs and the
// super-Lyapunov drift probe.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "l96/config.hpp"
#include "l96/core_model.hpp"
#include "l96/errors.hpp"
#include "l96/parallel.hpp"
#include "l96/rng.hpp"
#include "l96/stats.hpp"

namespace l96 {

/// Allocation-free Euler-Maruyama stepping for one configuration.
///
/// Noise is drawn once per step, one standard normal per coordinate with
/// sigma_j > 0 in ascending index order (the K forced modes in degenerate
/// mode). Taming scales the drift increment by 1/(1 + dt |X_0(u)|).
class EmStepper {
 public:
  explicit EmStepper(const L96Config& cfg) : cfg_(cfg), drift_(cfg.N), noise_scale_(cfg.N, 0.0) {
    cfg_.validate();
    const double root = std::sqrt(cfg.epsilon * cfg.dt);
    for (std::size_t j = 0; j < cfg.N; ++j)
      if (cfg.sigma[j] > 0.0) {
        noisy_.push_back(j);
        noise_scale_[j] = root * cfg.sigma[j];
      }
    xi_.resize(noisy_.size());
  }

  const L96Config& config() const { return cfg_; }
  std::size_t noise_count() const { return noisy_.size(); }

  void draw(NoiseStream& noise, std::span<double> xi) const {
    for (double& x : xi) x = noise.normal();
  }

  /// Drift increment only (no noise), in place.
  void drift_step(std::span<double> u) {
    compute_drift(u);
    apply_drift(u);
  }

  void step(std::span<double> u, NoiseStream& noise, std::size_t step_index = 0) {
    draw(noise, xi_);
    step_with(u, xi_, step_index);
  }

  /// One step with externally supplied normals (shared by coupled pairs).
  void step_with(std::span<double> u, std::span<const double> xi, std::size_t step_index = 0) {
    compute_drift(u);
    apply_drift(u);
    for (std::size_t m = 0; m < noisy_.size(); ++m) u[noisy_[m]] += noise_scale_[noisy_[m]] * xi[m];
    for (double x : u)
      if (!std::isfinite(x))
        throw BlowUpError("EM step produced a non-finite state", step_index,
                          static_cast<double>(step_index + 1) * cfg_.dt);
  }

 private:
  void compute_drift(std::span<const double> u) {
    const std::size_t n = cfg_.N;
    for (std::size_t j = 0; j < n; ++j) {
      const double up1 = u[j + 1 < n ? j + 1 : j + 1 - n];
      const double um1 = u[j >= 1 ? j - 1 : j + n - 1];
      const double um2 = u[j >= 2 ? j - 2 : j + n - 2];
      drift_[j] = (up1 - um2) * um1 - cfg_.epsilon * u[j];
    }
  }

  void apply_drift(std::span<double> u) const {
    double scale = cfg_.dt;
    if (cfg_.tamed) {
      double norm2 = 0.0;
      for (double d : drift_) norm2 += d * d;
      scale = cfg_.dt / (1.0 + cfg_.dt * std::sqrt(norm2));
    }
    for (std::size_t j = 0; j < cfg_.N; ++j) u[j] += scale * drift_[j];
  }

  L96Config cfg_;
  std::vector<double> drift_;
  std::vector<double> noise_scale_;
  std::vector<std::size_t> noisy_;
  std::vector<double> xi_;
};

/// One (tamed, unless cfg.tamed is false) Euler-Maruyama step.
inline StateVector step_em(const StateVector& u, const L96Config& cfg, NoiseStream& noise,
                           std::size_t step_index = 0) {
  if (u.size() != cfg.N) throw DimensionError("step_em: state length differs from N");
  if (!u.all_finite()) throw BlowUpError("step_em: non-finite input state", step_index);
  EmStepper stepper(cfg);
  StateVector out = u;
  stepper.step(out.values(), noise, step_index);
  return out;
}

struct Trajectory {
  std::vector<double> times;
  std::vector<StateVector> states;
  std::optional<double> blow_up_time;

  bool blew_up() const { return blow_up_time.has_value(); }
  const StateVector& final_state() const { return states.back(); }
};

inline std::size_t step_count(double horizon, double dt) {
  if (!(horizon > 0.0)) throw DomainError("horizon must be positive");
  return static_cast<std::size_t>(std::llround(horizon / dt));
}

/// Integrates the full SDE up to time T, recording every `thin`-th state
/// (t = 0 included). A non-finite state ends the run and is recorded in
/// `blow_up_time`; the offending state is not stored.
inline Trajectory simulate(const StateVector& u0, const L96Config& cfg, double T, std::size_t thin = 1,
                           std::uint64_t stream_id = 0) {
  if (u0.size() != cfg.N) throw DimensionError("simulate: initial state length differs from N");
  if (thin == 0) thin = 1;
  EmStepper stepper(cfg);
  NoiseStream noise(cfg.seed, stream_id);
  const std::size_t steps = step_count(T, cfg.dt);
  Trajectory traj;
  StateVector u = u0;
  traj.times.push_back(0.0);
  traj.states.push_back(u);
  for (std::size_t n = 0; n < steps; ++n) {
    try {
      stepper.step(u.values(), noise, n);
    } catch (const BlowUpError& e) {
      traj.blow_up_time = e.time();
      return traj;
    }
    if ((n + 1) % thin == 0) {
      traj.times.push_back(static_cast<double>(n + 1) * cfg.dt);
      traj.states.push_back(u);
    }
  }
  return traj;
}

enum class OuMode { exact, euler };

/// The Ornstein-Uhlenbeck process dy = -eps y dt + sqrt(eps) sigma dW on H_I.
/// Exact mode uses the closed-form transition
/// y' = y e^{-eps dt} + sigma sqrt((1 - e^{-2 eps dt}) / 2) xi.
class OuStepper {
 public:
  OuStepper(const L96Config& cfg, OuMode mode) : mode_(mode) {
    const double e = std::exp(-cfg.epsilon * cfg.dt);
    decay_ = mode == OuMode::exact ? e : 1.0 - cfg.epsilon * cfg.dt;
    noise_ = mode == OuMode::exact ? std::sqrt((1.0 - e * e) / 2.0) : std::sqrt(cfg.epsilon * cfg.dt);
    for (std::size_t j = 0; j < cfg.N; j += 3) forced_sigma_.push_back(cfg.sigma[j]);
  }

  std::size_t K() const { return forced_sigma_.size(); }
  OuMode mode() const { return mode_; }

  // Advances the K forced coordinates in place.
  void step(std::span<double> forced, NoiseStream& noise) const {
    for (std::size_t m = 0; m < forced.size(); ++m)
      forced[m] = decay_ * forced[m] + forced_sigma_[m] * noise_ * noise.normal();
  }

  /// Draws each forced coordinate from the stationary law N(0, sigma^2 / 2).
  void sample_stationary(std::span<double> forced, NoiseStream& noise) const {
    for (std::size_t m = 0; m < forced.size(); ++m)
      forced[m] = forced_sigma_[m] * std::sqrt(0.5) * noise.normal();
  }

 private:
  OuMode mode_;
  double decay_;
  double noise_;
  std::vector<double> forced_sigma_;
};

inline Trajectory simulate_ou(const StateVector& y0, const L96Config& cfg, double T,
                              OuMode mode = OuMode::exact, std::size_t thin = 1, std::uint64_t stream_id = 0) {
  if (y0.size() != cfg.N) throw DimensionError("simulate_ou: initial state length differs from N");
  if (!in_invariant_subspace(y0)) throw DomainError("simulate_ou: y0 is not in H_I");
  if (thin == 0) thin = 1;
  OuStepper ou(cfg, mode);
  NoiseStream noise(cfg.seed, stream_id);
  std::vector<double> forced(ou.K());
  for (std::size_t m = 0; m < forced.size(); ++m) forced[m] = y0[3 * m];
  auto embed = [&] {
    StateVector y(cfg.N);
    for (std::size_t m = 0; m < forced.size(); ++m) y[3 * m] = forced[m];
    return y;
  };
  const std::size_t steps = step_count(T, cfg.dt);
  Trajectory traj;
  traj.times.push_back(0.0);
  traj.states.push_back(y0);
  for (std::size_t n = 0; n < steps; ++n) {
    ou.step(forced, noise);
    if ((n + 1) % thin == 0) {
      traj.times.push_back(static_cast<double>(n + 1) * cfg.dt);
      traj.states.push_back(embed());
    }
  }
  return traj;
}

struct CoupledPairResult {
  std::vector<double> times;
  std::vector<double> distance;
  bool synchronized = false;
  std::optional<double> sync_time;  // first time the distance fell below threshold
  std::optional<double> blow_up_time;
};

/// Integrates u and v with one shared noise realization and records |u - v|
/// every `thin` steps. With `stop_on_sync` the run ends at the first
/// synchronization time.
inline CoupledPairResult coupled_pair(const StateVector& u0, const StateVector& v0, const L96Config& cfg,
                                      double T, double threshold = 1e-6, std::size_t thin = 1000,
                                      std::uint64_t stream_id = 0, bool stop_on_sync = true) {
  if (u0.size() != cfg.N || v0.size() != cfg.N) throw DimensionError("coupled_pair: state length differs from N");
  if (thin == 0) thin = 1;
  EmStepper su(cfg), sv(cfg);
  NoiseStream noise(cfg.seed, stream_id);
  std::vector<double> xi(su.noise_count());
  StateVector u = u0, v = v0;
  CoupledPairResult out;
  auto record = [&](double t) {
    const double d = (u - v).norm();
    if (!out.synchronized && d < threshold) {
      out.synchronized = true;
      out.sync_time = t;
    }
    return d;
  };
  out.times.push_back(0.0);
  out.distance.push_back(record(0.0));
  if (out.synchronized && stop_on_sync) return out;
  const std::size_t steps = step_count(T, cfg.dt);
  for (std::size_t n = 0; n < steps; ++n) {
    su.draw(noise, xi);
    try {
      su.step_with(u.values(), xi, n);
      sv.step_with(v.values(), xi, n);
    } catch (const BlowUpError& e) {
      out.blow_up_time = e.time();
      return out;
    }
    const double t = static_cast<double>(n + 1) * cfg.dt;
    const bool was_synced = out.synchronized;
    const double d = record(t);
    if ((n + 1) % thin == 0 || (out.synchronized && !was_synced)) {
      out.times.push_back(t);
      out.distance.push_back(d);
    }
    if (out.synchronized && stop_on_sync) break;
  }
  return out;
}

/// Largest admissible exponent for V_eta(u) = exp(eta |u|^2).
inline double super_lyapunov_threshold(const L96Config& cfg) {
  const double s = cfg.max_forced_sigma();
  return 1.0 / (8.0 * s * s);
}

struct SuperLyapunovPoint {
  StateVector u0;
  double log_sup_ratio = 0.0;    // log E[sup_{t<=T} V(u_t)] - log V(u0)
  double sup_ratio = 0.0;        // exp of the above (may be +inf)
  double sup_ratio_stderr = 0.0; // delta-method stderr of sup_ratio
  double log_mean_final = 0.0;   // log E[V(u_T)]
  std::size_t rejected = 0;      // paths that blew up
};

struct SuperLyapunovReport {
  double eta = 0.0;
  double eta_star = 0.0;
  double horizon = 0.0;
  std::size_t paths = 0;
  std::vector<SuperLyapunovPoint> points;
  double max_ratio = 0.0;
  std::size_t rejected = 0;
};

/// Monte Carlo estimate of E[sup_{t<=T} V_eta(u_t)] / V_eta(u0) for each
/// initial state, evaluated in log space. Path m of grid point g uses noise
/// stream g * paths + m.
inline SuperLyapunovReport super_lyapunov_probe(const L96Config& cfg, double eta,
                                                const std::vector<StateVector>& grid, double T, std::size_t M,
                                                std::size_t threads = 1) {
  const double eta_star = super_lyapunov_threshold(cfg);
  if (!(eta > 0.0 && eta < eta_star)) throw DomainError("super_lyapunov_probe: need 0 < eta < eta_*");
  if (M == 0) throw DomainError("super_lyapunov_probe: need at least one path");
  SuperLyapunovReport rep;
  rep.eta = eta;
  rep.eta_star = eta_star;
  rep.horizon = T;
  rep.paths = M;
  rep.points.resize(grid.size());
  const std::size_t steps = step_count(T, cfg.dt);
  parallel_for(grid.size(), threads, [&](std::size_t g) {
    const StateVector& u0 = grid[g];
    if (u0.size() != cfg.N) throw DimensionError("super_lyapunov_probe: grid state length differs from N");
    EmStepper stepper(cfg);
    std::vector<double> log_sup, log_final;
    std::size_t rejected = 0;
    for (std::size_t m = 0; m < M; ++m) {
      NoiseStream noise(cfg.seed, g * M + m);
      StateVector u = u0;
      double sup2 = u.norm2();
      try {
        for (std::size_t n = 0; n < steps; ++n) {
          stepper.step(u.values(), noise, n);
          sup2 = std::max(sup2, u.norm2());
        }
      } catch (const BlowUpError&) {
        ++rejected;
        continue;
      }
      if (!std::isfinite(sup2)) {
        ++rejected;
        continue;
      }
      log_sup.push_back(eta * sup2);
      log_final.push_back(eta * u.norm2());
    }
    SuperLyapunovPoint& p = rep.points[g];
    p.u0 = u0;
    p.rejected = rejected;
    const double log_v0 = eta * u0.norm2();
    p.log_sup_ratio = stats::log_mean_exp(log_sup) - log_v0;
    p.sup_ratio = std::exp(p.log_sup_ratio);
    p.log_mean_final = stats::log_mean_exp(log_final);
    // stderr of mean(exp(x - log_v0)) computed on the shifted scale
    std::vector<double> r(log_sup.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::exp(log_sup[i] - log_v0);
    p.sup_ratio_stderr = stats::standard_error(r);
  });
  for (const auto& p : rep.points) {
    rep.max_ratio = std::max(rep.max_ratio, p.sup_ratio);
    rep.rejected += p.rejected;
  }
  return rep;
}

/// Initial states at the given radii, `directions` uniformly random
/// directions per radius (radius 0 contributes the origin once).
inline std::vector<StateVector> radial_grid(std::size_t N, const std::vector<double>& radii, std::size_t directions,
                                            std::uint64_t seed) {
  NoiseStream noise(seed, 0xD1CEu);
  std::vector<StateVector> grid;
  for (double r : radii) {
    if (r == 0.0) {
      grid.emplace_back(N);
      continue;
    }
    for (std::size_t d = 0; d < directions; ++d) {
      StateVector u(N);
      for (std::size_t j = 0; j < N; ++j) u[j] = noise.normal();
      u *= r / u.norm();
      grid.push_back(u);
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Export

/// Shortest text that round-trips a double exactly.
inline std::string format_double(double x) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const std::size_t n = traj.states.empty() ? 0 : traj.states.front().size();
  os << 't';
  for (std::size_t j = 0; j < n; ++j) os << ",u_" << j;
  os << '\n';
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    os << format_double(traj.times[i]);
    for (std::size_t j = 0; j < n; ++j) os << ',' << format_double(traj.states[i][j]);
    os << '\n';
  }
}

}  // namespace l96
