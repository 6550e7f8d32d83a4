#pragma once

// Transverse linearization of the Lorenz-96 SDE along the OU base process on
// H_I, and estimators for the top transverse Lyapunov exponent, the
// determinant rate and the moment Lyapunov exponent Lambda(p).

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "l96/config.hpp"
#include "l96/core_model.hpp"
#include "l96/errors.hpp"
#include "l96/parallel.hpp"
#include "l96/rng.hpp"
#include "l96/sde.hpp"
#include "l96/stats.hpp"

namespace l96 {

/// State (y, v) of the projective process plus the accumulated log|w_t|.
/// `y` holds the K forced coordinates y_0, y_3, ...; `v` is a unit vector in
/// compact transverse indexing.
struct TransverseFrame {
  std::vector<double> y;
  std::vector<double> v;
  double log_norm = 0.0;
  double t = 0.0;
};

inline void normalize(std::span<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double inv = 1.0 / std::sqrt(s);
  for (double& x : v) x *= inv;
}

/// Uniform direction on the unit sphere of R^d.
inline std::vector<double> random_unit_vector(std::size_t d, NoiseStream& noise) {
  std::vector<double> v(d);
  for (double& x : v) x = noise.normal();
  normalize(v);
  return v;
}

/// Advances TransverseFrame by one dt.
///
/// v follows the projective ODE dv/dt = G v - v <v, G v> with G = G(y_n)
/// frozen over the step (explicit midpoint rule, then renormalization);
/// log_norm gains dt (<v_mid, G v_mid> - eps) at the normalized midpoint;
/// finally y takes one OU step.
class TransverseStepper {
 public:
  TransverseStepper(const L96Config& cfg, OuMode mode = OuMode::exact)
      : cfg_(cfg), op_(cfg.N), ou_(cfg, mode), k1_(op_.dim()), mid_(op_.dim()), gv_(op_.dim()) {
    cfg_.validate();
  }

  const L96Config& config() const { return cfg_; }
  std::size_t dim() const { return op_.dim(); }
  const TransverseOperator& op() const { return op_; }
  const OuStepper& ou() const { return ou_; }

  /// Frame with y drawn from the OU stationary law and v uniform.
  TransverseFrame initial_frame(NoiseStream& noise) const {
    TransverseFrame f;
    f.y.resize(ou_.K());
    ou_.sample_stationary(f.y, noise);
    f.v = random_unit_vector(op_.dim(), noise);
    return f;
  }

  /// <v, G(y) v> - eps at the current frame (the Furstenberg-Khasminskii integrand).
  double fk_integrand(const TransverseFrame& f) {
    op_.apply(f.y, f.v, gv_);
    return dot(f.v, gv_) - cfg_.epsilon;
  }

  /// Projective step with y held fixed; returns the log-norm increment.
  double projective_step(std::span<const double> y, std::span<double> v) {
    const double dt = cfg_.dt;
    // k1 = f(v)
    op_.apply(y, v, gv_);
    const double q1 = dot(v, gv_);
    for (std::size_t i = 0; i < v.size(); ++i) k1_[i] = gv_[i] - q1 * v[i];
    for (std::size_t i = 0; i < v.size(); ++i) mid_[i] = v[i] + 0.5 * dt * k1_[i];
    normalize(mid_);
    // k2 = f(v_mid)
    op_.apply(y, mid_, gv_);
    const double q2 = dot(mid_, gv_);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += dt * (gv_[i] - q2 * mid_[i]);
    normalize(v);
    return dt * (q2 - cfg_.epsilon);
  }

  void step(TransverseFrame& f, NoiseStream& noise) {
    const double inc = projective_step(f.y, f.v);
    f.log_norm += inc;
    ou_.step(f.y, noise);
    f.t += cfg_.dt;
    if (!std::isfinite(f.log_norm) || !std::isfinite(f.v[0]))
      throw BlowUpError("transverse cocycle produced a non-finite value", 0, f.t);
  }

 private:
  static double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  L96Config cfg_;
  TransverseOperator op_;
  OuStepper ou_;
  std::vector<double> k1_, mid_, gv_;
};

inline TransverseFrame step_transverse(TransverseFrame frame, const L96Config& cfg, NoiseStream& noise) {
  TransverseStepper stepper(cfg);
  if (frame.v.size() != stepper.dim() || frame.y.size() != cfg.K())
    throw DimensionError("step_transverse: frame dimensions do not match N");
  stepper.step(frame, noise);
  return frame;
}

enum class ExponentMethod { log_norm_growth, fk_average, moment };

inline std::string to_string(ExponentMethod m) {
  switch (m) {
    case ExponentMethod::log_norm_growth: return "logNormGrowth";
    case ExponentMethod::fk_average: return "fkAverage";
    case ExponentMethod::moment: return "momentLogMeanExp";
  }
  return "?";
}

struct ExponentEstimate {
  double value = 0.0;
  double std_err = 0.0;
  double T = 0.0;
  double burn_in = 0.0;
  ExponentMethod method = ExponentMethod::log_norm_growth;
  std::size_t samples = 0;  // batches, or paths for the moment estimator
  std::size_t blown = 0;    // excluded batches/paths
  bool reliable = true;

  /// Half-width of the two-sided Student-t interval.
  double ci_halfwidth(double confidence = 0.95) const {
    return stats::t_critical(confidence, samples > 1 ? samples - 1 : 1) * std_err;
  }
  bool ci_excludes_zero(double confidence = 0.95) const {
    return std::abs(value) > ci_halfwidth(confidence);
  }
};

/// Both estimators from one projective trajectory.
struct LyapunovPair {
  ExponentEstimate log_norm;
  ExponentEstimate fk;
  std::vector<double> batch_log_norm;
  std::vector<double> batch_fk;
};

struct LyapunovOptions {
  std::size_t batches = 20;
  std::optional<double> burn_in;  // default max(0.1 T, 10), capped below T
  std::uint64_t stream_id = 0;
  OuMode ou_mode = OuMode::exact;
};

inline double default_burn_in(double T) { return std::min(std::max(0.1 * T, 10.0), 0.5 * T); }

/// Runs one projective trajectory over [0, T], discards [0, burnIn] and splits
/// the rest into equal batches. Per batch, logNormGrowth is the log-norm
/// increment over the batch length; fkAverage is the left-point time average
/// of <v, G(y) v> - eps. Batches hitting a non-finite value are excluded and
/// the frame is restarted from a fresh direction; more than 10% excluded
/// batches refuses the estimate.
inline LyapunovPair lyapunov_estimates(const L96Config& cfg, double T, const LyapunovOptions& opt = {}) {
  const double burn = opt.burn_in.value_or(default_burn_in(T));
  if (!(T > burn) || burn < 0.0) throw DomainError("lyapunov_exponent: need T > burnIn >= 0");
  if (opt.batches < 2) throw DomainError("lyapunov_exponent: need at least 2 batches");
  TransverseStepper stepper(cfg, opt.ou_mode);
  NoiseStream noise(cfg.seed, opt.stream_id);
  TransverseFrame f = stepper.initial_frame(noise);
  const std::size_t burn_steps = burn > 0.0 ? step_count(burn, cfg.dt) : 0;
  const std::size_t avg_steps = step_count(T - burn, cfg.dt);
  const std::size_t per_batch = avg_steps / opt.batches;
  if (per_batch == 0) throw DomainError("lyapunov_exponent: averaging window shorter than the batch count");

  for (std::size_t n = 0; n < burn_steps; ++n) stepper.step(f, noise);

  LyapunovPair out;
  std::size_t blown = 0;
  const double batch_time = static_cast<double>(per_batch) * cfg.dt;
  for (std::size_t b = 0; b < opt.batches; ++b) {
    const double start = f.log_norm;
    double fk_sum = 0.0;
    try {
      for (std::size_t n = 0; n < per_batch; ++n) {
        fk_sum += stepper.fk_integrand(f);
        stepper.step(f, noise);
      }
    } catch (const BlowUpError&) {
      ++blown;
      f.v = random_unit_vector(stepper.dim(), noise);
      f.log_norm = 0.0;
      continue;
    }
    out.batch_log_norm.push_back((f.log_norm - start) / batch_time);
    out.batch_fk.push_back(fk_sum / static_cast<double>(per_batch));
  }
  if (10 * blown > opt.batches)
    throw BlowUpError("lyapunov_exponent: more than 10% of batches blew up; estimate refused");

  auto fill = [&](ExponentEstimate& e, const std::vector<double>& b, ExponentMethod m) {
    e.value = stats::mean(b);
    e.std_err = stats::standard_error(b);
    e.T = T;
    e.burn_in = burn;
    e.method = m;
    e.samples = b.size();
    e.blown = blown;
  };
  fill(out.log_norm, out.batch_log_norm, ExponentMethod::log_norm_growth);
  fill(out.fk, out.batch_fk, ExponentMethod::fk_average);
  return out;
}

inline ExponentEstimate lyapunov_exponent(const L96Config& cfg, double T, ExponentMethod method,
                                          const LyapunovOptions& opt = {}) {
  if (method == ExponentMethod::moment) throw DomainError("lyapunov_exponent: use moment_lyapunov for Lambda(p)");
  auto pair = lyapunov_estimates(cfg, T, opt);
  return method == ExponentMethod::fk_average ? pair.fk : pair.log_norm;
}

struct DeterminantRate {
  double rate = 0.0;           // measured (1/T) log|det A_T|
  double expected = 0.0;       // -eps * 2K
  double max_abs_trace = 0.0;  // max over the path of |trace G(y_t)|
};

/// Integrates d/dt log det A = trace G(y_t) - 2K eps along an OU path
/// (compensated summation) and returns the time average.
inline DeterminantRate determinant_rate(const L96Config& cfg, double T, std::uint64_t stream_id = 0) {
  TransverseStepper stepper(cfg);
  NoiseStream noise(cfg.seed, stream_id);
  const std::size_t steps = step_count(T, cfg.dt);
  std::vector<double> y(cfg.K());
  stepper.ou().sample_stationary(y, noise);
  const double damping = static_cast<double>(stepper.dim()) * cfg.epsilon;
  double sum = 0.0, comp = 0.0, max_tr = 0.0;
  for (std::size_t n = 0; n < steps; ++n) {
    const double tr = stepper.op().trace(y);
    max_tr = std::max(max_tr, std::abs(tr));
    const double term = (tr - damping) * cfg.dt;
    // Neumaier summation
    const double t = sum + term;
    comp += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
    sum = t;
    stepper.ou().step(y, noise);
  }
  DeterminantRate r;
  r.rate = (sum + comp) / (static_cast<double>(steps) * cfg.dt);
  r.expected = -damping;
  r.max_abs_trace = max_tr;
  return r;
}

struct MomentOptions {
  double burn_in = 0.0;
  std::size_t bootstrap = 200;
  std::size_t threads = 1;
  std::uint64_t stream_base = std::uint64_t{1} << 32;
};

/// Final log-norms log|w_T| of M independent projective paths, each started
/// from the stationary OU law and a uniform direction, with log|w| reset to 0
/// after the burn-in. Path m uses stream stream_base + m.
inline std::vector<double> final_log_norms(const L96Config& cfg, double T, std::size_t M, const MomentOptions& opt) {
  std::vector<double> L(M, 0.0);
  const std::size_t burn_steps = opt.burn_in > 0.0 ? step_count(opt.burn_in, cfg.dt) : 0;
  const std::size_t steps = step_count(T, cfg.dt);
  parallel_for(M, opt.threads, [&](std::size_t m) {
    TransverseStepper stepper(cfg);
    NoiseStream noise(cfg.seed, opt.stream_base + m);
    TransverseFrame f = stepper.initial_frame(noise);
    for (std::size_t n = 0; n < burn_steps; ++n) stepper.step(f, noise);
    f.log_norm = 0.0;
    try {
      for (std::size_t n = 0; n < steps; ++n) stepper.step(f, noise);
      L[m] = f.log_norm;
    } catch (const BlowUpError&) {
      L[m] = std::numeric_limits<double>::quiet_NaN();
    }
  });
  return L;
}

/// Lambda-hat(p) = -(1/T) log mean exp(-p L_i) over finite path samples, with
/// a path-level bootstrap stderr. Flagged unreliable when the Kish effective
/// sample size drops below M/100.
inline ExponentEstimate moment_from_samples(std::span<const double> log_norms, double p, double T,
                                            std::size_t bootstrap, std::uint64_t seed, double burn_in = 0.0) {
  std::vector<double> L;
  for (double x : log_norms)
    if (std::isfinite(x)) L.push_back(x);
  ExponentEstimate e;
  e.method = ExponentMethod::moment;
  e.T = T;
  e.burn_in = burn_in;
  e.samples = L.size();
  e.blown = log_norms.size() - L.size();
  if (L.empty()) throw BlowUpError("moment_lyapunov: every path blew up");
  if (p == 0.0) return e;  // mean of exp(0) is exactly 1

  std::vector<double> lw(L.size());
  auto estimate = [&](auto&& pick) {
    for (std::size_t i = 0; i < L.size(); ++i) lw[i] = -p * L[pick(i)];
    return -stats::log_mean_exp(lw) / T;
  };
  e.value = estimate([](std::size_t i) { return i; });
  e.reliable = stats::effective_sample_size(lw) >= static_cast<double>(L.size()) / 100.0;

  std::mt19937_64 rng(seed ^ 0xB007'5742'0000'0000ull);
  std::uniform_int_distribution<std::size_t> pick(0, L.size() - 1);
  std::vector<double> boot(bootstrap);
  std::vector<std::size_t> idx(L.size());
  for (std::size_t b = 0; b < bootstrap; ++b) {
    for (auto& i : idx) i = pick(rng);
    boot[b] = estimate([&](std::size_t i) { return idx[i]; });
  }
  e.std_err = std::sqrt(stats::variance(boot));
  return e;
}

inline ExponentEstimate moment_lyapunov(const L96Config& cfg, double p, double T, std::size_t M,
                                        const MomentOptions& opt = {}) {
  if (std::abs(p) > 1.0) throw DomainError("moment_lyapunov: |p| <= 1 required");
  if (M < 1000) throw DomainError("moment_lyapunov: at least 1000 paths required");
  if (opt.bootstrap < 200) throw DomainError("moment_lyapunov: at least 200 bootstrap resamples required");
  const auto L = final_log_norms(cfg, T, M, opt);
  return moment_from_samples(L, p, T, opt.bootstrap, cfg.seed, opt.burn_in);
}

/// Lambda-hat at several p from one shared set of paths.
inline std::vector<ExponentEstimate> moment_curve(const L96Config& cfg, const std::vector<double>& ps, double T,
                                                  std::size_t M, const MomentOptions& opt = {}) {
  for (double p : ps)
    if (std::abs(p) > 1.0) throw DomainError("moment_curve: |p| <= 1 required");
  if (M < 1000) throw DomainError("moment_curve: at least 1000 paths required");
  const auto L = final_log_norms(cfg, T, M, opt);
  std::vector<ExponentEstimate> out;
  for (double p : ps) out.push_back(moment_from_samples(L, p, T, opt.bootstrap, cfg.seed, opt.burn_in));
  return out;
}

struct ScanRow {
  double epsilon = 0.0;
  double lambda = 0.0;
  double std_err = 0.0;
  double lambda_over_eps = 0.0;
  double fk = 0.0;
  double fk_stderr = 0.0;
  std::size_t batches = 0;
  bool ok = false;
  std::string error;
};

/// lambda-hat over a decreasing epsilon grid with shared estimator settings.
/// Failures are recorded per row and the scan continues.
inline std::vector<ScanRow> lambda_scan(const L96Config& base, const std::vector<double>& eps_grid, double T,
                                        const LyapunovOptions& opt = {}, std::size_t threads = 1) {
  if (eps_grid.size() < 4) throw DomainError("lambda_scan: need at least 4 grid points");
  for (std::size_t i = 1; i < eps_grid.size(); ++i)
    if (!(eps_grid[i] < eps_grid[i - 1])) throw DomainError("lambda_scan: grid must be strictly decreasing");
  if (!(eps_grid.back() > 0.0) || eps_grid.front() / eps_grid.back() < 10.0)
    throw DomainError("lambda_scan: grid must be positive and span at least one decade");
  std::vector<ScanRow> rows(eps_grid.size());
  parallel_for(eps_grid.size(), threads, [&](std::size_t i) {
    ScanRow& r = rows[i];
    r.epsilon = eps_grid[i];
    try {
      L96Config cfg = base;
      cfg.epsilon = eps_grid[i];
      cfg.validate();
      const auto pair = lyapunov_estimates(cfg, T, opt);
      r.lambda = pair.log_norm.value;
      r.std_err = pair.log_norm.std_err;
      r.lambda_over_eps = r.lambda / r.epsilon;
      r.fk = pair.fk.value;
      r.fk_stderr = pair.fk.std_err;
      r.batches = pair.log_norm.samples;
      r.ok = true;
    } catch (const Error& e) {
      r.error = e.what();
    }
  });
  return rows;
}

inline void write_scan_csv(std::ostream& os, const std::vector<ScanRow>& rows) {
  os << "eps,lambda,stderr,lambda_over_eps\n";
  for (const auto& r : rows) {
    if (!r.ok) continue;
    os << format_double(r.epsilon) << ',' << format_double(r.lambda) << ',' << format_double(r.std_err) << ','
       << format_double(r.lambda_over_eps) << '\n';
  }
}

inline void write_moment_csv(std::ostream& os, const std::vector<double>& ps,
                             const std::vector<ExponentEstimate>& est) {
  os << "p,Lambda,stderr\n";
  for (std::size_t i = 0; i < ps.size() && i < est.size(); ++i)
    os << format_double(ps[i]) << ',' << format_double(est[i].value) << ',' << format_double(est[i].std_err) << '\n';
}

}  // namespace l96
