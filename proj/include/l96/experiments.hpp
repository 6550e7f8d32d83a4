#pragma once

// Experiment drivers: epsilon scans, escape from H_I, synchronization sweeps,
// stationary histograms, moment curves, the bracket-generation check and the
// super-Lyapunov probe. Each driver is a pure function of (spec, seed).
//
// Noise streams: path m of a Monte Carlo experiment uses stream m for its SDE
// noise (shared across the grid points of one run) and stream ic_stream + m
// for its initial condition.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "l96/cocycle.hpp"
#include "l96/experiment_spec.hpp"
#include "l96/lie.hpp"
#include "l96/sde.hpp"
#include "l96/stats.hpp"

namespace l96 {

inline constexpr std::uint64_t ic_stream = std::uint64_t{1} << 40;
inline constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

inline double transverse_norm(std::span<const double> u) {
  double s = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j)
    if (j % 3 != 0) s += u[j] * u[j];
  return std::sqrt(s);
}

/// Entries iid N(0, 1).
inline StateVector generic_state(std::size_t N, NoiseStream& noise) {
  StateVector u(N);
  for (std::size_t j = 0; j < N; ++j) u[j] = noise.normal();
  return u;
}

// ---------------------------------------------------------------------------
// Escape from H_I

struct EscapeRow {
  double delta = 0.0;
  double mean_time = nan_value;  // over escaped paths
  double std_err = nan_value;
  std::size_t escaped = 0;
  std::size_t censored = 0;  // no escape by the horizon
  std::size_t blown = 0;
  double censored_fraction() const {
    const auto n = escaped + censored;
    return n ? static_cast<double>(censored) / static_cast<double>(n) : 0.0;
  }
};

struct EscapeResult {
  std::vector<EscapeRow> rows;
  stats::LinearFit fit;  // mean time against log(1 / delta)
  std::size_t fit_points = 0;
  bool flagged = false;  // some delta censored more than half its paths
};

/// First time |Pi^perp u_t| >= threshold from u0 = y* + delta v, with y* from
/// the stationary OU law and v uniform on the transverse unit sphere. Path m
/// reuses one (y*, v, noise) across every delta.
inline EscapeResult run_escape_time(const L96Config& cfg, const std::vector<double>& deltas, double threshold,
                                    std::size_t M, double horizon, std::size_t threads = 1) {
  if (deltas.empty() || M == 0) throw DomainError("run_escape_time: need deltas and paths");
  for (double d : deltas)
    if (!(d > 0.0 && d <= threshold)) throw DomainError("run_escape_time: delta must lie in (0, threshold]");
  const SubspaceIndexing idx(cfg.N);
  const std::size_t steps = step_count(horizon, cfg.dt);
  enum class Outcome { escaped, censored, blown };
  struct PathOut {
    Outcome what;
    double t;
  };
  std::vector<std::vector<PathOut>> out(M, std::vector<PathOut>(deltas.size()));

  parallel_for(M, threads, [&](std::size_t m) {
    NoiseStream ic(cfg.seed, ic_stream + m);
    OuStepper ou(cfg, OuMode::exact);
    std::vector<double> y(ou.K());
    ou.sample_stationary(y, ic);
    const auto v = random_unit_vector(idx.transverse_dim(), ic);
    EmStepper stepper(cfg);
    for (std::size_t d = 0; d < deltas.size(); ++d) {
      if (deltas[d] >= threshold) {
        out[m][d] = {Outcome::escaped, 0.0};
        continue;
      }
      StateVector u(cfg.N);
      for (std::size_t k = 0; k < y.size(); ++k) u[3 * k] = y[k];
      for (std::size_t c = 0; c < v.size(); ++c) u[idx.from_compact(c)] = deltas[d] * v[c];
      NoiseStream noise(cfg.seed, m);
      PathOut r{Outcome::censored, horizon};
      try {
        for (std::size_t n = 0; n < steps; ++n) {
          stepper.step(u.values(), noise, n);
          const double rad = transverse_norm(u.values());
          if (rad >= threshold) {
            r = {Outcome::escaped, static_cast<double>(n + 1) * cfg.dt};
            break;
          }
          if (rad == 0.0) break;  // back on H_I exactly: can never leave
        }
      } catch (const BlowUpError&) {
        r = {Outcome::blown, nan_value};
      }
      out[m][d] = r;
    }
  });

  EscapeResult res;
  std::vector<double> xs, ys;
  for (std::size_t d = 0; d < deltas.size(); ++d) {
    EscapeRow row;
    row.delta = deltas[d];
    std::vector<double> times;
    for (std::size_t m = 0; m < M; ++m) {
      switch (out[m][d].what) {
        case Outcome::escaped: times.push_back(out[m][d].t); break;
        case Outcome::censored: ++row.censored; break;
        case Outcome::blown: ++row.blown; break;
      }
    }
    row.escaped = times.size();
    if (!times.empty()) {
      row.mean_time = stats::mean(times);
      row.std_err = times.size() > 1 ? stats::standard_error(times) : 0.0;
    }
    if (2 * row.censored > row.escaped + row.censored) res.flagged = true;
    if (row.escaped > 0 && row.delta < threshold) {
      xs.push_back(std::log(1.0 / row.delta));
      ys.push_back(row.mean_time);
    }
    res.rows.push_back(row);
  }
  res.fit_points = xs.size();
  if (xs.size() >= 2) res.fit = stats::linear_fit(xs, ys);
  return res;
}

// ---------------------------------------------------------------------------
// Stationary statistics

struct MassEstimate {
  double value = nan_value;
  double std_err = nan_value;
};

struct StationaryHistogram {
  std::vector<double> edges;  // bins + 1 edges over [0, max_radius]
  std::vector<double> mass;   // bins + 1 entries, the last one is the overflow
  std::vector<double> coord_mean, coord_mean_se, coord_var, coord_var_se;
  MassEstimate forced_var;      // pooled over forced coordinates
  double forced_var_expected = 0.0;  // mean sigma_j^2 / 2 over forced j
  std::size_t samples = 0;
  std::size_t batches = 0;
  std::optional<double> blow_up_time;
  // Fraction of samples with radius below / above a level, batch-means SE.
  MassEstimate mass_below(double r) const { return fraction(r, true); }
  MassEstimate mass_above(double r) const { return fraction(r, false); }

  std::vector<std::vector<double>> batch_radii;  // per batch, the raw radii

 private:
  MassEstimate fraction(double r, bool below) const {
    std::vector<double> f;
    for (const auto& b : batch_radii) {
      if (b.empty()) continue;
      std::size_t c = 0;
      for (double x : b) c += below ? x < r : x > r;
      f.push_back(static_cast<double>(c) / static_cast<double>(b.size()));
    }
    if (f.empty()) return {};
    return {stats::mean(f), f.size() > 1 ? stats::standard_error(f) : nan_value};
  }
};

/// Time-averaged statistics of |Pi^perp u_t| and of every coordinate along a
/// single path started from a generic point, sampled every step after burn-in.
/// A blow-up ends the run; the statistics then cover the completed batches.
inline StationaryHistogram run_stationary_hist(const L96Config& cfg, double T, double burn_in, std::size_t bins,
                                               double max_radius, std::size_t batches = 20) {
  if (!(T > burn_in) || burn_in < 0.0) throw DomainError("run_stationary_hist: need T > burnIn >= 0");
  if (bins == 0 || batches < 2 || !(max_radius > 0.0)) throw DomainError("run_stationary_hist: bad binning");
  const std::size_t N = cfg.N;
  NoiseStream ic(cfg.seed, ic_stream);
  StateVector u = generic_state(N, ic);
  NoiseStream noise(cfg.seed, 0);
  EmStepper stepper(cfg);
  const std::size_t burn_steps = burn_in > 0.0 ? step_count(burn_in, cfg.dt) : 0;
  const std::size_t per_batch = step_count(T - burn_in, cfg.dt) / batches;
  if (per_batch == 0) throw DomainError("run_stationary_hist: averaging window shorter than the batch count");

  StationaryHistogram h;
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = max_radius * static_cast<double>(b) / static_cast<double>(bins);
  std::vector<std::size_t> counts(bins + 1, 0);
  std::vector<std::vector<double>> bmean, bvar;  // [batch][coord]
  std::size_t n = 0;
  try {
    for (; n < burn_steps; ++n) stepper.step(u.values(), noise, n);
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<double> s1(N, 0.0), s2(N, 0.0);
      std::vector<double> radii;
      radii.reserve(per_batch);
      for (std::size_t k = 0; k < per_batch; ++k, ++n) {
        stepper.step(u.values(), noise, n);
        const double r = transverse_norm(u.values());
        radii.push_back(r);
        const auto bin = static_cast<std::size_t>(r / max_radius * static_cast<double>(bins));
        ++counts[std::min(bin, bins)];
        for (std::size_t j = 0; j < N; ++j) {
          s1[j] += u[j];
          s2[j] += u[j] * u[j];
        }
      }
      std::vector<double> m(N), v(N);
      for (std::size_t j = 0; j < N; ++j) {
        m[j] = s1[j] / static_cast<double>(per_batch);
        v[j] = s2[j] / static_cast<double>(per_batch) - m[j] * m[j];
      }
      bmean.push_back(m);
      bvar.push_back(v);
      h.batch_radii.push_back(std::move(radii));
    }
  } catch (const BlowUpError&) {
    h.blow_up_time = static_cast<double>(n + 1) * cfg.dt;
  }

  h.batches = bmean.size();
  h.samples = h.batches * per_batch;
  h.mass.assign(bins + 1, 0.0);
  std::size_t total = 0;
  for (std::size_t b = 0; b <= bins; ++b) total += counts[b];
  if (total > 0)
    for (std::size_t b = 0; b <= bins; ++b) h.mass[b] = static_cast<double>(counts[b]) / static_cast<double>(total);

  auto column = [&](const std::vector<std::vector<double>>& t, std::size_t j) {
    std::vector<double> c;
    for (const auto& row : t) c.push_back(row[j]);
    return c;
  };
  auto se = [](const std::vector<double>& c) { return c.size() > 1 ? stats::standard_error(c) : nan_value; };
  for (std::size_t j = 0; j < N && h.batches > 0; ++j) {
    const auto cm = column(bmean, j), cv = column(bvar, j);
    h.coord_mean.push_back(stats::mean(cm));
    h.coord_mean_se.push_back(se(cm));
    h.coord_var.push_back(stats::mean(cv));
    h.coord_var_se.push_back(se(cv));
  }
  std::vector<double> pooled;
  for (const auto& row : bvar) {
    double s = 0.0;
    for (std::size_t j = 0; j < N; j += 3) s += row[j];
    pooled.push_back(s / static_cast<double>(cfg.K()));
  }
  if (!pooled.empty()) h.forced_var = {stats::mean(pooled), se(pooled)};
  for (std::size_t j = 0; j < N; j += 3) h.forced_var_expected += cfg.sigma[j] * cfg.sigma[j] / 2.0;
  h.forced_var_expected /= static_cast<double>(cfg.K());
  return h;
}

// ---------------------------------------------------------------------------
// Synchronization

struct SyncRow {
  double epsilon = 0.0;
  std::size_t pairs = 0;
  std::size_t synchronized = 0;
  std::size_t blown = 0;
  double fraction = nan_value;  // over pairs that did not blow up
  double fraction_se = nan_value;
  double median_time = nan_value;
  double median_se = nan_value;  // bootstrap
};

inline double median(std::vector<double> x) {
  if (x.empty()) return nan_value;
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

/// For each epsilon, `pairs` coupled pairs with iid N(0,1) initial data. Pair
/// i uses noise stream i at every epsilon.
inline std::vector<SyncRow> run_sync_sweep(const L96Config& base, const std::vector<double>& eps_grid,
                                           std::size_t pairs, double horizon, double threshold = 1e-6,
                                           std::size_t threads = 1) {
  if (eps_grid.empty() || pairs == 0) throw DomainError("run_sync_sweep: need a grid and at least one pair");
  std::vector<SyncRow> rows;
  for (double eps : eps_grid) {
    L96Config cfg = base;
    cfg.epsilon = eps;
    cfg.validate();
    std::vector<CoupledPairResult> res(pairs);
    parallel_for(pairs, threads, [&](std::size_t i) {
      NoiseStream ic(cfg.seed, ic_stream + i);
      const StateVector u0 = generic_state(cfg.N, ic);
      const StateVector v0 = generic_state(cfg.N, ic);
      res[i] = coupled_pair(u0, v0, cfg, horizon, threshold, std::numeric_limits<std::size_t>::max(), i, true);
    });
    SyncRow row;
    row.epsilon = eps;
    row.pairs = pairs;
    std::vector<double> times;
    for (const auto& r : res) {
      if (r.blow_up_time) {
        ++row.blown;
        continue;
      }
      if (r.synchronized) {
        ++row.synchronized;
        times.push_back(*r.sync_time);
      }
    }
    const std::size_t valid = pairs - row.blown;
    if (valid > 0) {
      const double f = static_cast<double>(row.synchronized) / static_cast<double>(valid);
      row.fraction = f;
      row.fraction_se = std::sqrt(f * (1.0 - f) / static_cast<double>(valid));
    }
    if (!times.empty()) {
      row.median_time = median(times);
      std::mt19937_64 rng(cfg.seed ^ 0x5EED'0000'0000'0001ull);
      std::uniform_int_distribution<std::size_t> pick(0, times.size() - 1);
      std::vector<double> boot(200), sample(times.size());
      for (auto& b : boot) {
        for (auto& s : sample) s = times[pick(rng)];
        b = median(sample);
      }
      row.median_se = std::sqrt(stats::variance(boot));
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Moment curve with the derivative and midpoint checks

struct MidpointDefect {
  double defect = nan_value;  // (Lambda(p0) + Lambda(p2)) / 2 - Lambda(p1)
  double std_err = nan_value; // joint path bootstrap
  double marginal_se = nan_value;  // SE of Lambda(p1) alone
};

/// Midpoint defect of the moment curve, with a bootstrap that resamples
/// paths jointly for all three p (the three estimates share their paths).
inline MidpointDefect midpoint_defect(std::span<const double> log_norms, double p0, double p1, double p2, double T,
                                      std::size_t bootstrap, std::uint64_t seed) {
  std::vector<double> L;
  for (double x : log_norms)
    if (std::isfinite(x)) L.push_back(x);
  if (L.empty()) throw BlowUpError("midpoint_defect: every path blew up");
  std::vector<double> lw(L.size());
  auto lambda = [&](double p, auto&& pick) {
    for (std::size_t i = 0; i < L.size(); ++i) lw[i] = -p * L[pick(i)];
    return -stats::log_mean_exp(lw) / T;
  };
  auto defect = [&](auto&& pick) { return 0.5 * (lambda(p0, pick) + lambda(p2, pick)) - lambda(p1, pick); };
  MidpointDefect d;
  d.defect = defect([](std::size_t i) { return i; });
  std::mt19937_64 rng(seed ^ 0x3D3D'0000'0000'0000ull);
  std::uniform_int_distribution<std::size_t> pick(0, L.size() - 1);
  std::vector<std::size_t> idx(L.size());
  std::vector<double> boot(bootstrap);
  for (auto& b : boot) {
    for (auto& i : idx) i = pick(rng);
    b = defect([&](std::size_t i) { return idx[i]; });
  }
  d.std_err = std::sqrt(stats::variance(boot));
  d.marginal_se = moment_from_samples(log_norms, p1, T, bootstrap, seed).std_err;
  return d;
}

// ---------------------------------------------------------------------------
// Generic results

struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct Check {
  std::string name;
  std::string observed;
  std::string criterion;
  bool pass = false;
};

struct ExperimentResult {
  std::string kind;
  std::vector<Table> tables;
  std::vector<Check> checks;
  std::vector<std::string> notes;
  std::size_t excluded = 0;  // blown paths or batches left out of averages
  bool blow_up_abort = false;
  bool flagged = false;
  nlohmann::ordered_json data = nlohmann::ordered_json::object();
};

namespace detail {

inline std::string fmt(double x) { return format_double(x); }
inline std::string fmt(std::size_t x) { return std::to_string(x); }
inline std::string pm(double x, double se) { return fmt(x) + " +/- " + fmt(se); }

inline Check check(std::string name, std::string observed, std::string criterion, bool pass) {
  return {std::move(name), std::move(observed), std::move(criterion), pass};
}

inline LyapunovOptions lyap_options(std::size_t batches, double burn_in) {
  LyapunovOptions o;
  o.batches = batches;
  if (!std::isnan(burn_in)) o.burn_in = burn_in;
  return o;
}

inline Check coherence_check(double eps, const LyapunovPair& p) {
  const double comb = std::hypot(p.log_norm.std_err, p.fk.std_err);
  const double diff = std::abs(p.log_norm.value - p.fk.value);
  return check("estimator coherence eps=" + fmt(eps), "|logNorm - fk| = " + fmt(diff),
               "<= 2 * combined stderr = " + fmt(2.0 * comb), diff <= 2.0 * comb);
}

inline ExperimentResult simulate_experiment(const ExperimentSpec& s, const SimulateParams& p) {
  ExperimentResult r;
  NoiseStream ic(s.cfg.seed, ic_stream);
  const StateVector u0 = generic_state(s.cfg.N, ic);
  const Trajectory traj = simulate(u0, s.cfg, p.horizon, p.thin, 0);
  Table t{"trajectory", {"t"}, {}};
  for (std::size_t j = 0; j < s.cfg.N; ++j) t.header.push_back("u_" + std::to_string(j));
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    std::vector<std::string> row{fmt(traj.times[i])};
    for (std::size_t j = 0; j < s.cfg.N; ++j) row.push_back(fmt(traj.states[i][j]));
    t.rows.push_back(std::move(row));
  }
  r.tables.push_back(std::move(t));
  if (traj.blow_up_time) {
    r.blow_up_abort = true;
    r.notes.push_back("blow-up at t = " + fmt(*traj.blow_up_time) + "; trajectory truncated");
  }
  r.data["samples"] = traj.states.size();
  return r;
}

inline ExperimentResult lyapunov_experiment(const ExperimentSpec& s, const LyapunovParams& p) {
  ExperimentResult r;
  const auto pair = lyapunov_estimates(s.cfg, p.horizon, lyap_options(p.batches, p.burn_in));
  Table t{"lyapunov", {"method", "lambda", "stderr", "ci95_low", "ci95_high", "T", "burn_in", "batches", "excluded"},
          {}};
  for (const auto* e : {&pair.log_norm, &pair.fk}) {
    const double h = e->ci_halfwidth(0.95);
    t.rows.push_back({to_string(e->method), fmt(e->value), fmt(e->std_err), fmt(e->value - h), fmt(e->value + h),
                      fmt(e->T), fmt(e->burn_in), fmt(e->samples), fmt(e->blown)});
  }
  r.tables.push_back(std::move(t));
  r.excluded = pair.log_norm.blown;
  r.checks.push_back(coherence_check(s.cfg.epsilon, pair));
  r.data["lambda"] = pair.log_norm.value;
  r.data["stderr"] = pair.log_norm.std_err;
  r.data["burn_in"] = pair.log_norm.burn_in;
  return r;
}

inline ExperimentResult scan_experiment(const ExperimentSpec& s, const ScanParams& p) {
  ExperimentResult r;
  const auto opt = lyap_options(p.batches, p.burn_in);
  const auto rows = lambda_scan(s.cfg, p.eps, p.horizon, opt, s.threads);
  std::vector<ScanRow> half;
  if (p.halved_dt_check) {
    L96Config c = s.cfg;
    c.dt = s.cfg.dt / 2.0;
    half = lambda_scan(c, p.eps, p.horizon, opt, s.threads);
  }

  Table scan{"scan", {"eps", "lambda", "stderr", "lambda_over_eps"}, {}};
  Table detail{"scan_detail",
               {"eps", "lambda", "stderr", "ci95_low", "ci95_high", "fk", "fk_stderr", "lambda_half_dt",
                "stderr_half_dt"},
               {}};
  const double tq = stats::t_critical(0.95, p.batches - 1);
  std::vector<const ScanRow*> ok;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (!row.ok) {
      r.notes.push_back("eps = " + fmt(row.epsilon) + " failed: " + row.error);
      r.excluded += 1;
      continue;
    }
    ok.push_back(&row);
    scan.rows.push_back({fmt(row.epsilon), fmt(row.lambda), fmt(row.std_err), fmt(row.lambda_over_eps)});
    const double h = tq * row.std_err;
    const bool have_half = i < half.size() && half[i].ok;
    detail.rows.push_back({fmt(row.epsilon), fmt(row.lambda), fmt(row.std_err), fmt(row.lambda - h),
                           fmt(row.lambda + h), fmt(row.fk), fmt(row.fk_stderr),
                           fmt(have_half ? half[i].lambda : nan_value), fmt(have_half ? half[i].std_err : nan_value)});
    const double comb = std::hypot(row.std_err, row.fk_stderr);
    const double diff = std::abs(row.lambda - row.fk);
    r.checks.push_back(check("estimator coherence eps=" + fmt(row.epsilon), "|logNorm - fk| = " + fmt(diff),
                             "<= 2 * combined stderr = " + fmt(2.0 * comb), diff <= 2.0 * comb));
    if (have_half) {
      const double c2 = std::hypot(row.std_err, half[i].std_err);
      const double d2 = std::abs(row.lambda - half[i].lambda);
      r.checks.push_back(check("halved-dt stability eps=" + fmt(row.epsilon), "|lambda(dt) - lambda(dt/2)| = " + fmt(d2),
                               "<= 3 * combined stderr = " + fmt(3.0 * c2), d2 <= 3.0 * c2));
    }
  }
  if (p.sign_check && ok.size() >= 2) {
    const ScanRow& hi = *ok.front();
    const ScanRow& lo = *ok.back();
    r.checks.push_back(check("lambda < 0 at eps=" + fmt(hi.epsilon), pm(hi.lambda, hi.std_err),
                             "negative, 95% CI excludes 0", hi.lambda < 0.0 && std::abs(hi.lambda) > tq * hi.std_err));
    r.checks.push_back(check("lambda > 0 at eps=" + fmt(lo.epsilon), pm(lo.lambda, lo.std_err),
                             "positive, 95% CI excludes 0", lo.lambda > 0.0 && std::abs(lo.lambda) > tq * lo.std_err));
  }
  if (p.monotone_check) {
    for (std::size_t i = 1; i < ok.size(); ++i) {
      const ScanRow& a = *ok[i - 1];
      const ScanRow& b = *ok[i];
      const double se = std::hypot(a.std_err / a.epsilon, b.std_err / b.epsilon);
      const double step = b.lambda_over_eps - a.lambda_over_eps;
      r.checks.push_back(check("lambda/eps increases eps " + fmt(a.epsilon) + " -> " + fmt(b.epsilon),
                               "change " + pm(step, se), "> -t95 * combined stderr = " + fmt(-tq * se),
                               step > -tq * se));
    }
  }
  for (std::size_t i = 1; i < ok.size(); ++i)
    if ((ok[i - 1]->lambda < 0.0) != (ok[i]->lambda < 0.0))
      r.notes.push_back("sign change of lambda between eps = " + fmt(ok[i - 1]->epsilon) + " and eps = " +
                        fmt(ok[i]->epsilon));
  r.tables.push_back(std::move(scan));
  r.tables.push_back(std::move(detail));
  r.data["burn_in"] = std::isnan(p.burn_in) ? default_burn_in(p.horizon) : p.burn_in;
  return r;
}

inline ExperimentResult escape_experiment(const ExperimentSpec& s, const EscapeParams& p) {
  ExperimentResult r;
  const auto e = run_escape_time(s.cfg, p.deltas, p.threshold, p.paths, p.horizon, s.threads);
  Table t{"escape", {"delta", "mean_escape_time", "stderr", "escaped", "censored", "blown"}, {}};
  std::size_t censored = 0, total = 0;
  for (const auto& row : e.rows) {
    t.rows.push_back({fmt(row.delta), fmt(row.mean_time), fmt(row.std_err), fmt(row.escaped), fmt(row.censored),
                      fmt(row.blown)});
    censored += row.censored;
    total += row.escaped + row.censored;
    r.excluded += row.blown;
  }
  r.tables.push_back(std::move(t));
  r.flagged = e.flagged;
  if (e.flagged) r.notes.push_back("more than 50% of paths censored for at least one delta");
  const double cfrac = total ? static_cast<double>(censored) / static_cast<double>(total) : 0.0;
  r.data["censored_fraction"] = cfrac;
  r.data["fit_points"] = e.fit_points;
  if (e.fit_points >= 2) {
    r.data["slope"] = e.fit.slope;
    r.data["slope_stderr"] = e.fit.slope_stderr;
  }
  if (!std::isnan(p.min_censored_fraction))
    r.checks.push_back(check("censored fraction", fmt(cfrac), ">= " + fmt(p.min_censored_fraction),
                             cfrac >= p.min_censored_fraction));
  if (p.lambda_horizon > 0.0 && !std::isnan(p.slope_rel_tol)) {
    const auto pair = lyapunov_estimates(s.cfg, p.lambda_horizon);
    const double lam = pair.log_norm.value;
    r.data["lambda"] = lam;
    r.data["lambda_stderr"] = pair.log_norm.std_err;
    if (e.fit_points >= 2 && lam > 0.0) {
      const double target = 1.0 / lam;
      const double rel = std::abs(e.fit.slope - target) / target;
      r.checks.push_back(check("escape slope vs 1/lambda",
                               "slope " + pm(e.fit.slope, e.fit.slope_stderr) + ", 1/lambda = " + fmt(target) +
                                   " (lambda " + pm(lam, pair.log_norm.std_err) + ")",
                               "relative difference " + fmt(rel) + " <= " + fmt(p.slope_rel_tol),
                               rel <= p.slope_rel_tol));
    } else {
      r.checks.push_back(check("escape slope vs 1/lambda", "lambda " + pm(lam, pair.log_norm.std_err) +
                                   ", fit points " + fmt(e.fit_points),
                               "needs lambda > 0 and two escaped deltas", false));
    }
  }
  return r;
}

inline ExperimentResult sync_experiment(const ExperimentSpec& s, const SyncParams& p) {
  ExperimentResult r;
  const auto rows = run_sync_sweep(s.cfg, p.eps, p.pairs, p.horizon, p.threshold, s.threads);
  Table t{"sync",
          {"eps", "fraction_synchronized", "fraction_stderr", "median_sync_time", "median_stderr", "synchronized",
           "pairs", "blown"},
          {}};
  for (const auto& row : rows) {
    t.rows.push_back({fmt(row.epsilon), fmt(row.fraction), fmt(row.fraction_se), fmt(row.median_time),
                      fmt(row.median_se), fmt(row.synchronized), fmt(row.pairs), fmt(row.blown)});
    r.excluded += row.blown;
  }
  r.tables.push_back(std::move(t));
  auto hi = std::max_element(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.epsilon < b.epsilon; });
  auto lo = std::min_element(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.epsilon < b.epsilon; });
  if (!std::isnan(p.min_fraction_at_max_eps))
    r.checks.push_back(check("sync fraction at eps=" + fmt(hi->epsilon), pm(hi->fraction, hi->fraction_se),
                             ">= " + fmt(p.min_fraction_at_max_eps), hi->fraction >= p.min_fraction_at_max_eps));
  if (!std::isnan(p.max_fraction_at_min_eps))
    r.checks.push_back(check("sync fraction at eps=" + fmt(lo->epsilon), pm(lo->fraction, lo->fraction_se),
                             "<= " + fmt(p.max_fraction_at_min_eps), lo->fraction <= p.max_fraction_at_min_eps));
  return r;
}

inline ExperimentResult hist_experiment(const ExperimentSpec& s, const HistParams& p) {
  ExperimentResult r;
  const auto h = run_stationary_hist(s.cfg, p.horizon, p.burn_in, p.bins, p.max_radius, p.batches);
  Table hist{"histogram", {"bin_low", "bin_high", "mass"}, {}};
  for (std::size_t b = 0; b < p.bins; ++b) hist.rows.push_back({fmt(h.edges[b]), fmt(h.edges[b + 1]), fmt(h.mass[b])});
  hist.rows.push_back({fmt(h.edges[p.bins]), "inf", fmt(h.mass[p.bins])});
  Table mom{"moments", {"coord", "mean", "mean_stderr", "variance", "variance_stderr"}, {}};
  for (std::size_t j = 0; j < h.coord_mean.size(); ++j)
    mom.rows.push_back({fmt(j), fmt(h.coord_mean[j]), fmt(h.coord_mean_se[j]), fmt(h.coord_var[j]),
                        fmt(h.coord_var_se[j])});
  if (h.batches > 0) {
    r.tables.push_back(std::move(hist));
    r.tables.push_back(std::move(mom));
  }
  r.data["samples"] = h.samples;
  r.data["batches"] = h.batches;
  if (h.blow_up_time) {
    r.blow_up_abort = true;
    r.flagged = true;
    r.notes.push_back("blow-up at t = " + fmt(*h.blow_up_time) + "; statistics cover completed batches only");
  }
  if (!std::isnan(p.below_radius)) {
    const auto m = h.mass_below(p.below_radius);
    r.checks.push_back(check("mass |Pi^perp u| < " + fmt(p.below_radius), pm(m.value, m.std_err),
                             ">= " + fmt(p.below_min), m.value >= p.below_min));
  }
  if (!std::isnan(p.above_radius)) {
    const auto m = h.mass_above(p.above_radius);
    r.checks.push_back(check("mass |Pi^perp u| > " + fmt(p.above_radius), pm(m.value, m.std_err),
                             ">= " + fmt(p.above_min), m.value >= p.above_min));
  }
  if (p.ou_variance_check) {
    const double diff = std::abs(h.forced_var.value - h.forced_var_expected);
    r.checks.push_back(check("forced-coordinate variance vs sigma^2/2",
                             pm(h.forced_var.value, h.forced_var.std_err) + " vs " + fmt(h.forced_var_expected),
                             "within 3 stderr", diff <= 3.0 * h.forced_var.std_err));
  }
  return r;
}

inline ExperimentResult moment_experiment(const ExperimentSpec& s, const MomentParams& p) {
  ExperimentResult r;
  MomentOptions opt;
  opt.burn_in = p.burn_in;
  opt.bootstrap = p.bootstrap;
  opt.threads = s.threads;
  if (p.paths < 1000) throw DomainError("moment-lyap: at least 1000 paths required");
  if (p.bootstrap < 200) throw DomainError("moment-lyap: at least 200 bootstrap resamples required");
  for (double q : p.ps)
    if (std::abs(q) > 1.0) throw DomainError("moment-lyap: |p| <= 1 required");
  const auto L = final_log_norms(s.cfg, p.horizon, p.paths, opt);
  std::vector<ExponentEstimate> est;
  for (double q : p.ps) est.push_back(moment_from_samples(L, q, p.horizon, p.bootstrap, s.cfg.seed, p.burn_in));
  Table t{"moment", {"p", "Lambda", "stderr"}, {}};
  for (std::size_t i = 0; i < p.ps.size(); ++i) {
    t.rows.push_back({fmt(p.ps[i]), fmt(est[i].value), fmt(est[i].std_err)});
    if (!est[i].reliable) r.notes.push_back("p = " + fmt(p.ps[i]) + ": effective sample size below M/100");
  }
  r.tables.push_back(std::move(t));
  r.excluded = est.empty() ? 0 : est.front().blown;
  for (std::size_t i = 0; i < p.ps.size(); ++i)
    if (p.ps[i] == 0.0)
      r.checks.push_back(check("Lambda(0)", pm(est[i].value, est[i].std_err), "exactly 0 with zero stderr",
                               est[i].value == 0.0 && est[i].std_err == 0.0));
  if (p.lambda_horizon > 0.0 && !std::isnan(p.derivative_p) && p.derivative_p != 0.0) {
    const auto lam = lyapunov_estimates(s.cfg, p.lambda_horizon).log_norm;
    const auto m = moment_from_samples(L, p.derivative_p, p.horizon, p.bootstrap, s.cfg.seed, p.burn_in);
    const double q = p.derivative_p;
    const double slope = m.value / q;
    const double se = std::hypot(m.std_err / q, lam.std_err);
    const double diff = std::abs(slope - lam.value);
    r.checks.push_back(check("Lambda(" + fmt(q) + ")/" + fmt(q) + " vs lambda",
                             pm(slope, m.std_err / q) + " vs " + pm(lam.value, lam.std_err),
                             "|difference| " + fmt(diff) + " <= 3 * combined stderr = " + fmt(3.0 * se),
                             diff <= 3.0 * se));
    r.data["lambda"] = lam.value;
    r.data["lambda_stderr"] = lam.std_err;
  }
  if (p.convexity.size() == 3) {
    const auto d = midpoint_defect(L, p.convexity[0], p.convexity[1], p.convexity[2], p.horizon, p.bootstrap,
                                   s.cfg.seed);
    r.checks.push_back(check("midpoint convexity on {" + detail::join(p.convexity) + "}",
                             "(Lambda(p0)+Lambda(p2))/2 - Lambda(p1) = " + pm(d.defect, d.std_err) +
                                 " (joint bootstrap; marginal SE of Lambda(p1) " + fmt(d.marginal_se) + ")",
                             ">= -2 * stderr", d.defect >= -2.0 * d.std_err));
    r.data["midpoint_defect"] = d.defect;
    r.data["midpoint_defect_stderr"] = d.std_err;
  }
  r.data["burn_in"] = p.burn_in;
  return r;
}

inline ExperimentResult cap_experiment(const ExperimentSpec&, const CapParams& p) {
  ExperimentResult r;
  const std::size_t n = 2 * (p.N / 3);
  nlohmann::ordered_json j;
  ClosureResult c;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t dim = 0, depth = 0;
  if (p.generators == "all") {
    const auto rep = verify_sl_generation(p.N, std::min<std::size_t>(5, p.depth_cap), p.depth_cap, &c);
    dim = rep.dim;
    depth = rep.depth_used;
  } else {
    c = closure(local_generators(p.N), p.depth_cap);
    dim = c.dim;
    depth = c.depth_reached;
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::size_t expected = n * n - 1;
  const bool generated = dim == expected && c.all_traceless;
  j["N"] = p.N;
  j["dim"] = dim;
  j["expected"] = expected;
  j["generated"] = generated;
  j["depthUsed"] = depth;
  j["elapsed"] = elapsed;
  j["generators"] = p.generators;
  j["stable"] = c.stable;
  if (n >= 5) {
    nlohmann::ordered_json e;
    for (auto [a, b] : {std::pair{3, 2}, {4, 3}, {5, 4}})
      e["E" + std::to_string(a) + std::to_string(b)] = contains_elementary(c.tracker, a, b);
    j["elementary"] = e;
  }
  r.data = j;
  r.tables.push_back({"cap",
                      {"N", "generators", "dim", "expected", "generated", "depth_used", "stable"},
                      {{fmt(p.N), p.generators, fmt(dim), fmt(expected), generated ? "true" : "false", fmt(depth),
                        c.stable ? "true" : "false"}}});
  if (!p.emit_basis.empty()) {
    const std::filesystem::path path(p.emit_basis);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write basis file '" + p.emit_basis + "'");
    write_basis_csv(os, c.tracker);
    r.notes.push_back("basis written to " + p.emit_basis);
  }
  r.checks.push_back(check("Lie algebra generated by the M_k is sl_" + std::to_string(n), "dim " + fmt(dim),
                           "== " + fmt(expected), generated));
  return r;
}

inline ExperimentResult super_experiment(const ExperimentSpec& s, const SuperParams& p) {
  ExperimentResult r;
  const double eta = p.eta_fraction * super_lyapunov_threshold(s.cfg);
  const auto grid = radial_grid(s.cfg.N, p.radii, p.directions, s.cfg.seed);
  const auto rep = super_lyapunov_probe(s.cfg, eta, grid, p.horizon, p.paths, s.threads);
  Table t{"super_lyap", {"radius", "log_sup_ratio", "sup_ratio", "sup_ratio_stderr", "log_mean_final", "rejected"},
          {}};
  for (const auto& pt : rep.points)
    t.rows.push_back({fmt(pt.u0.norm()), fmt(pt.log_sup_ratio), fmt(pt.sup_ratio), fmt(pt.sup_ratio_stderr),
                      fmt(pt.log_mean_final), fmt(pt.rejected)});
  r.tables.push_back(std::move(t));
  r.excluded = rep.rejected;
  r.data["eta"] = eta;
  r.data["eta_star"] = rep.eta_star;
  r.data["max_ratio"] = rep.max_ratio;
  if (!std::isnan(p.max_ratio)) {
    double se = 0.0;
    for (const auto& pt : rep.points)
      if (pt.sup_ratio == rep.max_ratio) se = pt.sup_ratio_stderr;
    r.checks.push_back(check("max E[sup V]/V(u0)", pm(rep.max_ratio, se), "<= " + fmt(p.max_ratio),
                             std::isfinite(rep.max_ratio) && rep.max_ratio <= p.max_ratio));
  }
  return r;
}

}  // namespace detail

/// Runs the experiment described by `spec`. Blow-ups that abort a run are
/// reported through ExperimentResult::blow_up_abort.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  validate(spec);
  ExperimentResult r = std::visit(
      [&](const auto& p) -> ExperimentResult {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, SimulateParams>) return detail::simulate_experiment(spec, p);
        if constexpr (std::is_same_v<P, LyapunovParams>) return detail::lyapunov_experiment(spec, p);
        if constexpr (std::is_same_v<P, ScanParams>) return detail::scan_experiment(spec, p);
        if constexpr (std::is_same_v<P, EscapeParams>) return detail::escape_experiment(spec, p);
        if constexpr (std::is_same_v<P, SyncParams>) return detail::sync_experiment(spec, p);
        if constexpr (std::is_same_v<P, HistParams>) return detail::hist_experiment(spec, p);
        if constexpr (std::is_same_v<P, MomentParams>) return detail::moment_experiment(spec, p);
        if constexpr (std::is_same_v<P, CapParams>) return detail::cap_experiment(spec, p);
        if constexpr (std::is_same_v<P, SuperParams>) return detail::super_experiment(spec, p);
      },
      spec.params);
  r.kind = to_string(spec.kind());
  return r;
}

}  // namespace l96
