#pragma once

// Experiment specifications and their config-file form.
//
// Grammar (INI):
//
//   file    := { line }
//   line    := "[" section "]" | key "=" value | ";" comment | blank
//   value   := number | word | number { "," number }
//
// Sections: [model], [experiment] and one section named after the experiment
// kind (e.g. [escape-time]). Unknown sections or keys are errors. Numbers are
// written with 17 significant digits, so write -> read is lossless.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "l96/config.hpp"
#include "l96/errors.hpp"
#include "l96/sde.hpp"

namespace l96 {

enum class ExperimentKind {
  simulate,
  lyapunov,
  scan_epsilon,
  escape_time,
  sync_test,
  stationary_hist,
  moment_curve,
  cap_verify,
  super_lyap
};

inline const std::vector<std::pair<ExperimentKind, std::string>>& kind_names() {
  static const std::vector<std::pair<ExperimentKind, std::string>> names = {
      {ExperimentKind::simulate, "simulate"},
      {ExperimentKind::lyapunov, "lyapunov"},
      {ExperimentKind::scan_epsilon, "scan-epsilon"},
      {ExperimentKind::escape_time, "escape-time"},
      {ExperimentKind::sync_test, "sync-test"},
      {ExperimentKind::stationary_hist, "stationary-hist"},
      {ExperimentKind::moment_curve, "moment-lyap"},
      {ExperimentKind::cap_verify, "cap-verify"},
      {ExperimentKind::super_lyap, "super-lyap"},
  };
  return names;
}

inline std::string to_string(ExperimentKind k) {
  for (const auto& [kind, name] : kind_names())
    if (kind == k) return name;
  return "?";
}

inline ExperimentKind kind_from_string(const std::string& s) {
  for (const auto& [kind, name] : kind_names())
    if (name == s) return kind;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

// Optional acceptance checks are NaN when unset.
inline constexpr double unset = std::numeric_limits<double>::quiet_NaN();

struct SimulateParams {
  double horizon = 10.0;
  std::size_t thin = 100;
  bool operator==(const SimulateParams&) const = default;
};

struct LyapunovParams {
  double horizon = 2000.0;
  std::size_t batches = 20;
  double burn_in = unset;  // NaN: default rule
  bool operator==(const LyapunovParams& o) const {
    return horizon == o.horizon && batches == o.batches && same(burn_in, o.burn_in);
  }
  static bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }
};

struct ScanParams {
  std::vector<double> eps = {5.0, 1.0, 0.2, 0.05};
  double horizon = 2000.0;
  std::size_t batches = 20;
  double burn_in = unset;
  bool halved_dt_check = true;
  // lambda < 0 at the largest and > 0 at the smallest eps, CIs excluding 0.
  bool sign_check = true;
  // lambda/eps not significantly decreasing along the grid.
  bool monotone_check = true;
  bool operator==(const ScanParams& o) const {
    return eps == o.eps && horizon == o.horizon && batches == o.batches &&
           LyapunovParams::same(burn_in, o.burn_in) && halved_dt_check == o.halved_dt_check &&
           sign_check == o.sign_check && monotone_check == o.monotone_check;
  }
};

struct EscapeParams {
  std::vector<double> deltas = {1e-2, 1e-4, 1e-6, 1e-8};
  double threshold = 1.0;
  double horizon = 500.0;
  std::size_t paths = 200;
  // Reference exponent run for the slope check (horizon 0 disables it).
  double lambda_horizon = 2000.0;
  double slope_rel_tol = 0.2;
  double min_censored_fraction = unset;
  bool operator==(const EscapeParams& o) const {
    return deltas == o.deltas && threshold == o.threshold && horizon == o.horizon && paths == o.paths &&
           lambda_horizon == o.lambda_horizon && LyapunovParams::same(slope_rel_tol, o.slope_rel_tol) &&
           LyapunovParams::same(min_censored_fraction, o.min_censored_fraction);
  }
};

struct SyncParams {
  std::vector<double> eps = {5.0, 1.0, 0.2, 0.05};
  std::size_t pairs = 20;
  double horizon = 200.0;
  double threshold = 1e-6;
  double min_fraction_at_max_eps = 0.95;
  double max_fraction_at_min_eps = 0.05;
  bool operator==(const SyncParams& o) const {
    return eps == o.eps && pairs == o.pairs && horizon == o.horizon && threshold == o.threshold &&
           LyapunovParams::same(min_fraction_at_max_eps, o.min_fraction_at_max_eps) &&
           LyapunovParams::same(max_fraction_at_min_eps, o.max_fraction_at_min_eps);
  }
};

struct HistParams {
  double horizon = 2000.0;
  double burn_in = 100.0;
  std::size_t bins = 50;
  double max_radius = 10.0;
  std::size_t batches = 20;
  // Mass checks: fraction of time with |Pi^perp u| < below_radius must be at
  // least below_min; likewise for > above_radius.
  double below_radius = unset;
  double below_min = unset;
  double above_radius = unset;
  double above_min = unset;
  bool ou_variance_check = false;
  bool operator==(const HistParams& o) const {
    auto s = LyapunovParams::same;
    return horizon == o.horizon && burn_in == o.burn_in && bins == o.bins && max_radius == o.max_radius &&
           batches == o.batches && s(below_radius, o.below_radius) && s(below_min, o.below_min) &&
           s(above_radius, o.above_radius) && s(above_min, o.above_min) && ou_variance_check == o.ou_variance_check;
  }
};

struct MomentParams {
  std::vector<double> ps = {0.0, 0.02, 0.05, 0.08};
  double horizon = 100.0;
  double burn_in = 20.0;
  std::size_t paths = 1000;
  std::size_t bootstrap = 200;
  // Derivative check Lambda(p)/p against lambda-hat (horizon 0 disables).
  double lambda_horizon = 2000.0;
  double derivative_p = 0.05;
  // Midpoint check on (p0, p1, p2); empty disables.
  std::vector<double> convexity = {0.02, 0.05, 0.08};
  bool operator==(const MomentParams& o) const {
    return ps == o.ps && horizon == o.horizon && burn_in == o.burn_in && paths == o.paths &&
           bootstrap == o.bootstrap && lambda_horizon == o.lambda_horizon &&
           LyapunovParams::same(derivative_p, o.derivative_p) && convexity == o.convexity;
  }
};

struct CapParams {
  std::size_t N = 15;
  std::size_t depth_cap = 16;
  std::string generators = "all";  // all | local
  std::string emit_basis;          // empty: no basis dump
  bool operator==(const CapParams&) const = default;
};

struct SuperParams {
  double eta_fraction = 0.25;  // eta = eta_fraction * eta_*
  std::vector<double> radii = {0.0, 2.5, 5.0, 7.5, 10.0};
  std::size_t directions = 4;
  std::size_t paths = 1000;
  double horizon = 1.0;
  double max_ratio = 1000.0;
  bool operator==(const SuperParams& o) const {
    return eta_fraction == o.eta_fraction && radii == o.radii && directions == o.directions && paths == o.paths &&
           horizon == o.horizon && LyapunovParams::same(max_ratio, o.max_ratio);
  }
};

using ExperimentParams = std::variant<SimulateParams, LyapunovParams, ScanParams, EscapeParams, SyncParams,
                                      HistParams, MomentParams, CapParams, SuperParams>;

struct ExperimentSpec {
  L96Config cfg;
  ExperimentParams params;
  std::size_t threads = 1;
  std::string output_dir = "results";

  ExperimentKind kind() const { return static_cast<ExperimentKind>(params.index()); }
  bool operator==(const ExperimentSpec&) const = default;
};

inline ExperimentParams default_params(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::simulate: return SimulateParams{};
    case ExperimentKind::lyapunov: return LyapunovParams{};
    case ExperimentKind::scan_epsilon: return ScanParams{};
    case ExperimentKind::escape_time: return EscapeParams{};
    case ExperimentKind::sync_test: return SyncParams{};
    case ExperimentKind::stationary_hist: return HistParams{};
    case ExperimentKind::moment_curve: return MomentParams{};
    case ExperimentKind::cap_verify: return CapParams{};
    case ExperimentKind::super_lyap: return SuperParams{};
  }
  throw ConfigError("unknown experiment kind");
}

/// Spec with the default parameters of `k` on an N=9, sigma=1 model.
inline ExperimentSpec default_spec(ExperimentKind k) {
  ExperimentSpec s;
  s.cfg = L96Config::degenerate(9, k == ExperimentKind::escape_time || k == ExperimentKind::moment_curve ? 0.05 : 1.0,
                                1.0, 1e-3, 1);
  s.params = default_params(k);
  return s;
}

namespace detail {

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    s += format_double(v[i]);
  }
  return s;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  if (s == "nan") return unset;
  double x = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("key '" + key + "': not a number: '" + s + "'");
  return x;
}

inline std::size_t parse_size(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  unsigned long long x = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("key '" + key + "': not a non-negative integer: '" + s + "'");
  return static_cast<std::size_t>(x);
}

inline bool parse_bool(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + s + "'");
}

inline std::vector<double> parse_list(const std::string& raw, const std::string& key) {
  std::vector<double> out;
  if (trim(raw).empty()) return out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(item, key));
  return out;
}

/// Key access for one section that remembers which keys were read.
class SectionReader {
 public:
  SectionReader(const boost::property_tree::ptree* pt, std::string name) : pt_(pt), name_(std::move(name)) {}

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    if (!pt_) return std::nullopt;
    auto v = pt_->get_optional<std::string>(boost::property_tree::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  void read(const std::string& key, double& x) {
    if (auto v = raw(key)) x = parse_double(*v, qualified(key));
  }
  void read(const std::string& key, std::size_t& x) {
    if (auto v = raw(key)) x = parse_size(*v, qualified(key));
  }
  void read(const std::string& key, bool& x) {
    if (auto v = raw(key)) x = parse_bool(*v, qualified(key));
  }
  void read(const std::string& key, std::string& x) {
    if (auto v = raw(key)) x = *v;
  }
  void read(const std::string& key, std::vector<double>& x) {
    if (auto v = raw(key)) x = parse_list(*v, qualified(key));
  }

  void finish() const {
    if (!pt_) return;
    for (const auto& [key, child] : *pt_) {
      if (!child.empty()) throw ConfigError("[" + name_ + "]: nested key '" + key + "'");
      if (!used_.count(key)) throw ConfigError("unknown key '" + key + "' in [" + name_ + "]");
    }
  }

 private:
  std::string qualified(const std::string& key) const { return name_ + "." + key; }

  const boost::property_tree::ptree* pt_;
  std::string name_;
  std::set<std::string> used_;
};

class SectionWriter {
 public:
  SectionWriter(std::ostream& os, const std::string& name) : os_(os) { os_ << '[' << name << "]\n"; }
  ~SectionWriter() { os_ << '\n'; }

  void write(const std::string& key, double x) { line(key, std::isnan(x) ? "nan" : format_double(x)); }
  void write(const std::string& key, std::size_t x) { line(key, std::to_string(x)); }
  void write(const std::string& key, bool x) { line(key, x ? "true" : "false"); }
  void write(const std::string& key, const std::string& x) { line(key, x); }
  void write(const std::string& key, const char* x) { line(key, x); }
  void write(const std::string& key, const std::vector<double>& x) { line(key, join(x)); }

 private:
  void line(const std::string& key, const std::string& value) { os_ << key << " = " << value << '\n'; }
  std::ostream& os_;
};

// One visitor serves both directions: io(key, field) reads or writes.
template <typename IO>
void fields(IO& io, SimulateParams& p) {
  io("horizon", p.horizon);
  io("thin", p.thin);
}
template <typename IO>
void fields(IO& io, LyapunovParams& p) {
  io("horizon", p.horizon);
  io("batches", p.batches);
  io("burn_in", p.burn_in);
}
template <typename IO>
void fields(IO& io, ScanParams& p) {
  io("eps", p.eps);
  io("horizon", p.horizon);
  io("batches", p.batches);
  io("burn_in", p.burn_in);
  io("halved_dt_check", p.halved_dt_check);
  io("sign_check", p.sign_check);
  io("monotone_check", p.monotone_check);
}
template <typename IO>
void fields(IO& io, EscapeParams& p) {
  io("deltas", p.deltas);
  io("threshold", p.threshold);
  io("horizon", p.horizon);
  io("paths", p.paths);
  io("lambda_horizon", p.lambda_horizon);
  io("slope_rel_tol", p.slope_rel_tol);
  io("min_censored_fraction", p.min_censored_fraction);
}
template <typename IO>
void fields(IO& io, SyncParams& p) {
  io("eps", p.eps);
  io("pairs", p.pairs);
  io("horizon", p.horizon);
  io("threshold", p.threshold);
  io("min_fraction_at_max_eps", p.min_fraction_at_max_eps);
  io("max_fraction_at_min_eps", p.max_fraction_at_min_eps);
}
template <typename IO>
void fields(IO& io, HistParams& p) {
  io("horizon", p.horizon);
  io("burn_in", p.burn_in);
  io("bins", p.bins);
  io("max_radius", p.max_radius);
  io("batches", p.batches);
  io("below_radius", p.below_radius);
  io("below_min", p.below_min);
  io("above_radius", p.above_radius);
  io("above_min", p.above_min);
  io("ou_variance_check", p.ou_variance_check);
}
template <typename IO>
void fields(IO& io, MomentParams& p) {
  io("p", p.ps);
  io("horizon", p.horizon);
  io("burn_in", p.burn_in);
  io("paths", p.paths);
  io("bootstrap", p.bootstrap);
  io("lambda_horizon", p.lambda_horizon);
  io("derivative_p", p.derivative_p);
  io("convexity", p.convexity);
}
template <typename IO>
void fields(IO& io, CapParams& p) {
  io("N", p.N);
  io("depth_cap", p.depth_cap);
  io("generators", p.generators);
  io("emit_basis", p.emit_basis);
}
template <typename IO>
void fields(IO& io, SuperParams& p) {
  io("eta_fraction", p.eta_fraction);
  io("radii", p.radii);
  io("directions", p.directions);
  io("paths", p.paths);
  io("horizon", p.horizon);
  io("max_ratio", p.max_ratio);
}

}  // namespace detail

/// Checks that hold for every kind: nonempty grids, positive horizons.
inline void validate(const ExperimentSpec& s) {
  s.cfg.validate();
  if (s.threads == 0) throw ConfigError("threads must be >= 1");
  auto positive = [](double x, const char* what) {
    if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError(std::string(what) + " must be positive");
  };
  auto nonempty = [](const std::vector<double>& v, const char* what) {
    if (v.empty()) throw ConfigError(std::string(what) + " must be nonempty");
  };
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (!std::is_same_v<P, CapParams> && !std::is_same_v<P, SuperParams>) positive(p.horizon, "horizon");
        if constexpr (std::is_same_v<P, ScanParams>) nonempty(p.eps, "eps");
        if constexpr (std::is_same_v<P, SyncParams>) {
          nonempty(p.eps, "eps");
          if (p.pairs == 0) throw ConfigError("pairs must be >= 1");
        }
        if constexpr (std::is_same_v<P, EscapeParams>) {
          nonempty(p.deltas, "deltas");
          positive(p.threshold, "threshold");
          for (double d : p.deltas)
            if (!(d > 0.0 && d <= p.threshold)) throw ConfigError("deltas must lie in (0, threshold]");
          if (p.paths == 0) throw ConfigError("paths must be >= 1");
        }
        if constexpr (std::is_same_v<P, HistParams>) {
          if (!(p.burn_in >= 0.0 && p.burn_in < p.horizon)) throw ConfigError("need 0 <= burn_in < horizon");
          if (p.bins == 0) throw ConfigError("bins must be >= 1");
          positive(p.max_radius, "max_radius");
          if (p.batches < 2) throw ConfigError("batches must be >= 2");
        }
        if constexpr (std::is_same_v<P, MomentParams>) {
          nonempty(p.ps, "p");
          if (!p.convexity.empty() && p.convexity.size() != 3) throw ConfigError("convexity needs three p values");
        }
        if constexpr (std::is_same_v<P, CapParams>) {
          if (p.N == 0 || p.N % 3 != 0) throw ConfigError("cap N must be a positive multiple of 3");
          if (p.depth_cap == 0) throw ConfigError("depth_cap must be >= 1");
          if (p.generators != "all" && p.generators != "local") throw ConfigError("generators must be all or local");
          if (p.generators == "local" && p.N < 9) throw ConfigError("local generators need N >= 9");
        }
        if constexpr (std::is_same_v<P, SuperParams>) {
          positive(p.horizon, "horizon");
          if (!(p.eta_fraction > 0.0 && p.eta_fraction < 1.0)) throw ConfigError("eta_fraction must lie in (0, 1)");
          nonempty(p.radii, "radii");
          if (p.paths == 0) throw ConfigError("paths must be >= 1");
        }
      },
      s.params);
}

inline std::string to_ini(const ExperimentSpec& s) {
  std::ostringstream os;
  {
    detail::SectionWriter w(os, "model");
    w.write("N", s.cfg.N);
    w.write("epsilon", s.cfg.epsilon);
    w.write("sigma", s.cfg.sigma);
    w.write("dt", s.cfg.dt);
    w.write("seed", std::to_string(s.cfg.seed));
    w.write("forcing", to_string(s.cfg.mode));
    w.write("tamed", s.cfg.tamed);
  }
  {
    detail::SectionWriter w(os, "experiment");
    w.write("kind", to_string(s.kind()));
    w.write("threads", s.threads);
    w.write("out", s.output_dir);
  }
  {
    detail::SectionWriter w(os, to_string(s.kind()));
    auto io = [&](const std::string& key, auto& field) { w.write(key, field); };
    std::visit([&](auto p) { detail::fields(io, p); }, s.params);
  }
  return os.str();
}

inline ExperimentSpec parse_ini(const std::string& text) {
  boost::property_tree::ptree root;
  try {
    std::istringstream is(text);
    boost::property_tree::read_ini(is, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  auto section = [&](const std::string& name) -> const boost::property_tree::ptree* {
    auto it = root.find(name);
    return it == root.not_found() ? nullptr : &it->second;
  };

  detail::SectionReader exp(section("experiment"), "experiment");
  std::string kind_name;
  exp.read("kind", kind_name);
  if (kind_name.empty()) throw ConfigError("[experiment] kind is required");
  ExperimentSpec s;
  s.params = default_params(kind_from_string(kind_name));
  exp.read("threads", s.threads);
  exp.read("out", s.output_dir);
  exp.finish();

  detail::SectionReader model(section("model"), "model");
  std::size_t N = 9;
  double eps = 1.0, dt = 1e-3;
  std::vector<double> sigma = {1.0};
  std::string seed = "1", forcing = "degenerate";
  bool tamed = true;
  model.read("N", N);
  model.read("epsilon", eps);
  model.read("sigma", sigma);
  model.read("dt", dt);
  model.read("seed", seed);
  model.read("forcing", forcing);
  model.read("tamed", tamed);
  model.finish();
  const ForcingMode mode = forcing_mode_from_string(forcing);
  if (sigma.size() == 1 && N != 1) {
    sigma = mode == ForcingMode::degenerate ? L96Config::degenerate_sigma(N, sigma[0]) : std::vector<double>(N, sigma[0]);
  }
  std::uint64_t sd = 0;
  {
    const auto [p, ec] = std::from_chars(seed.data(), seed.data() + seed.size(), sd);
    if (ec != std::errc() || p != seed.data() + seed.size()) throw ConfigError("model.seed: not an unsigned integer");
  }
  s.cfg = L96Config(N, eps, sigma, dt, sd, mode, tamed);

  const std::string kname = to_string(s.kind());
  detail::SectionReader kr(section(kname), kname);
  auto io = [&](const std::string& key, auto& field) { kr.read(key, field); };
  std::visit([&](auto& p) { detail::fields(io, p); }, s.params);
  kr.finish();

  for (const auto& [name, child] : root) {
    if (name != "model" && name != "experiment" && name != kname)
      throw ConfigError("unknown section [" + name + "]");
    (void)child;
  }
  validate(s);
  return s;
}

inline ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_ini(ss.str());
}

}  // namespace l96
