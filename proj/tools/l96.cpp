// Command-line front end: one subcommand per experiment kind.

#include <chrono>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "l96/experiments.hpp"
#include "l96/report.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  std::optional<double> eps;
  bool print_config = false;
};

struct CapFlags {
  std::optional<std::size_t> N;
  std::optional<std::size_t> depth_cap;
  std::optional<std::string> generators;
  std::optional<std::string> emit_basis;
};

l96::ExperimentSpec build_spec(l96::ExperimentKind kind, const Common& c, const CapFlags& cap) {
  l96::ExperimentSpec s = c.config.empty() ? l96::default_spec(kind) : l96::load_spec_or_manifest(c.config);
  if (s.kind() != kind)
    throw l96::ConfigError("config describes '" + to_string(s.kind()) + "', not '" + to_string(kind) + "'");
  if (c.seed) s.cfg.seed = *c.seed;
  if (c.out) s.output_dir = *c.out;
  if (c.threads) s.threads = *c.threads;
  if (c.eps) s.cfg.epsilon = *c.eps;
  if (auto* p = std::get_if<l96::CapParams>(&s.params)) {
    if (cap.N) p->N = *cap.N;
    if (cap.depth_cap) p->depth_cap = *cap.depth_cap;
    if (cap.generators) p->generators = *cap.generators;
    if (cap.emit_basis) p->emit_basis = *cap.emit_basis;
  }
  l96::validate(s);
  return s;
}

int run(l96::ExperimentKind kind, const Common& c, const CapFlags& cap) {
  l96::ExperimentSpec spec;
  try {
    spec = build_spec(kind, c, cap);
  } catch (const l96::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return l96::exit_config;
  }
  if (c.print_config) {
    std::cout << l96::to_ini(spec);
    return l96::exit_ok;
  }

  l96::RunManifest m{spec, 0.0, l96::RunManifest::utc_now()};
  const auto t0 = std::chrono::steady_clock::now();
  l96::ExperimentResult result;
  try {
    result = l96::run_experiment(spec);
  } catch (const l96::BlowUpError& e) {
    std::cerr << "blow-up: " << e.what() << '\n';
    result.kind = to_string(kind);
    result.blow_up_abort = true;
    result.notes.push_back(std::string("aborted: ") + e.what());
  } catch (const l96::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return l96::exit_config;
  } catch (const l96::DomainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return l96::exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  int code = 0;
  try {
    code = l96::emit_report(result, m, spec.output_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  if (kind == l96::ExperimentKind::cap_verify) std::cout << result.data.dump() << '\n';
  std::cout << l96::summary_text(result, m);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic Lorenz-96 toolkit: transverse Lyapunov exponents, moment exponents, exact Lie closure"};
  app.require_subcommand(1);
  Common common;
  CapFlags cap;

  struct Entry {
    l96::ExperimentKind kind;
    const char* help;
    CLI::App* sub = nullptr;
  };
  std::vector<Entry> entries = {
      {l96::ExperimentKind::simulate, "integrate one trajectory from a generic initial state"},
      {l96::ExperimentKind::lyapunov, "estimate the top transverse Lyapunov exponent"},
      {l96::ExperimentKind::moment_curve, "moment Lyapunov exponent Lambda(p) on a grid of p"},
      {l96::ExperimentKind::scan_epsilon, "transverse exponent over a decreasing epsilon grid"},
      {l96::ExperimentKind::sync_test, "fraction of noise-coupled pairs that synchronize"},
      {l96::ExperimentKind::escape_time, "mean escape time from a neighbourhood of H_I"},
      {l96::ExperimentKind::stationary_hist, "time-averaged histogram of the transverse norm"},
      {l96::ExperimentKind::cap_verify, "exact Lie closure of the transverse interaction matrices"},
      {l96::ExperimentKind::super_lyap, "Monte Carlo probe of the exp(eta |u|^2) drift bound"},
  };
  for (auto& e : entries) {
    e.sub = app.add_subcommand(to_string(e.kind), e.help);
    e.sub->add_option("--config", common.config, "INI config file or manifest.json to re-run");
    e.sub->add_option("--seed", common.seed, "override model seed");
    e.sub->add_option("--out", common.out, "output directory");
    e.sub->add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);
    e.sub->add_option("--eps", common.eps, "override epsilon");
    e.sub->add_flag("--print-config", common.print_config, "print the effective config and exit");
    if (e.kind == l96::ExperimentKind::cap_verify) {
      e.sub->add_option("--N", cap.N, "system size (multiple of 3)");
      e.sub->add_option("--depth-cap", cap.depth_cap, "maximum bracket depth");
      e.sub->add_option("--generators", cap.generators, "all | local")->check(CLI::IsMember({"all", "local"}));
      e.sub->add_option("--emit-basis", cap.emit_basis, "write the span basis as num/den CSV");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : l96::exit_config;
  }
  for (const auto& e : entries)
    if (e.sub->parsed()) return run(e.kind, common, cap);
  return l96::exit_config;
}
