#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "l96/report.hpp"

using namespace l96;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("l96_test_" + name);
  fs::remove_all(d);
  return d;
}

const char* minimal_ini = R"(
[experiment]
kind = simulate

[model]
N = 9
epsilon = 0.5
sigma = 2
dt = 0.001
seed = 17

[simulate]
horizon = 0.5
thin = 10
)";

}  // namespace

TEST(Spec, KindNamesRoundTrip) {
  for (const auto& [k, name] : kind_names()) {
    EXPECT_EQ(kind_from_string(name), k);
    EXPECT_EQ(to_string(k), name);
  }
  EXPECT_EQ(to_string(ExperimentKind::moment_curve), "moment-lyap");
  EXPECT_THROW(kind_from_string("nope"), ConfigError);
}

TEST(Spec, IniRoundTripForEveryKind) {
  for (const auto& [k, name] : kind_names()) {
    const auto s = default_spec(k);
    const std::string ini = to_ini(s);
    const auto back = parse_ini(ini);
    EXPECT_EQ(back.kind(), k) << name;
    EXPECT_EQ(back.cfg, s.cfg) << name;
    EXPECT_EQ(to_ini(back), ini) << name;
  }
}

TEST(Spec, ParsesMinimalConfig) {
  const auto s = parse_ini(minimal_ini);
  EXPECT_EQ(s.kind(), ExperimentKind::simulate);
  EXPECT_EQ(s.cfg.seed, 17u);
  EXPECT_EQ(s.cfg.sigma, L96Config::degenerate_sigma(9, 2.0));
  EXPECT_DOUBLE_EQ(std::get<SimulateParams>(s.params).horizon, 0.5);
  EXPECT_EQ(std::get<SimulateParams>(s.params).thin, 10u);
}

TEST(Spec, RejectsUnknownKeysSectionsAndBadValues) {
  const std::string base = minimal_ini;
  EXPECT_THROW(parse_ini(base + "bogus = 1\n"), ConfigError);
  EXPECT_THROW(parse_ini(base + "[lyapunov]\nhorizon = 5\n"), ConfigError);
  EXPECT_THROW(parse_ini(base + "[extra]\nx = 1\n"), ConfigError);
  std::string bad = base;
  bad.replace(bad.find("N = 9"), 5, "N = 10");
  EXPECT_THROW(parse_ini(bad), ConfigError);
  bad = base;
  bad.replace(bad.find("thin = 10"), 9, "thin = ten");
  EXPECT_THROW(parse_ini(bad), ConfigError);
  bad = base;
  bad.replace(bad.find("horizon = 0.5"), 13, "horizon = -1");
  EXPECT_THROW(parse_ini(bad), ConfigError);
  EXPECT_THROW(parse_ini("[model]\nN = 9\n"), ConfigError);
  EXPECT_THROW(parse_ini("[experiment\nkind = simulate\n"), ConfigError);
  EXPECT_THROW(load_spec("/nonexistent/config.ini"), ConfigError);
}

TEST(Report, ExitCodes) {
  ExperimentResult r;
  EXPECT_EQ(exit_code_for(r), exit_empty);
  r.tables.push_back({"t", {"a"}, {{"1"}}});
  EXPECT_EQ(exit_code_for(r), exit_ok);
  r.checks.push_back({"c", "x", "y", false});
  EXPECT_EQ(exit_code_for(r), exit_acceptance);
  r.blow_up_abort = true;
  EXPECT_EQ(exit_code_for(r), exit_blow_up);
}

TEST(Report, EmptyResultWritesOnlyManifest) {
  const auto dir = fresh_dir("empty");
  ExperimentResult r;
  r.kind = "simulate";
  r.tables.push_back({"t", {"a", "b"}, {}});
  RunManifest m{default_spec(ExperimentKind::simulate), 0.0, RunManifest::utc_now()};
  EXPECT_EQ(emit_report(r, m, dir), exit_empty);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_FALSE(fs::exists(dir / "t.csv"));
  EXPECT_FALSE(fs::exists(dir / "summary.txt"));
  const auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(j["exit_code"], 5);
  fs::remove_all(dir);
}

TEST(Report, CsvLayout) {
  std::ostringstream os;
  write_table_csv(os, {"x", {"eps", "lambda"}, {{"1", "-0.5"}, {"0.2", "0.1"}}});
  EXPECT_EQ(os.str(), "eps,lambda\n1,-0.5\n0.2,0.1\n");
}

TEST(Report, RerunFromManifestIsByteIdentical) {
  const auto a = fresh_dir("run_a"), b = fresh_dir("run_b");
  auto spec = parse_ini(minimal_ini);
  RunManifest m{spec, 0.0, RunManifest::utc_now()};
  EXPECT_EQ(emit_report(run_experiment(spec), m, a), exit_ok);
  const auto again = load_spec_or_manifest((a / "manifest.json").string());
  EXPECT_EQ(to_ini(again), to_ini(spec));
  RunManifest m2{again, 0.0, RunManifest::utc_now()};
  EXPECT_EQ(emit_report(run_experiment(again), m2, b), exit_ok);
  EXPECT_EQ(slurp(a / "trajectory.csv"), slurp(b / "trajectory.csv"));
  EXPECT_EQ(slurp(a / "summary.txt"), slurp(b / "summary.txt"));
  const auto j = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(j["seed"], 17);
  EXPECT_EQ(j["dt"], 0.001);
  EXPECT_TRUE(j["environment"].contains("compiler"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Report, ManifestErrors) {
  const auto dir = fresh_dir("badmanifest");
  fs::create_directories(dir);
  std::ofstream(dir / "m.json") << "{\"kind\": 1}";
  EXPECT_THROW(load_spec_or_manifest((dir / "m.json").string()), ConfigError);
  std::ofstream(dir / "n.json") << "{not json";
  EXPECT_THROW(load_spec_or_manifest((dir / "n.json").string()), ConfigError);
  fs::remove_all(dir);
}

TEST(Escape, DeltaAboveThresholdIsImmediate) {
  const auto cfg = L96Config::degenerate(9, 0.05, 1.0, 1e-3, 1);
  const auto e = run_escape_time(cfg, {1.0, 1e-2}, 1.0, 8, 20.0, 2);
  ASSERT_EQ(e.rows.size(), 2u);
  EXPECT_EQ(e.rows[0].mean_time, 0.0);
  EXPECT_EQ(e.rows[0].escaped, 8u);
  EXPECT_EQ(e.rows[1].escaped + e.rows[1].censored + e.rows[1].blown, 8u);
  EXPECT_THROW(run_escape_time(cfg, {}, 1.0, 8, 20.0), DomainError);
  EXPECT_THROW(run_escape_time(cfg, {2.0}, 1.0, 8, 20.0), DomainError);
}

TEST(Escape, IndependentOfThreadCount) {
  const auto cfg = L96Config::degenerate(9, 0.2, 1.0, 1e-3, 4);
  const auto a = run_escape_time(cfg, {1e-2, 1e-3}, 1.0, 6, 10.0, 1);
  const auto b = run_escape_time(cfg, {1e-2, 1e-3}, 1.0, 6, 10.0, 3);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_EQ(a.rows[i].escaped, b.rows[i].escaped);
    if (a.rows[i].escaped) EXPECT_EQ(a.rows[i].mean_time, b.rows[i].mean_time);
  }
}

TEST(Hist, MassesSumToOneAndForcedVariance) {
  const auto cfg = L96Config::degenerate(9, 5.0, 1.0, 1e-3, 1);
  const auto h = run_stationary_hist(cfg, 60.0, 5.0, 20, 2.0, 10);
  double total = 0;
  for (double x : h.mass) total += x;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_EQ(h.batches, 10u);
  EXPECT_DOUBLE_EQ(h.forced_var_expected, 0.5);
  EXPECT_NEAR(h.forced_var.value, 0.5, 0.15);
  EXPECT_NEAR(h.mass_below(1e9).value, 1.0, 1e-12);
  EXPECT_THROW(run_stationary_hist(cfg, 5.0, 10.0, 20, 2.0, 10), DomainError);
}

TEST(Sync, FractionsAndMedian) {
  const auto cfg = L96Config::degenerate(9, 5.0, 1.0, 1e-3, 1);
  const auto rows = run_sync_sweep(cfg, {5.0}, 4, 20.0, 1e-6, 2);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].pairs, 4u);
  EXPECT_EQ(rows[0].fraction, 1.0);
  EXPECT_GT(rows[0].median_time, 0.0);
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0}), 2.5);
}

TEST(MidpointDefect, GaussianSamplesAreConcave) {
  // Lambda(p) = p mu - p^2 s^2 / 2, so the midpoint defect is -s^2 h^2 / 2.
  const double T = 40.0, mu = 0.1, s = 0.7;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(mu * T, s * std::sqrt(T));
  std::vector<double> L(100000);
  for (auto& x : L) x = nd(rng);
  const auto d = midpoint_defect(L, 0.1, 0.3, 0.5, T, 200, 1);
  EXPECT_NEAR(d.defect, -s * s * 0.04 / 2, 5 * d.std_err);
}

TEST(RunExperiment, CapVerifySmall) {
  auto spec = default_spec(ExperimentKind::cap_verify);
  auto& cap = std::get<CapParams>(spec.params);
  cap.N = 9;
  const auto r = run_experiment(spec);
  EXPECT_EQ(r.data["dim"], 29);
  EXPECT_EQ(r.data["expected"], 35);
  EXPECT_EQ(r.data["depthUsed"], 4);
  EXPECT_EQ(exit_code_for(r), exit_acceptance);
  ASSERT_EQ(r.tables.size(), 1u);
  EXPECT_EQ(r.tables[0].rows[0][2], "29");
}

TEST(RunExperiment, LyapunovTableHasBothEstimators) {
  auto spec = default_spec(ExperimentKind::lyapunov);
  auto& p = std::get<LyapunovParams>(spec.params);
  p.horizon = 50.0;
  p.batches = 5;
  const auto r = run_experiment(spec);
  ASSERT_EQ(r.tables.size(), 1u);
  ASSERT_EQ(r.tables[0].rows.size(), 2u);
  EXPECT_EQ(r.tables[0].rows[0][0], "logNormGrowth");
  EXPECT_EQ(r.tables[0].rows[1][0], "fkAverage");
  EXPECT_EQ(r.data["burn_in"], 10.0);
}
