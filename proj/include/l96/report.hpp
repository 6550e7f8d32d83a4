#pragma once

// Run manifests and report files: one CSV per table, manifest.json and a
// plain-text summary.

#include <sys/utsname.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>

#include "json.hpp"
#include "l96/experiment_spec.hpp"
#include "l96/experiments.hpp"

namespace l96 {

inline constexpr const char* toolkit_name = "l96-toolkit";
inline constexpr const char* toolkit_version = "0.1.0";

enum ExitCode : int {
  exit_ok = 0,
  exit_acceptance = 2,
  exit_blow_up = 3,
  exit_config = 4,
  exit_empty = 5,
};

struct RunManifest {
  ExperimentSpec spec;
  double wall_clock_seconds = 0.0;
  std::string started_utc;

  static std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
  }
};

inline nlohmann::ordered_json environment_fingerprint() {
  nlohmann::ordered_json env;
  struct utsname u {};
  if (uname(&u) == 0) {
    env["system"] = u.sysname;
    env["release"] = u.release;
    env["machine"] = u.machine;
  }
#if defined(__clang__)
  env["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  env["compiler"] = std::string("gcc ") + __VERSION__;
#endif
  env["cplusplus"] = __cplusplus;
  env["hardware_threads"] = std::thread::hardware_concurrency();
  return env;
}

inline bool has_data(const ExperimentResult& r) {
  for (const auto& t : r.tables)
    if (!t.rows.empty()) return true;
  return false;
}

inline int exit_code_for(const ExperimentResult& r) {
  if (r.blow_up_abort) return exit_blow_up;
  if (!has_data(r)) return exit_empty;
  for (const auto& c : r.checks)
    if (!c.pass) return exit_acceptance;
  return exit_ok;
}

inline void write_table_csv(std::ostream& os, const Table& t) {
  for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << t.header[i];
  os << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
}

inline std::string summary_text(const ExperimentResult& r, const RunManifest& m) {
  std::ostringstream os;
  os << toolkit_name << ' ' << toolkit_version << "  " << r.kind;
  if (const auto* cap = std::get_if<CapParams>(&m.spec.params))
    os << "  N " << cap->N << "  generators " << cap->generators << '\n';
  else
    os << "  seed " << m.spec.cfg.seed << "  N " << m.spec.cfg.N << "  eps " << format_double(m.spec.cfg.epsilon)
       << "  dt " << format_double(m.spec.cfg.dt) << '\n';
  for (const auto& c : r.checks)
    os << (c.pass ? "PASS  " : "FAIL  ") << c.name << ": " << c.observed << "  [" << c.criterion << "]\n";
  for (const auto& n : r.notes) os << "note  " << n << '\n';
  if (r.excluded) os << "excluded (blow-up): " << r.excluded << '\n';
  return os.str();
}

inline nlohmann::ordered_json manifest_json(const ExperimentResult& r, const RunManifest& m, int code,
                                            const std::vector<std::string>& files) {
  nlohmann::ordered_json j;
  j["toolkit"] = toolkit_name;
  j["version"] = toolkit_version;
  j["kind"] = to_string(m.spec.kind());
  j["spec"] = to_ini(m.spec);
  j["seed"] = m.spec.cfg.seed;
  j["streams"] = {{"noise", "path m uses stream m"}, {"initial_conditions", "path m uses stream 2^40 + m"}};
  j["dt"] = m.spec.cfg.dt;
  if (r.data.contains("burn_in")) j["burn_in"] = r.data["burn_in"];
  j["threads"] = m.spec.threads;
  j["started_utc"] = m.started_utc;
  j["wall_clock_seconds"] = m.wall_clock_seconds;
  j["excluded"] = r.excluded;
  j["blow_up_abort"] = r.blow_up_abort;
  j["flagged"] = r.flagged;
  j["exit_code"] = code;
  nlohmann::ordered_json checks = nlohmann::ordered_json::array();
  for (const auto& c : r.checks)
    checks.push_back({{"name", c.name}, {"observed", c.observed}, {"criterion", c.criterion}, {"pass", c.pass}});
  j["checks"] = checks;
  j["notes"] = r.notes;
  j["results"] = r.data;
  j["files"] = files;
  j["environment"] = environment_fingerprint();
  return j;
}

/// Writes <dir>/<table>.csv for every nonempty table, summary.txt and
/// manifest.json; returns the exit code. With no data rows only the manifest
/// is written and the code is exit_empty. Filesystem errors propagate as
/// std::filesystem::filesystem_error or std::runtime_error.
inline int emit_report(const ExperimentResult& r, const RunManifest& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const int code = exit_code_for(r);
  auto open = [&](const std::string& name) {
    std::ofstream os(dir / name);
    if (!os) throw std::runtime_error("cannot open '" + (dir / name).string() + "' for writing");
    return os;
  };
  std::vector<std::string> files;
  if (code != exit_empty) {
    for (const auto& t : r.tables) {
      if (t.rows.empty()) continue;
      auto os = open(t.name + ".csv");
      write_table_csv(os, t);
      files.push_back(t.name + ".csv");
    }
    auto os = open("summary.txt");
    os << summary_text(r, m);
    files.push_back("summary.txt");
  }
  auto os = open("manifest.json");
  os << manifest_json(r, m, code, files).dump(2) << '\n';
  if (!os) throw std::runtime_error("write to manifest.json failed");
  return code;
}

/// Spec from an INI config file or from the spec echo of a manifest.json.
inline ExperimentSpec load_spec_or_manifest(const std::string& path) {
  if (std::filesystem::path(path).extension() == ".json") {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!j.contains("spec") || !j["spec"].is_string()) throw ConfigError("manifest has no spec echo");
    return parse_ini(j["spec"].get<std::string>());
  }
  return load_spec(path);
}

}  // namespace l96
