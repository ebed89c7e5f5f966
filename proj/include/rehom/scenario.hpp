#pragma once

// Scenario configuration and pipeline driver behind the command-line tool.
// Scenarios are strict sectioned key = value files: unknown sections or keys
// are rejected, every omitted key takes a documented default, and numeric
// values accept fraction syntax ("1/3"). parse -> serialize -> parse is the
// identity on the Scenario value. The pipeline runs stages in dependency
// order (validate, cells, tensor, flow, sweep, sigma), caches cell solutions
// by content key, records per-stage timings, failures, invariant-suite
// results, and a checksummed output inventory in a JSON manifest that is
// written atomically even when a stage fails.

#include <cstdint>
#include <string>
#include <vector>

#include "rehom/coeff.hpp"

namespace rehom::scenario {

inline constexpr const char* kArtifactVersion = "1.0.0";

// The six pipeline stages in execution order.
const std::vector<std::string>& stage_names();

struct Scenario {
  // [field]
  std::string family = "constant";
  coeff::Params field_params;
  // [cells]
  int n_y = 16;
  int n_z = 8;
  double cell_tol = 1e-10;
  // [domain] nx = ny = 0 derives the grid from the resolution rule.
  double Lx = 1.0, Ly = 1.0;
  int nx = 0, ny = 0;
  double dt = 0.0;  // <= 0 selects the stability default per grid
  double t_final = 0.25;
  // [forcing]
  std::string forcing = "swirl";
  double forcing_amplitude = 1.0;
  // [sweep]
  std::vector<double> epsilons{0.5, 1.0 / 3.0, 0.25};
  int points_per_fine_period = 24;
  int snapshots = 5;
  double viscous_tol = 1e-10;
  // [sigma]
  std::vector<double> sigma_epsilons{0.25, 0.0625, 1.0 / 64.0};
  int sigma_min_points = 8;
  // [output]
  std::string out_dir = "out";
  // [run]
  int threads = 2;
  std::uint64_t seed = 24601;  // drives the field validation sampling
  std::vector<std::string> stages{"validate", "cells", "tensor",
                                  "flow",     "sweep", "sigma"};

  bool operator==(const Scenario&) const = default;
};

// Strict parse of config text / file. Unknown sections, unknown keys,
// duplicate keys, malformed numbers, and out-of-range values raise
// ConfigError naming the offending entry and the violated rule. A grid left
// at nx = 0 is derived as ceil(8 Lx / eps_min^2) over the sweep list (64 when
// the list is empty); the rule itself is only *checked* by validate_scenario
// so that explicit undersized grids can still be forced through.
Scenario parse_scenario(const std::string& text);
Scenario parse_scenario_file(const std::string& path);

// Canonical rendering: fixed section and key order, shortest round-trip
// number formatting. parse_scenario(serialize_scenario(s)) == s.
std::string serialize_scenario(const Scenario& s);

// FNV-1a hash of the canonical rendering, 16 hex digits.
std::string scenario_hash(const Scenario& s);

// Semantic checks beyond parsing; currently the resolution rule
// nx >= 8 Lx / eps^2 (and ny likewise) against the smallest sweep epsilon.
// override_resolution accepts undersized grids (acknowledged unsafe).
void validate_scenario(const Scenario& s, bool override_resolution = false);

struct RunOptions {
  std::vector<std::string> stages;  // empty: use the scenario's [run] stages
  bool force = false;               // recompute cells, ignoring the cache
  bool override_resolution = false;
  int threads = 0;      // > 0 overrides the scenario value
  std::string out_dir;  // nonempty overrides the scenario value
};

struct StageReport {
  std::string name;
  std::string status = "skipped";  // "ok" | "failed" | "skipped"
  double wall_seconds = 0.0;
  std::string error;       // exception text when failed / skip reason
  std::string error_kind;  // "config" | "numeric" | "invariant" | ""
  bool cache_hit = false;  // cells stage: solution loaded from the cache
};

struct InvariantRecord {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct FileRecord {
  std::string path;  // relative to the output directory
  std::uint64_t bytes = 0;
  std::string checksum;  // FNV-1a 64, hex
};

struct RunManifest {
  std::string artifact_version;
  std::string scenario_hash;
  std::vector<StageReport> stages;      // selected stages, execution order
  std::vector<InvariantRecord> invariants;
  std::vector<FileRecord> outputs;      // everything under out_dir but the manifest
  bool ok = false;                      // all stages ok and all invariants pass
  std::string manifest_path;
};

// Runs the selected stages (expanded with their dependencies) and writes
// manifest.json into the output directory; the manifest lands atomically
// even when stages fail. Durable science outputs (tensor and report CSVs,
// binary dumps) are deterministic for a fixed scenario; the manifest's wall
// timings and the wall_seconds column of corrector_report.csv are the only
// run-dependent bytes.
RunManifest run_pipeline(const Scenario& s, const RunOptions& opt = {});

// Tidies per-stage outputs in out_dir into long-format plot CSVs:
// corrector_report.csv -> plots/decay_curve.csv  ("epsilon,E_grad,E_L2")
// tensor.csv           -> plots/tensor_entries.csv ("entry,value")
// sigma_{pairing,norms}.csv -> plots/sigma_gaps.csv ("epsilon,check,gap")
// Each plot file is written only when a source exists; an empty source
// yields a header-only plot file.
void emit_plot_data(const std::string& out_dir);

// 0 success; first failed stage decides otherwise (config 2, numeric 3,
// invariant 4); a failed invariant suite without a stage failure is 4.
int exit_code_for(const RunManifest& m);

}  // namespace rehom::scenario
