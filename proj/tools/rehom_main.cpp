// Command-line driver for the reiterated homogenization pipeline.
//
//   rehom <verb> --scenario config.ini [--out DIR] [--stages LIST]
//                [--threads N] [--force] [--override-resolution]
//
// Verbs select a pipeline prefix (dependencies are always included):
// validate, cells, tensor, flow, sweep, sigma, all. Exit codes: 0 success,
// 2 configuration error, 3 numeric failure, 4 invariant-suite failure.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rehom/errors.hpp"
#include "rehom/scenario.hpp"

namespace {

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : csv) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ' && c != '\t') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numerical toolkit for reiterated homogenization of two-scale "
               "periodic viscosity"};
  std::string verb = "all";
  std::string scenario_path, out_dir, stages_csv;
  int threads = 0;
  bool force = false, override_resolution = false;

  app.add_option("verb", verb, "validate | cells | tensor | flow | sweep | sigma | all")
      ->check(CLI::IsMember(
          {"validate", "cells", "tensor", "flow", "sweep", "sigma", "all"}));
  app.add_option("--scenario", scenario_path, "scenario config file")->required();
  app.add_option("--out", out_dir, "output directory (overrides [output] directory)");
  app.add_option("--stages", stages_csv,
                 "comma-separated stages (overrides the verb; dependencies are added)");
  app.add_option("--threads", threads, "worker threads for the cell stage");
  app.add_flag("--force", force, "recompute cell problems, ignoring the cache");
  app.add_flag("--override-resolution", override_resolution,
               "accept grids below the resolution rule (acknowledged unsafe)");
  CLI11_PARSE(app, argc, argv);

  try {
    const rehom::scenario::Scenario s =
        rehom::scenario::parse_scenario_file(scenario_path);

    rehom::scenario::RunOptions opt;
    opt.force = force;
    opt.override_resolution = override_resolution;
    opt.threads = threads;
    opt.out_dir = out_dir;
    if (!stages_csv.empty()) {
      opt.stages = split_list(stages_csv);
    } else if (verb != "all") {
      opt.stages = {verb};
    } else {
      opt.stages = rehom::scenario::stage_names();
    }

    const rehom::scenario::RunManifest m = rehom::scenario::run_pipeline(s, opt);
    for (const rehom::scenario::StageReport& r : m.stages) {
      std::string note = r.cache_hit ? "  [cache]" : "";
      if (!r.error.empty()) note += "  " + r.error;
      std::printf("%-9s %-7s %8.3fs%s\n", r.name.c_str(), r.status.c_str(),
                  r.wall_seconds, note.c_str());
    }
    for (const rehom::scenario::InvariantRecord& r : m.invariants)
      if (!r.pass)
        std::printf("invariant %s FAILED (%s)\n", r.name.c_str(), r.detail.c_str());
    std::printf("manifest: %s\n", m.manifest_path.c_str());
    return rehom::scenario::exit_code_for(m);
  } catch (const rehom::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const rehom::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const rehom::InvariantError& e) {
    std::fprintf(stderr, "invariant violation: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
