#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include <json.hpp>

#include "rehom/cells.hpp"
#include "rehom/coeff.hpp"
#include "rehom/corrector.hpp"
#include "rehom/effective.hpp"
#include "rehom/errors.hpp"
#include "rehom/flow.hpp"
#include "rehom/io_util.hpp"
#include "rehom/scenario.hpp"
#include "rehom/sigma.hpp"

namespace rehom::scenario {

namespace {

namespace fs = std::filesystem;

const std::map<std::string, std::vector<std::string>> kDeps{
    {"validate", {}},         {"cells", {"validate"}}, {"tensor", {"cells"}},
    {"flow", {"tensor"}},     {"sweep", {"tensor"}},   {"sigma", {"validate"}},
};

struct PipelineState {
  Scenario s;  // effective scenario after option overrides
  bool force = false;
  bool override_resolution = false;
  std::string out;
  coeff::CoefficientField field;
  coeff::CellSampling sampling;
  cells::CellSolution sol;
  effective::EffectiveTensor tensor;
  std::vector<InvariantRecord> inv;
  bool sol_from_cache = false;
};

std::string join_path(const std::string& dir, const std::string& rel) {
  return (fs::path(dir) / rel).string();
}

void stage_validate(PipelineState& st) {
  validate_scenario(st.s, st.override_resolution);
  st.field = coeff::make_builtin(st.s.family, st.s.field_params);
  const coeff::ValidationReport rep = coeff::validate(st.field, 16, st.s.seed);
  st.inv.push_back({"field_validation", rep.pass,
                    "min_rayleigh=" + io::fmt_double(rep.min_rayleigh) +
                        " symmetry_defect=" + io::fmt_double(rep.max_symmetry_defect) +
                        " periodicity_defect=" +
                        io::fmt_double(rep.max_periodicity_defect)});
  if (!rep.pass)
    throw InvariantError("coefficient field validation failed (min_rayleigh = " +
                         io::fmt_double(rep.min_rayleigh) + ", alpha = " +
                         io::fmt_double(st.field.alpha) + ")");
}

std::string cell_cache_path(const PipelineState& st) {
  const std::string key = st.field.family_tag + "|" + std::to_string(st.s.n_y) +
                          "|" + std::to_string(st.s.n_z) + "|" +
                          io::fmt_double(st.s.cell_tol);
  return join_path(st.out, "cache/cells_" + io::hex64(io::fnv1a64_str(key)) + ".bin");
}

void stage_cells(PipelineState& st) {
  st.sampling = coeff::sample(st.field, st.s.n_y, st.s.n_z);
  const std::string cache = cell_cache_path(st);
  st.sol_from_cache = false;
  if (!st.force && io::file_exists(cache)) {
    try {
      cells::CellSolution loaded = cells::load_cell_solution(cache);
      if (loaded.sampling.field_tag == st.sampling.field_tag &&
          loaded.sampling.n_y == st.s.n_y && loaded.sampling.n_z == st.s.n_z &&
          loaded.tol == st.s.cell_tol) {
        st.sol = std::move(loaded);
        st.sol_from_cache = true;
      }
    } catch (const std::exception&) {
      // Stale or foreign cache entry: fall through and recompute.
    }
  }
  if (!st.sol_from_cache) {
    st.sol = cells::solve_all(st.sampling, st.s.cell_tol, st.s.threads);
    cells::dump_cell_solution(st.sol, cache);
  }

  cells::CellContext ctx(st.sampling);
  cells::CellVec v;
  std::string csv =
      "i,k,residual,iterations,chi_energy,eta_energy,div_defect_chi,div_defect_eta\n";
  double max_res = 0.0, max_div = 0.0;
  for (int i = 1; i <= 2; ++i)
    for (int k = 1; k <= 2; ++k) {
      const cells::CellEntry& e = st.sol.entry(i, k);
      cells::entry_to_vec(ctx, e, v);
      const double dchi = cells::divergence_defect(e.chi);
      const double deta = cells::divergence_defect_eta(e.eta);
      max_res = std::max(max_res, e.residual);
      max_div = std::max({max_div, dchi, deta});
      csv += std::to_string(i) + "," + std::to_string(k) + "," +
             io::fmt_double(e.residual) + "," + std::to_string(e.iterations) + "," +
             io::fmt_double(cells::chi_gradient_energy(ctx, v)) + "," +
             io::fmt_double(cells::eta_gradient_energy(ctx, v)) + "," +
             io::fmt_double(dchi) + "," + io::fmt_double(deta) + "\n";
    }
  io::atomic_write(join_path(st.out, "cells_summary.csv"), csv);
  st.inv.push_back({"cell_residuals", max_res <= st.s.cell_tol * 10.0,
                    "max_residual=" + io::fmt_double(max_res)});
  st.inv.push_back({"cell_divergence", max_div <= 1e-7,
                    "max_defect=" + io::fmt_double(max_div)});
}

void stage_tensor(PipelineState& st) {
  st.tensor = effective::assemble_q(st.sol, st.sampling);
  const effective::EffectiveTensor qe =
      effective::assemble_q_energy_form(st.sol, st.sampling);
  double scale = 0.0, gap = 0.0;
  for (int e = 0; e < 16; ++e) {
    scale = std::max(scale, std::abs(st.tensor.q[e]));
    gap = std::max(gap, std::abs(st.tensor.q[e] - qe.q[e]));
  }
  const double rel_gap = gap / std::max(scale, 1e-300);
  const effective::TensorCheck chk = effective::check_tensor(st.tensor, st.field);

  effective::write_tensor_csv(st.tensor, join_path(st.out, "tensor.csv"));
  std::string csv = "check,value\n";
  csv += "symmetry_defect," + io::fmt_double(chk.symmetry_defect) + "\n";
  csv += "alpha0," + io::fmt_double(chk.alpha0) + "\n";
  csv += "upper_margin," + io::fmt_double(chk.upper_margin) + "\n";
  csv += "voigt_condition," + io::fmt_double(chk.voigt_condition) + "\n";
  csv += "cross_assembly_rel_gap," + io::fmt_double(rel_gap) + "\n";
  csv += "field_alpha," + io::fmt_double(st.field.alpha) + "\n";
  io::atomic_write(join_path(st.out, "tensor_checks.csv"), csv);

  st.inv.push_back({"tensor_symmetry", chk.symmetry_defect <= 1e-9,
                    "defect=" + io::fmt_double(chk.symmetry_defect)});
  st.inv.push_back({"tensor_coercivity", chk.alpha0 > 0.0,
                    "alpha0=" + io::fmt_double(chk.alpha0)});
  st.inv.push_back({"tensor_upper_bound", chk.upper_margin >= -1e-8,
                    "margin=" + io::fmt_double(chk.upper_margin)});
  st.inv.push_back({"tensor_cross_assembly", rel_gap <= 1e-7,
                    "rel_gap=" + io::fmt_double(rel_gap)});
}

void stage_flow(PipelineState& st) {
  flow::FlowConfig fc;
  fc.grid = flow::Grid{st.s.nx, st.s.ny, st.s.Lx, st.s.Ly};
  fc.tensor = flow::constant_tensor(st.tensor);
  fc.forcing = flow::make_forcing(st.s.forcing, st.s.forcing_amplitude);
  fc.model_tag = "homogenized|" + st.field.family_tag;
  fc.dt = st.s.dt;
  fc.t_end = st.s.t_final;
  fc.viscous_tol = st.s.viscous_tol;
  const flow::RunResult run = flow::run_flow(fc);

  flow::write_energy_csv(run.ledger, join_path(st.out, "energy_ledger.csv"));
  flow::dump_snapshot(flow::Snapshot{run.grid, run.final_state, run.model_tag},
                      join_path(st.out, "flow_final.bin"));

  bool finite = true;
  for (const flow::EnergyRow& r : run.ledger)
    finite = finite && std::isfinite(r.kinetic_energy) && std::isfinite(r.dissipation) &&
             std::isfinite(r.forcing_power);
  st.inv.push_back({"flow_divergence", run.max_divergence <= 1e-8,
                    "max_divergence=" + io::fmt_double(run.max_divergence)});
  st.inv.push_back({"flow_energy_finite", finite,
                    "steps=" + std::to_string(run.steps)});
}

void stage_sweep(PipelineState& st) {
  const std::string path = join_path(st.out, "corrector_report.csv");
  if (st.s.epsilons.empty()) {
    corrector::write_corrector_csv(corrector::CorrectorReport{}, path);
    return;
  }
  corrector::SweepConfig cfg;
  cfg.field = st.field;
  cfg.cells = st.sol;
  cfg.tensor = st.tensor;
  cfg.epsilons = st.s.epsilons;
  cfg.t_end = st.s.t_final;
  cfg.forcing = st.s.forcing;
  cfg.forcing_amplitude = st.s.forcing_amplitude;
  cfg.points_per_fine_period = st.s.points_per_fine_period;
  cfg.min_points_per_fine_period = st.override_resolution ? 2 : 8;
  cfg.viscous_tol = st.s.viscous_tol;
  cfg.snapshots = st.s.snapshots;
  const corrector::CorrectorReport report = corrector::corrector_sweep(cfg);
  corrector::write_corrector_csv(report, path);

  bool rows_ok = true;
  std::string first_error;
  double max_parseval = 0.0;
  bool decay = true;
  const corrector::CorrectorRow* prev = nullptr;
  for (const corrector::CorrectorRow& r : report.rows) {
    if (!r.ok) {
      rows_ok = false;
      if (first_error.empty()) first_error = r.error;
      continue;
    }
    max_parseval = std::max(max_parseval, r.parseval_rel_gap);
    if (prev) decay = decay && r.E_grad < prev->E_grad && r.E_L2 < prev->E_L2;
    prev = &r;
  }
  st.inv.push_back({"sweep_rows_ok", rows_ok, first_error});
  st.inv.push_back({"sweep_parseval", max_parseval <= 0.01,
                    "max_rel_gap=" + io::fmt_double(max_parseval)});
  st.inv.push_back({"sweep_error_decay", decay,
                    std::to_string(report.rows.size()) + " rows"});
}

void stage_sigma(PipelineState& st) {
  const std::string pairing_path = join_path(st.out, "sigma_pairing.csv");
  const std::string norms_path = join_path(st.out, "sigma_norms.csv");
  if (st.s.sigma_epsilons.empty()) {
    sigma::write_sigma_csv({}, pairing_path);
    sigma::write_sigma_csv({}, norms_path);
    return;
  }
  const sigma::Domain dom{st.s.Lx, st.s.Ly, st.s.t_final};
  sigma::TestFunction psi;
  psi.phi = [](double x1, double x2, double t) {
    return (1.0 + x1) * (1.0 + 0.5 * x2) * (1.0 + t);
  };
  psi.mu1 = sigma::TrigPoly1D::cosine(1);
  psi.nu1 = sigma::TrigPoly1D::cosine(1);

  std::vector<sigma::PairingRecord> pair_rows;
  for (double eps : st.s.sigma_epsilons)
    pair_rows.push_back(sigma::pairing(psi, psi, eps, dom, st.s.sigma_min_points));
  const std::vector<sigma::PairingRecord> norm_rows =
      sigma::norm_convergence_check(psi, st.s.sigma_epsilons, dom, st.s.sigma_min_points);
  const sigma::PairingRecord bound =
      sigma::trace_norm_bound(psi, st.s.sigma_epsilons.back(), dom, st.s.sigma_min_points);
  sigma::write_sigma_csv(pair_rows, pairing_path);
  sigma::write_sigma_csv(norm_rows, norms_path);

  const bool pairing_decay = pair_rows.size() < 2 ||
                             pair_rows.back().gap <= pair_rows.front().gap + 1e-12;
  bool norm_decay = true;
  for (std::size_t i = 1; i < norm_rows.size(); ++i)
    norm_decay = norm_decay && norm_rows[i].gap < norm_rows[i - 1].gap + 1e-15;
  st.inv.push_back({"sigma_pairing_decay", pairing_decay,
                    "first_gap=" + io::fmt_double(pair_rows.front().gap) +
                        " last_gap=" + io::fmt_double(pair_rows.back().gap)});
  st.inv.push_back({"sigma_norm_decay", norm_decay,
                    "last_gap=" + io::fmt_double(norm_rows.back().gap)});
  st.inv.push_back({"sigma_trace_bound", bound.gap <= 1e-10,
                    "excess=" + io::fmt_double(bound.gap)});
}

// Minimal CSV reader for the plot emitter: no quoting in any of our files.
std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  const std::string text = io::read_file(path);
  std::string line;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == '\n') {
      if (!line.empty()) {
        std::vector<std::string> cols;
        std::string cur;
        for (char c : line) {
          if (c == ',') {
            cols.push_back(cur);
            cur.clear();
          } else if (c != '\r') {
            cur += c;
          }
        }
        cols.push_back(cur);
        rows.push_back(std::move(cols));
      }
      line.clear();
    } else {
      line += text[i];
    }
  }
  return rows;
}

std::vector<std::string> stage_closure(const std::vector<std::string>& requested) {
  std::set<std::string> picked;
  std::vector<std::string> work(requested.begin(), requested.end());
  while (!work.empty()) {
    const std::string name = work.back();
    work.pop_back();
    auto it = kDeps.find(name);
    if (it == kDeps.end()) throw ConfigError("unknown stage '" + name + "'");
    if (!picked.insert(name).second) continue;
    for (const std::string& d : it->second) work.push_back(d);
  }
  std::vector<std::string> ordered;
  for (const std::string& name : stage_names())
    if (picked.count(name)) ordered.push_back(name);
  return ordered;
}

nlohmann::json manifest_json(const RunManifest& m) {
  nlohmann::json j;
  j["artifact_version"] = m.artifact_version;
  j["scenario_hash"] = m.scenario_hash;
  j["ok"] = m.ok;
  j["stages"] = nlohmann::json::array();
  for (const StageReport& r : m.stages)
    j["stages"].push_back({{"name", r.name},
                           {"status", r.status},
                           {"wall_seconds", r.wall_seconds},
                           {"error", r.error},
                           {"error_kind", r.error_kind},
                           {"cache_hit", r.cache_hit}});
  j["invariants"] = nlohmann::json::array();
  for (const InvariantRecord& r : m.invariants)
    j["invariants"].push_back({{"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
  j["outputs"] = nlohmann::json::array();
  for (const FileRecord& f : m.outputs)
    j["outputs"].push_back(
        {{"path", f.path}, {"bytes", f.bytes}, {"checksum", f.checksum}});
  return j;
}

}  // namespace

void emit_plot_data(const std::string& out_dir) {
  const std::string report = join_path(out_dir, "corrector_report.csv");
  if (io::file_exists(report)) {
    std::string csv = "epsilon,E_grad,E_L2\n";
    const auto rows = read_csv(report);
    for (std::size_t r = 1; r < rows.size(); ++r)
      if (rows[r].size() >= 3)
        csv += rows[r][0] + "," + rows[r][1] + "," + rows[r][2] + "\n";
    io::atomic_write(join_path(out_dir, "plots/decay_curve.csv"), csv);
  }

  const std::string tensor = join_path(out_dir, "tensor.csv");
  if (io::file_exists(tensor)) {
    std::string csv = "entry,value\n";
    const auto rows = read_csv(tensor);
    for (std::size_t r = 1; r < rows.size(); ++r)
      if (rows[r].size() >= 5)
        csv += "q_" + rows[r][0] + rows[r][1] + rows[r][2] + rows[r][3] + "," +
               rows[r][4] + "\n";
    io::atomic_write(join_path(out_dir, "plots/tensor_entries.csv"), csv);
  }

  const std::string pairing = join_path(out_dir, "sigma_pairing.csv");
  const std::string norms = join_path(out_dir, "sigma_norms.csv");
  if (io::file_exists(pairing) || io::file_exists(norms)) {
    std::string csv = "epsilon,check,gap\n";
    for (auto [path, label] : {std::pair<const std::string&, const char*>{pairing, "pairing"},
                               {norms, "norm"}}) {
      if (!io::file_exists(path)) continue;
      const auto rows = read_csv(path);
      for (std::size_t r = 1; r < rows.size(); ++r)
        if (rows[r].size() >= 4)
          csv += rows[r][0] + "," + label + "," + rows[r][3] + "\n";
    }
    io::atomic_write(join_path(out_dir, "plots/sigma_gaps.csv"), csv);
  }
}

RunManifest run_pipeline(const Scenario& s_in, const RunOptions& opt) {
  PipelineState st;
  st.s = s_in;
  if (opt.threads > 0) st.s.threads = opt.threads;
  if (!opt.out_dir.empty()) st.s.out_dir = opt.out_dir;
  if (!opt.stages.empty()) st.s.stages = opt.stages;
  st.s.stages = stage_closure(st.s.stages);
  st.force = opt.force;
  st.override_resolution = opt.override_resolution;
  st.out = st.s.out_dir;

  fs::create_directories(st.out);
  RunManifest m;
  m.artifact_version = kArtifactVersion;
  m.scenario_hash = scenario_hash(st.s);

  const std::map<std::string, void (*)(PipelineState&)> runners{
      {"validate", stage_validate}, {"cells", stage_cells}, {"tensor", stage_tensor},
      {"flow", stage_flow},         {"sweep", stage_sweep}, {"sigma", stage_sigma}};

  std::map<std::string, std::string> status;
  for (const std::string& name : st.s.stages) {
    StageReport r;
    r.name = name;
    std::string failed_dep;
    for (const std::string& d : kDeps.at(name))
      if (status[d] != "ok" && failed_dep.empty()) failed_dep = d;
    if (!failed_dep.empty()) {
      r.status = "skipped";
      r.error = "dependency '" + failed_dep + "' did not complete";
    } else {
      const auto start = std::chrono::steady_clock::now();
      try {
        runners.at(name)(st);
        r.status = "ok";
      } catch (const ConfigError& e) {
        r.status = "failed";
        r.error_kind = "config";
        r.error = e.what();
      } catch (const NumericError& e) {
        r.status = "failed";
        r.error_kind = "numeric";
        r.error = e.what();
      } catch (const InvariantError& e) {
        r.status = "failed";
        r.error_kind = "invariant";
        r.error = e.what();
      } catch (const std::exception& e) {
        r.status = "failed";
        r.error_kind = "numeric";
        r.error = e.what();
      }
      r.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
              .count();
      if (name == "cells") r.cache_hit = st.sol_from_cache;
    }
    status[name] = r.status;
    m.stages.push_back(r);
  }

  emit_plot_data(st.out);
  m.invariants = st.inv;

  std::vector<FileRecord> files;
  for (const fs::directory_entry& e : fs::recursive_directory_iterator(st.out)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = e.path().lexically_relative(st.out).generic_string();
    if (rel == "manifest.json") continue;
    files.push_back({rel, static_cast<std::uint64_t>(e.file_size()),
                     io::hex64(io::fnv1a64_file(e.path().string()))});
  }
  std::sort(files.begin(), files.end(),
            [](const FileRecord& a, const FileRecord& b) { return a.path < b.path; });
  m.outputs = std::move(files);

  m.ok = true;
  for (const StageReport& r : m.stages) m.ok = m.ok && r.status == "ok";
  for (const InvariantRecord& r : m.invariants) m.ok = m.ok && r.pass;

  m.manifest_path = join_path(st.out, "manifest.json");
  io::atomic_write(m.manifest_path, manifest_json(m).dump(2) + "\n");
  return m;
}

int exit_code_for(const RunManifest& m) {
  for (const StageReport& r : m.stages) {
    if (r.status != "failed") continue;
    if (r.error_kind == "config") return 2;
    if (r.error_kind == "invariant") return 4;
    return 3;
  }
  for (const InvariantRecord& r : m.invariants)
    if (!r.pass) return 4;
  return 0;
}

}  // namespace rehom::scenario
