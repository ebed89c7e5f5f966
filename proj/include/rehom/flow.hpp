#pragma once

// Finite-volume solver for 2D unsteady incompressible flow in a closed
// no-slip box on a staggered MAC grid, with a general constant or
// space-varying rank-4 viscosity tensor. Time stepping is semi-implicit:
// Crank-Nicolson viscosity solved by DST-preconditioned CG, second-order
// Adams-Bashforth skew-symmetric advection, and incremental pressure
// projection through a DCT Poisson solve. The viscous form is
//   B(u, v) = sum_{ijkh} q_ijkh <d_j u^h, d_i v^k>
// assembled through one code path for every tensor, so a constant tensor and
// a space-varying one that happen to agree pointwise produce bit-identical
// trajectories.

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rehom/coeff.hpp"
#include "rehom/effective.hpp"

namespace rehom::flow {

struct Grid {
  int nx = 0, ny = 0;
  double Lx = 1.0, Ly = 1.0;

  double hx() const { return Lx / nx; }
  double hy() const { return Ly / ny; }
  int nu() const { return (nx - 1) * ny; }  // u on interior vertical edges
  int nv() const { return nx * (ny - 1); }  // v on interior horizontal edges
  int np() const { return nx * ny; }        // p at cell centres
  // Dof indices; u takes i in [1, nx-1], v takes j in [1, ny-1].
  int iu(int i, int j) const { return j * (nx - 1) + (i - 1); }
  int iv(int i, int j) const { return (j - 1) * nx + i; }
  int ip(int i, int j) const { return j * nx + i; }
};

struct State {
  std::vector<double> u, v, p;
  double t = 0.0;
};

// Viscosity tensor at a physical point, flattened with effective::tensor_index.
using TensorProvider = std::function<std::array<double, 16>(double x1, double x2)>;

TensorProvider constant_tensor(const effective::EffectiveTensor& q);
// Two-scale oscillatory coefficient: q_ijkh(x) = a_ij(x/eps, x/eps^2) delta_kh.
TensorProvider oscillatory_tensor(const coeff::CoefficientField& f, double eps);

struct ForcingTerm {
  std::function<double(double, double, double)> f1, f2;  // (x1, x2, t)
  std::string tag = "zero";
};
// Catalog: "zero"; "swirl" with f1 = A pi sin^2(pi x) sin(2 pi y),
// f2 = -A pi sin(2 pi x) sin^2(pi y).
ForcingTerm make_forcing(const std::string& name, double amplitude = 1.0);

// Advective CFL-style default: 0.4 * min(hx, hy) / u_scale.
double default_dt(const Grid& g, double u_scale = 1.0);

struct EnergyRow {
  int step = 0;
  double time = 0.0;
  double kinetic_energy = 0.0;
  double dissipation = 0.0;     // B(u_mid, u_mid)
  double forcing_power = 0.0;   // <f(t_mid), u_mid>
};

struct StepStats {
  int viscous_iterations = 0;
  double divergence_sup = 0.0;  // after projection
};

class Stepper {
 public:
  Stepper(const Grid& g, TensorProvider tensor, ForcingTerm forcing, double dt,
          double viscous_tol = 1e-12);
  ~Stepper();
  Stepper(const Stepper&) = delete;
  Stepper& operator=(const Stepper&) = delete;

  const Grid& grid() const { return g_; }
  double dt() const { return dt_; }
  State zero_state() const;

  // Advance s by dt. The first call after construction (or reset_history)
  // takes a history-free backward Euler step; later calls use AB2 + CN.
  StepStats step(State& s);
  void reset_history();

  // Operators and functionals, exposed for diagnostics and tests.
  void viscous_apply(const State& in, State& out) const;            // L u
  double viscous_form(const State& a, const State& b) const;        // B(a, b)
  void advect(const State& w, const State& in, State& out) const;   // N_sk(w) in
  void project(State& s) const;  // remove discrete divergence (p untouched)
  double kinetic_energy(const State& s) const;
  double forcing_power(const State& s, double t) const;
  double divergence_sup(const State& s) const;
  double dot_w(const State& a, const State& b) const;  // velocity dofs, weighted

 private:
  struct Impl;
  Grid g_;
  double dt_ = 0.0;
  std::unique_ptr<Impl> impl_;
};

struct FlowConfig {
  Grid grid;
  TensorProvider tensor;
  ForcingTerm forcing;
  std::string model_tag;  // provenance carried into RunResult and snapshots
  double dt = 0.0;        // <= 0 selects default_dt(grid)
  double t_end = 0.0;
  double viscous_tol = 1e-12;
  std::vector<double> snapshot_times;  // each matched to the nearest step end
};

struct RunResult {
  State final_state;
  std::vector<EnergyRow> ledger;
  std::vector<State> snapshots;  // aligned with FlowConfig::snapshot_times
  std::string model_tag;
  Grid grid;
  double dt = 0.0;
  int steps = 0;
  int max_viscous_iterations = 0;
  double max_divergence = 0.0;
  double wall_seconds = 0.0;
};

RunResult run_flow(const FlowConfig& cfg);

// Velocity norms on the staggered grid: squared discrete H1 seminorm (same
// centre/corner trapezoid quadrature as the viscous form with unit scalar
// viscosity) and squared L2 norm.
double velocity_grad_sq(const Grid& g, const State& s);
double velocity_l2_sq(const Grid& g, const State& s);

// Energy ledger CSV: "step,time,kinetic_energy,dissipation,forcing_power".
void write_energy_csv(const std::vector<EnergyRow>& rows, const std::string& path);

// Snapshot container and binary round trip (format tag "RHSN", version 1).
struct Snapshot {
  Grid grid;
  State state;
  std::string model_tag;
};
void dump_snapshot(const Snapshot& snap, const std::string& path);
Snapshot load_snapshot(const std::string& path);

}  // namespace rehom::flow
