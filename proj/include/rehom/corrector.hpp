#pragma once

// Two-scale corrector reconstruction and convergence measurement. From a
// homogenized trajectory u0 and the cell solution (chi, eta) this module
// builds
//   u1(x,t,y)   = -sum_{i,k} du0^k/dx_i (x,t) chi_ik(y),
//   u2(x,t,y,z) = -sum_{i,k} du0^k/dx_i (x,t) eta_ik(y,z),
// evaluates the expansion u0 + eps u1(x, x/eps) + eps^2 u2(x, x/eps, x/eps^2)
// on the DNS grid, and reports the gradient- and L2-norm gaps against the
// oscillatory-coefficient DNS over a decreasing epsilon sweep.

#include <array>
#include <string>
#include <vector>

#include "rehom/cells.hpp"
#include "rehom/coeff.hpp"
#include "rehom/effective.hpp"
#include "rehom/flow.hpp"
#include "rehom/fourier.hpp"

namespace rehom::corrector {

struct GradientSnapshot {
  double t = 0.0;
  // G[i*2 + k] = du0^{k+1}/dx_{i+1} at cell centres (ip-indexed), from
  // centred differences of the staggered snapshot.
  std::array<std::vector<double>, 4> G;
};

struct CorrectorFields {
  flow::Grid grid;
  std::string field_tag;
  int n_y = 0, n_z = 0;
  std::vector<flow::State> u0;          // homogenized snapshots
  std::vector<GradientSnapshot> grads;  // aligned with u0
  // chi_hat[e][m]: Y-spectrum (n_y^2) of component m+1 of chi for entry
  // e = (i-1)*2 + (k-1). eta_hat[e][m]: joint (Y,Z)-spectrum, laid out as
  // [ky_flat * n_z^2 + kz_flat].
  std::array<std::array<fourier::cvec, 2>, 4> chi_hat;
  std::array<std::array<fourier::cvec, 2>, 4> eta_hat;

  // Bilinear interpolation of the stored centre gradients.
  std::array<double, 4> grad_u0_at(std::size_t snap, double x1, double x2) const;
  // Slow-path pointwise evaluators (direct mode sums; oracles and spot checks).
  double eval_u1(std::size_t snap, double x1, double x2, double y1, double y2, int comp) const;
  double eval_u2(std::size_t snap, double x1, double x2, double y1, double y2, double z1,
                 double z2, int comp) const;
};

// Couples a homogenized run to a cell solution. Throws InvariantError when the
// run's model tag is not "homogenized|<field_tag>" for the cells' field, and
// ConfigError when the run carries no snapshots.
CorrectorFields build_correctors(const flow::RunResult& u0_run,
                                 const cells::CellSolution& cells);

// Samples u0 + eps*u1 + eps^2*u2 at the staggered faces of corr.grid for every
// stored snapshot (fast separable phase-table path). Throws ConfigError when
// the grid does not resolve the x/eps^2 oscillation with at least
// min_points_per_fine_period nodes per period.
std::vector<flow::State> evaluate_expansion(const CorrectorFields& corr, double epsilon,
                                            int min_points_per_fine_period = 8);

struct CorrectorRow {
  double epsilon = 0.0;
  double E_grad = 0.0;  // ||grad_h(u_eps - u0 - eps u1 - eps^2 u2)|| over Q
  double E_L2 = 0.0;    // ||u_eps - u0|| over Q
  int nx = 0;
  double dt = 0.0;
  double wall_seconds = 0.0;
  double parseval_rel_gap = 0.0;  // nodal-vs-Parseval audit on a periodic patch
  bool ok = false;
  std::string error;
};

struct CorrectorReport {
  std::string field_tag;
  std::vector<CorrectorRow> rows;  // one per requested epsilon, in order
};

struct SweepConfig {
  coeff::CoefficientField field;
  cells::CellSolution cells;          // solved for `field`
  effective::EffectiveTensor tensor;  // assembled from `cells`
  std::vector<double> epsilons;       // strictly decreasing, in (0,1)
  double t_end = 0.25;
  std::string forcing = "swirl";
  double forcing_amplitude = 1.0;
  int points_per_fine_period = 24;      // DNS grid rule nx = ppp / eps^2
  int min_points_per_fine_period = 8;   // hard floor for trace evaluation
  double viscous_tol = 1e-10;
  int snapshots = 5;  // evenly spaced on [0, t_end], including both ends
};

// Runs, per epsilon: homogenized and DNS flows on the matching grid, corrector
// expansion, and space-time norms by snapshot-trapezoid. Failures of a single
// epsilon are recorded in its row and do not abort the sweep.
CorrectorReport corrector_sweep(const SweepConfig& cfg);

// CSV: "epsilon,E_grad,E_L2,nx,dt,wall_seconds", successful rows only.
void write_corrector_csv(const CorrectorReport& report, const std::string& path);

}  // namespace rehom::corrector
