#pragma once

// Coupled two-cell corrector problems: for each unit right-hand side (i,k),
// find (chi_ik, eta_ik) with chi divergence-free on Y, eta(y_p,.) divergence-
// free on Z for every Y node, such that for all test pairs (v1, v2)
//
//   sum_m,i,j <a_ij (D_y chi + D_z eta)^m_j, (D_y v1 + D_z v2)^m_i>
//     = sum_l <a_il, (D_y v1 + D_z v2)^k_l>.
//
// Discretization: truncated Fourier-Galerkin on both cells (Nyquist and mean
// excluded), constraints enforced by per-mode Leray projection, inner products
// by trapezoidal quadrature on the Y collocation grid and a 3/2-dealiased Z
// grid. Solvers: preconditioned CG on the projected unknowns (production),
// an independent dense saddle-point factorization (oracle, tests only), and a
// frozen-z / effective-y two-step path (cross-validation).

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "rehom/coeff.hpp"
#include "rehom/fourier.hpp"

namespace rehom::cells {

using fourier::cvec;

struct PeriodicVectorField2 {
  int n = 0;
  std::vector<double> comp1, comp2;  // n*n nodal values, row-major
};

// Z-fields attached to every Y node: comp[c][p * n_z^2 + q].
struct EtaField {
  int n_y = 0, n_z = 0;
  std::vector<double> comp1, comp2;
};

struct CellIndex {
  int i = 1, k = 1;  // 1-based direction / component
};

struct CellEntry {
  CellIndex idx;
  PeriodicVectorField2 chi;
  EtaField eta;
  double residual = 0.0;  // achieved relative algebraic residual
  int iterations = 0;
};

struct CellSolution {
  coeff::CellSampling sampling;
  double tol = 0.0;
  std::array<CellEntry, 4> entries;  // (i,k) = (1,1), (1,2), (2,1), (2,2)

  const CellEntry& entry(int i, int k) const { return entries[(i - 1) * 2 + (k - 1)]; }
  CellEntry& entry(int i, int k) { return entries[(i - 1) * 2 + (k - 1)]; }
};

// Shared quadrature data: coefficient values at (y_p, dealiased z node),
// trigonometrically interpolated in z from the sampling.
class CellContext {
 public:
  explicit CellContext(const coeff::CellSampling& s);

  int n_y = 0, n_z = 0, mz = 0;  // mz = 3*n_z/2
  double alpha = 0.0;
  std::string field_tag;
  // Entry c in {0:a11, 1:a12, 2:a22}; layout a[c][p * mz^2 + qp].
  std::array<std::vector<double>, 3> a;
  std::array<double, 3> mean_a{};  // cell averages of a11, a12, a22
  double sup_a = 0.0;              // sup over nodes and entries of |a|; sets the rhs noise floor

  std::size_t ny2() const { return static_cast<std::size_t>(n_y) * n_y; }
  std::size_t nz2() const { return static_cast<std::size_t>(n_z) * n_z; }
  std::size_t mz2() const { return static_cast<std::size_t>(mz) * mz; }
};

// Spectral degrees of freedom of one candidate pair: chi as a Y spectrum,
// eta as one Z spectrum per Y node (nodal in y).
struct CellVec {
  cvec chi1, chi2;  // n_y^2
  cvec eta1, eta2;  // n_y^2 * n_z^2, z-spectrum for node p at offset p*n_z^2
};

// The projected operator, preconditioner, and weighted inner product of the
// coupled problem. Exposed for tests that probe Galerkin residuals.
class CoupledOperator {
 public:
  explicit CoupledOperator(const CellContext& ctx);

  void alloc(CellVec& x) const;
  void apply(const CellVec& x, CellVec& out) const;  // A x, projected
  void precondition(const CellVec& r, CellVec& z) const;
  void project(CellVec& x) const;
  void build_rhs(CellIndex idx, CellVec& rhs) const;
  double dot(const CellVec& x, const CellVec& y) const;
  const CellContext& ctx() const { return ctx_; }

 private:
  const CellContext& ctx_;
};

// Conversions between nodal entries and spectral dof vectors.
void entry_to_vec(const CellContext& ctx, const CellEntry& e, CellVec& v);
void vec_to_entry(const CellContext& ctx, const CellVec& v, CellEntry& e);

// The discrete bilinear form a_h(u, v) and right-hand-side functional F_idx(v)
// (shared with the tensor assembly in the effective module).
double cell_form(const CellContext& ctx, const CellVec& u, const CellVec& v);
double cell_rhs_functional(const CellContext& ctx, CellIndex idx, const CellVec& v);

// Gradient energies ||D_y chi||^2 and ||D_z eta||^2 (cell-averaged).
double chi_gradient_energy(const CellContext& ctx, const CellVec& v);
double eta_gradient_energy(const CellContext& ctx, const CellVec& v);

CellEntry solve_cell_coupled(const coeff::CellSampling& s, CellIndex idx, double tol,
                             int max_iter = 0);  // 0: default 10*(n_y^2 + n_z^2)

struct SequentialResult {
  CellEntry entry;
  // Intermediate effective tensor b(y_p): b[p*16 + ((i*2+j)*2+k)*2 + h], 0-based.
  std::vector<double> b;
};

SequentialResult solve_cell_sequential(const coeff::CellSampling& s, CellIndex idx, double tol);

// Dense saddle-point Galerkin oracle with explicit pressure multipliers
// (tests only; n_y, n_z <= 8). solve_cell_dense_oracle_all factors once and
// solves the four right-hand sides together.
CellEntry solve_cell_dense_oracle(const coeff::CellSampling& s, CellIndex idx);
std::array<CellEntry, 4> solve_cell_dense_oracle_all(const coeff::CellSampling& s);

// Sup-norm over nodes of the spectral divergence.
double divergence_defect(const PeriodicVectorField2& f);
// Max over Y nodes of the z-divergence defect.
double divergence_defect_eta(const EtaField& f);

// Solves the four index pairs (optionally in parallel) and bundles them.
CellSolution solve_all(const coeff::CellSampling& s, double tol, int threads = 1);

// Binary round-trip of a CellSolution (layout documented in the README).
void dump_cell_solution(const CellSolution& sol, const std::string& path);
CellSolution load_cell_solution(const std::string& path);

}  // namespace rehom::cells
