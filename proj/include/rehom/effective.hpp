#pragma once

// Effective (homogenized) viscosity tensor assembled from solved cell
// problems. Two independent routes are provided: a flux pairing that is
// linear in the cell solutions, and a quadratic energy form; on an exact
// Galerkin solution they coincide, so their gap measures solver quality.
// Structural checks cover the minor symmetry q_ijkh = q_jihk, coercivity of
// the Voigt quadratic form, and the mean-coefficient upper bound.

#include <array>
#include <string>

#include "rehom/cells.hpp"
#include "rehom/coeff.hpp"

namespace rehom::effective {

// Flattened rank-4 index, all arguments 0-based.
constexpr int tensor_index(int i, int j, int k, int h) {
  return ((i * 2 + j) * 2 + k) * 2 + h;
}

struct EffectiveTensor {
  std::array<double, 16> q{};  // q[tensor_index(i,j,k,h)]
  double alpha0 = 0.0;         // smallest eigenvalue of the symmetrized Voigt form
  std::string field_tag;
  int n_y = 0, n_z = 0;

  // 1-based accessor matching the CSV row labels.
  double entry(int i, int j, int k, int h) const {
    return q[tensor_index(i - 1, j - 1, k - 1, h - 1)];
  }
};

// Flux pairing: q_ijkh = delta_kh mean(a_ij) - <rhs_ik, sol_jh>.
EffectiveTensor assemble_q(const cells::CellSolution& sol, const coeff::CellSampling& s);

// Energy form: q_ijkh = A(D sol_ik - theta_ik, D sol_jh - theta_jh) where
// theta_ik is the constant gradient with a 1 in (direction i, component k).
EffectiveTensor assemble_q_energy_form(const cells::CellSolution& sol,
                                       const coeff::CellSampling& s);

struct TensorCheck {
  double symmetry_defect = 0.0;  // max |q_ijkh - q_jihk|
  double alpha0 = 0.0;           // min eigenvalue of the symmetrized Voigt form
  double upper_margin = 0.0;     // min eigenvalue of (mean tensor - q); >= -1e-8 expected
  double voigt_condition = 0.0;  // eigenvalue ratio of the Voigt form
  bool pass = false;
};

// Structural checks against the coefficient field the tensor came from.
TensorCheck check_tensor(const EffectiveTensor& t, const coeff::CoefficientField& f);

// 16 rows "i,j,k,h,value" (1-based, lexicographic), deterministic formatting.
void write_tensor_csv(const EffectiveTensor& t, const std::string& path);

}  // namespace rehom::effective
