#pragma once

// Two-scale viscosity coefficient fields a_ij(y, z) on the unit cells
// Y = Z = (-1/2, 1/2)^2: built-in analytic families, validation of symmetry /
// coercivity / periodicity, and deterministic tensor-product sampling.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace rehom::coeff {

struct SymMatrix2 {
  double a11 = 0.0, a12 = 0.0, a22 = 0.0;
};

using Params = std::map<std::string, double>;

struct CoefficientField {
  // Raw evaluator returns the full 2x2 (a11, a12, a21, a22); validation probes
  // symmetry through it. Built-in families are exactly symmetric.
  std::function<void(double y1, double y2, double z1, double z2, double out[4])> raw;
  double alpha = 0.0;      // certified coercivity lower bound
  double sup_bound = 0.0;  // certified bound on |a_ij|
  std::string family_tag;  // canonical family + parameter rendering

  SymMatrix2 eval(double y1, double y2, double z1, double z2) const;
};

// Families: "constant" (nu, or a11/a12/a22), "y-only" (base, amp),
// "z-only" (base, amp), "separable" (base1, amp1, base2, amp2),
// "layered" (base1, amp1, base2, amp2), "anisotropic" (d1, p1, d2, p2, q).
// Unknown families/parameters and non-coercive parameter sets are rejected.
CoefficientField make_builtin(const std::string& family, const Params& params = {});

struct ValidationReport {
  double max_symmetry_defect = 0.0;
  double min_rayleigh = 0.0;
  double max_abs_entry = 0.0;
  double max_periodicity_defect = 0.0;
  double tol = 0.0;
  bool pass = false;
};

// Samples an n_check^4 tensor grid plus random directions ξ (seeded,
// deterministic). Passes iff min Rayleigh >= alpha - tol and defects <= tol.
ValidationReport validate(const CoefficientField& field, int n_check = 16,
                          std::uint64_t seed = 0x5eedULL);

struct CellSampling {
  int n_y = 0, n_z = 0;
  std::string field_tag;
  double alpha = 0.0;  // carried from the field
  // values[(p1*n_y + p2)*n_z*n_z + q1*n_z + q2] at nodes
  // y = (-1/2 + p1/n_y, -1/2 + p2/n_y), z likewise.
  std::vector<SymMatrix2> values;

  const SymMatrix2& at(int p1, int p2, int q1, int q2) const {
    return values[(static_cast<std::size_t>(p1) * n_y + p2) * n_z * n_z +
                  static_cast<std::size_t>(q1) * n_z + q2];
  }
};

inline constexpr std::uint64_t kDefaultNodeCap = 1ull << 22;

// Deterministic, idempotent sampling; throws ResourceError when
// n_y^2 * n_z^2 exceeds node_cap, ConfigError for odd or small grids.
CellSampling sample(const CoefficientField& field, int n_y, int n_z,
                    std::uint64_t node_cap = kDefaultNodeCap);

}  // namespace rehom::coeff
