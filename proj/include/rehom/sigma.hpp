#pragma once

// Numerical diagnostics of reiterated two-scale convergence. A separable
// oscillatory test function
//   psi(x,t,y,tau,z) = phi(x,t) mu1(y1) mu2(y2) omega(tau) nu1(z1) nu2(z2)
// has the trace psi^eps(x,t) = psi(x,t, x/eps, t/eps, x/eps^2). The module
// evaluates pairings \int_Q u_eps psi^eps, compares them to the reiterated
// limits (slow integral times cell means), and checks the limit identities:
// cell-mean reduction, norm convergence of traces, and the trace norm bound.
// Periodic factors are trigonometric polynomials so cell means, products,
// and mean squares are exact; only separable test functions are supported.
// Analytic u_eps sequences are themselves traces of the same separable form.

#include <functional>
#include <string>
#include <vector>

#include "rehom/flow.hpp"

namespace rehom::sigma {

// 1-periodic p(s) = constant + sum_m (cos_coef[m-1] cos(2 pi m s) +
// sin_coef[m-1] sin(2 pi m s)).
struct TrigPoly1D {
  double constant = 1.0;
  std::vector<double> cos_coef, sin_coef;

  static TrigPoly1D one() { return {}; }
  static TrigPoly1D cosine(int harmonic, double amplitude = 1.0);
  static TrigPoly1D sine(int harmonic, double amplitude = 1.0);

  double eval(double s) const;
  int bandwidth() const;       // highest harmonic carrying a coefficient
  double mean() const { return constant; }
  double mean_square() const;  // exact mean of p^2 over one period
  double sup() const;          // max |p| by dense sampling (bound checks)
  TrigPoly1D times(const TrigPoly1D& other) const;  // exact product
};

using SlowFactor = std::function<double(double x1, double x2, double t)>;

// Separable test function; also serves as the analytic two-scale profile
// whose trace generates u_eps sequences. Defaults: phi = 1 and every
// periodic factor = 1 (the time factor omega covers the t/eps trace; data in
// this artifact are tau-independent, so omega defaults to 1 but is honored).
struct TestFunction {
  SlowFactor phi = [](double, double, double) { return 1.0; };
  TrigPoly1D mu1{}, mu2{};  // y = x/eps factors
  TrigPoly1D omega{};       // tau = t/eps factor
  TrigPoly1D nu1{}, nu2{};  // z = x/eps^2 factors

  double trace(double x1, double x2, double t, double eps) const;
  double cell_mean() const;        // mean of the periodic part over (y,tau,z)
  double cell_mean_square() const; // mean of the squared periodic part
  double cell_sup() const;         // sup of |periodic part|
};

// Space-time box Q = (0,Lx) x (0,Ly) x (0,t_end).
struct Domain {
  double Lx = 1.0, Ly = 1.0, t_end = 1.0;
};

struct PairingRecord {
  double epsilon = 0.0;
  double lhs = 0.0;  // quadrature of the eps-level pairing
  double rhs = 0.0;  // reiterated limit
  double gap = 0.0;  // |lhs - rhs| (trace_norm_bound: violation excess)
};

// Pairing of two analytic traces: lhs = \int_Q trace(u) trace(psi) by
// composite quadrature (uniform midpoint with >= min_points_per_fine_period
// samples per period of the fastest harmonic on oscillatory axes, composite
// Gauss rules on slow axes); rhs = \int_Q phi_u phi_psi times the cell mean
// of the factor products. Throws ResourceError when an axis would need more
// than 2^22 quadrature nodes.
PairingRecord pairing(const TestFunction& u, const TestFunction& psi, double epsilon,
                      const Domain& dom, int min_points_per_fine_period = 8);

// Pairing of a computed flow sequence (velocity component 1 or 2 on the MAC
// faces, snapshot-trapezoid in time) against psi^eps. Returns only the lhs;
// the limit of a numerical sequence is the caller's oracle. Throws
// ConfigError when the grid does not resolve psi's x/eps or x/eps^2
// harmonics with min_points_per_fine_period nodes per period, or when fewer
// than two snapshots are stored.
double pairing_lhs(const flow::RunResult& run, int component, const TestFunction& psi,
                   double epsilon, int min_points_per_fine_period = 8);

// Weak-limit reduction check: for each eps, lhs = \int_Q psi^eps g and
// rhs = \int_Q cell_mean(psi) phi g for the fixed slow probe g. When psi has
// no oscillatory factor at all, lhs and rhs run through the identical
// quadrature and the gap is exactly zero. eps_list must be strictly
// decreasing.
std::vector<PairingRecord> mean_convergence_check(const TestFunction& psi,
                                                  const std::vector<double>& eps_list,
                                                  const SlowFactor& probe, const Domain& dom,
                                                  int min_points_per_fine_period = 8);

// Factor-wise product of two separable profiles; the trace of the result is
// pointwise the product of the traces.
TestFunction product_profile(const TestFunction& a, const TestFunction& b);

// Strong-times-weak product convergence: pairs the product sequence
// (trace of strong_seq times trace of weak_seq) against psi and compares to
// the pairing of the product profile's limit. eps_list strictly decreasing.
std::vector<PairingRecord> product_convergence_check(const TestFunction& strong_seq,
                                                     const TestFunction& weak_seq,
                                                     const TestFunction& psi,
                                                     const std::vector<double>& eps_list,
                                                     const Domain& dom,
                                                     int min_points_per_fine_period = 8);

// Norm convergence of traces: lhs = ||psi^eps||_{L2(Q)}, rhs = the limit norm
// ||psi||_{L2(Q x cells)}; the gap must decrease along a strictly decreasing
// eps_list for smooth separable psi.
std::vector<PairingRecord> norm_convergence_check(const TestFunction& psi,
                                                  const std::vector<double>& eps_list,
                                                  const Domain& dom,
                                                  int min_points_per_fine_period = 8);

// Trace norm bound ||psi^eps||_{L2(Q)} <= ||phi||_{L2(Q)} sup|periodic part|:
// lhs and rhs are the two sides, gap = max(0, lhs - rhs) is the violation
// excess (zero when the bound holds).
PairingRecord trace_norm_bound(const TestFunction& psi, double epsilon, const Domain& dom,
                               int min_points_per_fine_period = 8);

// CSV: "epsilon,lhs,rhs,gap".
void write_sigma_csv(const std::vector<PairingRecord>& rows, const std::string& path);

}  // namespace rehom::sigma
