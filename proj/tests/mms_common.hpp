#pragma once

// Manufactured incompressible solution on the unit box with full no-slip
// boundaries, used by the flow convergence tests. The velocity is
//   u1 =  0.5 g(t) W(x) sin(2 pi y),   u2 = -0.5 g(t) sin(2 pi x) W(y),
//   p  =  g(t) cos(pi x) cos(pi y),
// with W(s) = (1 - cos(2 pi s)) / 2 and g(t) = sin(2 pi t), so the field is
// divergence free, vanishes on the whole boundary, and starts from rest.
// The body force below makes (u, p) an exact solution of
//   u_t - nu Lap(u) + (u . grad) u + grad p = f.

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "rehom/effective.hpp"
#include "rehom/flow.hpp"

namespace mms {

constexpr double kP = M_PI;

inline double W(double s) { return 0.5 * (1.0 - std::cos(2.0 * kP * s)); }
inline double Wp(double s) { return kP * std::sin(2.0 * kP * s); }
inline double Wpp(double s) { return 2.0 * kP * kP * std::cos(2.0 * kP * s); }
inline double g(double t) { return std::sin(2.0 * kP * t); }
inline double gp(double t) { return 2.0 * kP * std::cos(2.0 * kP * t); }

inline double u1(double x, double y, double t) { return 0.5 * g(t) * W(x) * std::sin(2.0 * kP * y); }
inline double u2(double x, double y, double t) { return -0.5 * g(t) * std::sin(2.0 * kP * x) * W(y); }
inline double p(double x, double y, double t) { return g(t) * std::cos(kP * x) * std::cos(kP * y); }

inline double u1_x(double x, double y, double t) { return 0.5 * g(t) * Wp(x) * std::sin(2.0 * kP * y); }
inline double u1_y(double x, double y, double t) { return kP * g(t) * W(x) * std::cos(2.0 * kP * y); }
inline double u2_x(double x, double y, double t) { return -kP * g(t) * std::cos(2.0 * kP * x) * W(y); }
inline double u2_y(double x, double y, double t) { return -0.5 * g(t) * std::sin(2.0 * kP * x) * Wp(y); }

inline double lap_u1(double x, double y, double t) {
  return 0.5 * g(t) * std::sin(2.0 * kP * y) * (Wpp(x) - 4.0 * kP * kP * W(x));
}
inline double lap_u2(double x, double y, double t) {
  return -0.5 * g(t) * std::sin(2.0 * kP * x) * (Wpp(y) - 4.0 * kP * kP * W(y));
}
inline double p_x(double x, double y, double t) { return -kP * g(t) * std::sin(kP * x) * std::cos(kP * y); }
inline double p_y(double x, double y, double t) { return -kP * g(t) * std::cos(kP * x) * std::sin(kP * y); }

inline double f1(double nu, double x, double y, double t) {
  return 0.5 * gp(t) * W(x) * std::sin(2.0 * kP * y) - nu * lap_u1(x, y, t) +
         u1(x, y, t) * u1_x(x, y, t) + u2(x, y, t) * u1_y(x, y, t) + p_x(x, y, t);
}
inline double f2(double nu, double x, double y, double t) {
  return -0.5 * gp(t) * std::sin(2.0 * kP * x) * W(y) - nu * lap_u2(x, y, t) +
         u1(x, y, t) * u2_x(x, y, t) + u2(x, y, t) * u2_y(x, y, t) + p_y(x, y, t);
}

inline rehom::flow::ForcingTerm forcing(double nu) {
  rehom::flow::ForcingTerm f;
  f.tag = "mms";
  f.f1 = [nu](double x, double y, double t) { return f1(nu, x, y, t); };
  f.f2 = [nu](double x, double y, double t) { return f2(nu, x, y, t); };
  return f;
}

inline rehom::flow::TensorProvider scalar_tensor(double nu) {
  std::array<double, 16> q{};
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k) q[rehom::effective::tensor_index(i, i, k, k)] = nu;
  return [q](double, double) { return q; };
}

// Exact velocity sampled at the staggered faces of g.
inline rehom::flow::State exact_state(const rehom::flow::Grid& g, double t) {
  rehom::flow::State s;
  s.u.resize(g.nu());
  s.v.resize(g.nv());
  s.p.resize(g.np());
  const double hx = g.hx(), hy = g.hy();
  for (int j = 0; j < g.ny; ++j)
    for (int i = 1; i <= g.nx - 1; ++i) s.u[g.iu(i, j)] = u1(i * hx, (j + 0.5) * hy, t);
  for (int j = 1; j <= g.ny - 1; ++j)
    for (int i = 0; i < g.nx; ++i) s.v[g.iv(i, j)] = u2((i + 0.5) * hx, j * hy, t);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) s.p[g.ip(i, j)] = p((i + 0.5) * hx, (j + 0.5) * hy, t);
  s.t = t;
  return s;
}

inline double rel_l2_velocity_error(const rehom::flow::State& a, const rehom::flow::State& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t d = 0; d < a.u.size(); ++d) {
    num += (a.u[d] - b.u[d]) * (a.u[d] - b.u[d]);
    den += b.u[d] * b.u[d];
  }
  for (std::size_t d = 0; d < a.v.size(); ++d) {
    num += (a.v[d] - b.v[d]) * (a.v[d] - b.v[d]);
    den += b.v[d] * b.v[d];
  }
  return std::sqrt(num / den);
}

struct LogLogFit {
  double slope = 0.0;
  double r2 = 0.0;
};

// Least-squares slope of log(y) against log(x).
inline LogLogFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double lx = std::log(x[k]), ly = std::log(y[k]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    syy += ly * ly;
  }
  const double vx = sxx - sx * sx / n;
  const double vy = syy - sy * sy / n;
  const double cxy = sxy - sx * sy / n;
  LogLogFit f;
  f.slope = cxy / vx;
  f.r2 = (cxy * cxy) / (vx * vy);
  return f;
}

}  // namespace mms
