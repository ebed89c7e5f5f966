#include "rehom/flow.hpp"

#include <fftw3.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>

#include "rehom/errors.hpp"
#include "rehom/fourier.hpp"
#include "rehom/io_util.hpp"

namespace rehom::flow {

namespace {

constexpr double kPi = M_PI;

// Velocity access with no-slip walls: normal components vanish on their
// boundary columns/rows, tangential ghosts reflect oddly. The matching add_*
// helpers scatter with the same routing, so every gather/scatter pair is an
// exact transpose.
inline double get_u(const Grid& g, const std::vector<double>& u, int i, int j) {
  if (i <= 0 || i >= g.nx) return 0.0;
  if (j < 0) return -u[g.iu(i, 0)];
  if (j >= g.ny) return -u[g.iu(i, g.ny - 1)];
  return u[g.iu(i, j)];
}

inline void add_u(const Grid& g, std::vector<double>& r, int i, int j, double w) {
  if (i <= 0 || i >= g.nx) return;
  if (j < 0) {
    r[g.iu(i, 0)] -= w;
    return;
  }
  if (j >= g.ny) {
    r[g.iu(i, g.ny - 1)] -= w;
    return;
  }
  r[g.iu(i, j)] += w;
}

inline double get_v(const Grid& g, const std::vector<double>& v, int i, int j) {
  if (j <= 0 || j >= g.ny) return 0.0;
  if (i < 0) return -v[g.iv(0, j)];
  if (i >= g.nx) return -v[g.iv(g.nx - 1, j)];
  return v[g.iv(i, j)];
}

inline void add_v(const Grid& g, std::vector<double>& r, int i, int j, double w) {
  if (j <= 0 || j >= g.ny) return;
  if (i < 0) {
    r[g.iv(0, j)] -= w;
    return;
  }
  if (i >= g.nx) {
    r[g.iv(g.nx - 1, j)] -= w;
    return;
  }
  r[g.iv(i, j)] += w;
}

// In-place 2D real-to-real transform pair with RAII plan ownership.
struct R2R {
  fftw_plan fwd = nullptr, inv = nullptr;
  std::vector<double> buf;
  double norm = 1.0;

  void init(int n0, int n1, fftw_r2r_kind k0f, fftw_r2r_kind k1f, fftw_r2r_kind k0i,
            fftw_r2r_kind k1i, double norm_) {
    buf.assign(static_cast<std::size_t>(n0) * n1, 0.0);
    norm = norm_;
    std::lock_guard<std::mutex> lock(fourier::planner_mutex());
    fwd = fftw_plan_r2r_2d(n0, n1, buf.data(), buf.data(), k0f, k1f, FFTW_ESTIMATE);
    inv = fftw_plan_r2r_2d(n0, n1, buf.data(), buf.data(), k0i, k1i, FFTW_ESTIMATE);
    if (!fwd || !inv) throw NumericError("flow: fftw r2r plan creation failed");
  }
  ~R2R() {
    std::lock_guard<std::mutex> lock(fourier::planner_mutex());
    if (fwd) fftw_destroy_plan(fwd);
    if (inv) fftw_destroy_plan(inv);
  }
};

// Derivative slots of the viscous form. A, B live at cell centres; C, D at
// corners; E, F are A, B quarter-averaged to corners (zero-extended so the
// average has an exact transpose).
struct SlotFields {
  std::vector<double> A, B, C, D, E, F;
};

}  // namespace

TensorProvider constant_tensor(const effective::EffectiveTensor& q) {
  const std::array<double, 16> arr = q.q;
  return [arr](double, double) { return arr; };
}

TensorProvider oscillatory_tensor(const coeff::CoefficientField& f, double eps) {
  if (!(eps > 0.0)) throw ConfigError("oscillatory_tensor: eps must be positive");
  return [f, eps](double x1, double x2) {
    const auto m = f.eval(x1 / eps, x2 / eps, x1 / (eps * eps), x2 / (eps * eps));
    const double a[2][2] = {{m.a11, m.a12}, {m.a12, m.a22}};
    std::array<double, 16> q{};
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) q[effective::tensor_index(i, j, k, k)] = a[i][j];
    return q;
  };
}

ForcingTerm make_forcing(const std::string& name, double amplitude) {
  ForcingTerm f;
  f.tag = name;
  if (name == "zero") {
    f.f1 = [](double, double, double) { return 0.0; };
    f.f2 = [](double, double, double) { return 0.0; };
  } else if (name == "swirl") {
    const double a = amplitude;
    f.f1 = [a](double x, double y, double) {
      const double s = std::sin(kPi * x);
      return a * kPi * s * s * std::sin(2.0 * kPi * y);
    };
    f.f2 = [a](double x, double y, double) {
      const double s = std::sin(kPi * y);
      return -a * kPi * std::sin(2.0 * kPi * x) * s * s;
    };
  } else {
    throw ConfigError("unknown forcing '" + name + "' (catalog: zero, swirl)");
  }
  return f;
}

double default_dt(const Grid& g, double u_scale) {
  if (!(u_scale > 0.0)) throw ConfigError("default_dt: u_scale must be positive");
  return 0.4 * std::min(g.hx(), g.hy()) / u_scale;
}

struct Stepper::Impl {
  Grid g;
  ForcingTerm forcing;
  double dt = 0.0, viscous_tol = 1e-12;
  double nu_bar = 0.0;  // scalar viscosity scale for the DST preconditioner

  // Pre-weighted tensor caches: centres carry hx*hy, corners the trapezoid
  // corner weight. Entries are minor-symmetrized so the form is exactly
  // symmetric. Centre order: (A,A),(A,B),(B,A),(B,B). Corner order:
  // (C,C),(C,D),(C,E),(C,F),(D,C),(D,D),(D,E),(D,F),(E,C),(E,D),(F,C),(F,D).
  std::vector<double> qc;  // np * 4
  std::vector<double> qk;  // (nx+1)*(ny+1) * 12

  mutable R2R dst_u, dst_v, dct_p;  // scratch transforms used by const solves
  std::vector<double> lamx_u, lamy_u, lamx_v, lamy_v, lamx_p, lamy_p;

  // AB2 history.
  std::vector<double> adv_prev_u, adv_prev_v;
  bool has_history = false;

  // Work buffers (a Stepper instance is not thread-safe).
  mutable SlotFields sa, sb;
  mutable std::vector<double> aE, aF;

  int ncor() const { return (g.nx + 1) * (g.ny + 1); }
  int icor(int i, int j) const { return j * (g.nx + 1) + i; }

  void build_tensor_cache(const TensorProvider& tensor);
  void build_transforms();
  void compute_slots(const State& s, SlotFields& sf) const;
  void viscous_apply(const State& in, State& out) const;
  double viscous_form(const State& a, const State& b) const;
  template <typename Emit>
  void for_each_adv_entry(const State& w, Emit&& emit) const;
  void advect(const State& w, const State& in, State& out) const;
  void precond_solve(double sigma, double c, const std::vector<double>& r_u,
                     const std::vector<double>& r_v, std::vector<double>& z_u,
                     std::vector<double>& z_v) const;
  int cg_viscous(double sigma, double c, const State& rhs, State& x) const;
  void solve_poisson(const std::vector<double>& rhs, std::vector<double>& phi) const;
  void project_velocity(State& s, std::vector<double>& phi) const;
  void forcing_at(double t, std::vector<double>& fu, std::vector<double>& fv) const;
};

void Stepper::Impl::build_tensor_cache(const TensorProvider& tensor) {
  const int nx = g.nx, ny = g.ny;
  const double hx = g.hx(), hy = g.hy(), wc = hx * hy;
  qc.assign(static_cast<std::size_t>(g.np()) * 4, 0.0);
  qk.assign(static_cast<std::size_t>(ncor()) * 12, 0.0);

  auto sym = [](const std::array<double, 16>& q, int i, int j, int k, int h) {
    return 0.5 * (q[effective::tensor_index(i, j, k, h)] + q[effective::tensor_index(j, i, h, k)]);
  };

  double nusum = 0.0;
  for (int cj = 0; cj < ny; ++cj)
    for (int ci = 0; ci < nx; ++ci) {
      const auto q = tensor((ci + 0.5) * hx, (cj + 0.5) * hy);
      double* e = qc.data() + static_cast<std::size_t>(g.ip(ci, cj)) * 4;
      e[0] = wc * sym(q, 0, 0, 0, 0);
      e[1] = wc * sym(q, 0, 1, 0, 1);
      e[2] = wc * sym(q, 1, 0, 1, 0);
      e[3] = wc * sym(q, 1, 1, 1, 1);
      nusum += 0.5 * (sym(q, 0, 0, 0, 0) + sym(q, 1, 1, 1, 1));
    }
  nu_bar = nusum / g.np();

  // Corner slots: C = d2 u^1, D = d1 u^2, E = A averaged, F = B averaged,
  // with (dir, comp) = (1,0), (0,1), (0,0), (1,1). The coefficient pairing a
  // test slot (i,k) with a trial slot (j,h) is q_ijkh; the (E,E)-type pairs
  // stay at the centres.
  const int sdir[4] = {1, 0, 0, 1};
  const int scomp[4] = {0, 1, 0, 1};
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      const double fx = (i == 0 || i == nx) ? 0.5 : 1.0;
      const double fy = (j == 0 || j == ny) ? 0.5 : 1.0;
      const double wk = wc * fx * fy;
      const auto q = tensor(i * hx, j * hy);
      double* e = qk.data() + static_cast<std::size_t>(icor(i, j)) * 12;
      int slot = 0;
      for (int sv = 0; sv < 4; ++sv)
        for (int su = 0; su < 4; ++su) {
          if (sv >= 2 && su >= 2) continue;
          e[slot++] = wk * sym(q, sdir[sv], sdir[su], scomp[sv], scomp[su]);
        }
    }
}

void Stepper::Impl::build_transforms() {
  const int nx = g.nx, ny = g.ny;
  const double hx = g.hx(), hy = g.hy();
  dst_u.init(ny, nx - 1, FFTW_RODFT10, FFTW_RODFT00, FFTW_RODFT01, FFTW_RODFT00,
             4.0 * nx * ny);
  dst_v.init(ny - 1, nx, FFTW_RODFT00, FFTW_RODFT10, FFTW_RODFT00, FFTW_RODFT01,
             4.0 * nx * ny);
  dct_p.init(ny, nx, FFTW_REDFT10, FFTW_REDFT10, FFTW_REDFT01, FFTW_REDFT01, 4.0 * nx * ny);

  auto fill = [](std::vector<double>& lam, int count, int n, double h, int mode0) {
    lam.resize(count);
    for (int k = 0; k < count; ++k)
      lam[k] = (2.0 - 2.0 * std::cos(kPi * (k + mode0) / n)) / (h * h);
  };
  fill(lamx_u, nx - 1, nx, hx, 1);  // Dirichlet line values, modes 1..nx-1
  fill(lamy_u, ny, ny, hy, 1);      // odd ghost reflection, modes 1..ny
  fill(lamx_v, nx, nx, hx, 1);
  fill(lamy_v, ny - 1, ny, hy, 1);
  fill(lamx_p, nx, nx, hx, 0);  // Neumann, modes 0..nx-1
  fill(lamy_p, ny, ny, hy, 0);
}

void Stepper::Impl::compute_slots(const State& s, SlotFields& sf) const {
  const int nx = g.nx, ny = g.ny;
  const double ihx = 1.0 / g.hx(), ihy = 1.0 / g.hy();
  sf.A.assign(g.np(), 0.0);
  sf.B.assign(g.np(), 0.0);
  sf.C.assign(ncor(), 0.0);
  sf.D.assign(ncor(), 0.0);
  sf.E.assign(ncor(), 0.0);
  sf.F.assign(ncor(), 0.0);

  for (int cj = 0; cj < ny; ++cj)
    for (int ci = 0; ci < nx; ++ci) {
      const int c = g.ip(ci, cj);
      sf.A[c] = (get_u(g, s.u, ci + 1, cj) - get_u(g, s.u, ci, cj)) * ihx;
      sf.B[c] = (get_v(g, s.v, ci, cj + 1) - get_v(g, s.v, ci, cj)) * ihy;
    }
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      const int c = icor(i, j);
      sf.C[c] = (get_u(g, s.u, i, j) - get_u(g, s.u, i, j - 1)) * ihy;
      sf.D[c] = (get_v(g, s.v, i, j) - get_v(g, s.v, i - 1, j)) * ihx;
      double accA = 0.0, accB = 0.0;
      for (int dj = -1; dj <= 0; ++dj)
        for (int di = -1; di <= 0; ++di) {
          const int ci = i + di, cj = j + dj;
          if (ci < 0 || ci >= nx || cj < 0 || cj >= ny) continue;
          accA += sf.A[g.ip(ci, cj)];
          accB += sf.B[g.ip(ci, cj)];
        }
      sf.E[c] = 0.25 * accA;
      sf.F[c] = 0.25 * accB;
    }
}

void Stepper::Impl::viscous_apply(const State& in, State& out) const {
  const int nx = g.nx, ny = g.ny;
  const double ihx = 1.0 / g.hx(), ihy = 1.0 / g.hy();
  const double imeas = ihx * ihy;
  compute_slots(in, sa);
  out.u.assign(g.nu(), 0.0);
  out.v.assign(g.nv(), 0.0);
  aE.assign(g.np(), 0.0);
  aF.assign(g.np(), 0.0);

  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      const int c = icor(i, j);
      const double sl[4] = {sa.C[c], sa.D[c], sa.E[c], sa.F[c]};
      const double* e = qk.data() + static_cast<std::size_t>(c) * 12;
      const double fC = e[0] * sl[0] + e[1] * sl[1] + e[2] * sl[2] + e[3] * sl[3];
      const double fD = e[4] * sl[0] + e[5] * sl[1] + e[6] * sl[2] + e[7] * sl[3];
      const double fE = e[8] * sl[0] + e[9] * sl[1];
      const double fF = e[10] * sl[0] + e[11] * sl[1];
      add_u(g, out.u, i, j, fC * ihy);
      add_u(g, out.u, i, j - 1, -fC * ihy);
      add_v(g, out.v, i, j, fD * ihx);
      add_v(g, out.v, i - 1, j, -fD * ihx);
      for (int dj = -1; dj <= 0; ++dj)
        for (int di = -1; di <= 0; ++di) {
          const int ci = i + di, cj = j + dj;
          if (ci < 0 || ci >= nx || cj < 0 || cj >= ny) continue;
          aE[g.ip(ci, cj)] += 0.25 * fE;
          aF[g.ip(ci, cj)] += 0.25 * fF;
        }
    }
  for (int cj = 0; cj < ny; ++cj)
    for (int ci = 0; ci < nx; ++ci) {
      const int c = g.ip(ci, cj);
      const double* e = qc.data() + static_cast<std::size_t>(c) * 4;
      const double fA = e[0] * sa.A[c] + e[1] * sa.B[c] + aE[c];
      const double fB = e[2] * sa.A[c] + e[3] * sa.B[c] + aF[c];
      add_u(g, out.u, ci + 1, cj, fA * ihx);
      add_u(g, out.u, ci, cj, -fA * ihx);
      add_v(g, out.v, ci, cj + 1, fB * ihy);
      add_v(g, out.v, ci, cj, -fB * ihy);
    }
  for (double& x : out.u) x *= imeas;
  for (double& x : out.v) x *= imeas;
}

double Stepper::Impl::viscous_form(const State& a, const State& b) const {
  const int nx = g.nx, ny = g.ny;
  compute_slots(a, sa);
  compute_slots(b, sb);
  double acc = 0.0;
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      const int c = icor(i, j);
      const double su[4] = {sa.C[c], sa.D[c], sa.E[c], sa.F[c]};
      const double sv[4] = {sb.C[c], sb.D[c], sb.E[c], sb.F[c]};
      const double* e = qk.data() + static_cast<std::size_t>(c) * 12;
      int slot = 0;
      for (int vs = 0; vs < 4; ++vs)
        for (int us = 0; us < 4; ++us) {
          if (vs >= 2 && us >= 2) continue;
          acc += e[slot++] * su[us] * sv[vs];
        }
    }
  for (int c = 0; c < g.np(); ++c) {
    const double* e = qc.data() + static_cast<std::size_t>(c) * 4;
    acc += e[0] * sa.A[c] * sb.A[c] + e[1] * sa.B[c] * sb.A[c] + e[2] * sa.A[c] * sb.B[c] +
           e[3] * sa.B[c] * sb.B[c];
  }
  return acc;
}

// Enumerates the linearized advection matrix Adv(w) row by row:
// emit(out_comp, out_idx, in_comp, in_idx, coeff). The transposed operator is
// obtained by replaying the same entries with roles swapped, which makes the
// skew part 0.5 (Adv - Adv^T) exactly antisymmetric.
template <typename Emit>
void Stepper::Impl::for_each_adv_entry(const State& w, Emit&& emit) const {
  const int nx = g.nx, ny = g.ny;
  const double i2hx = 0.5 / g.hx(), i2hy = 0.5 / g.hy();
  for (int j = 0; j < ny; ++j)
    for (int i = 1; i <= nx - 1; ++i) {
      const int out = g.iu(i, j);
      const double w1 = w.u[out];
      const double w2 = 0.25 * (get_v(g, w.v, i - 1, j) + get_v(g, w.v, i - 1, j + 1) +
                                get_v(g, w.v, i, j) + get_v(g, w.v, i, j + 1));
      if (i + 1 <= nx - 1) emit(0, out, 0, g.iu(i + 1, j), w1 * i2hx);
      if (i - 1 >= 1) emit(0, out, 0, g.iu(i - 1, j), -w1 * i2hx);
      if (j + 1 <= ny - 1)
        emit(0, out, 0, g.iu(i, j + 1), w2 * i2hy);
      else
        emit(0, out, 0, g.iu(i, ny - 1), -w2 * i2hy);
      if (j - 1 >= 0)
        emit(0, out, 0, g.iu(i, j - 1), -w2 * i2hy);
      else
        emit(0, out, 0, g.iu(i, 0), w2 * i2hy);
    }
  for (int j = 1; j <= ny - 1; ++j)
    for (int i = 0; i < nx; ++i) {
      const int out = g.iv(i, j);
      const double w2 = w.v[out];
      const double w1 = 0.25 * (get_u(g, w.u, i, j - 1) + get_u(g, w.u, i + 1, j - 1) +
                                get_u(g, w.u, i, j) + get_u(g, w.u, i + 1, j));
      if (j + 1 <= ny - 1) emit(1, out, 1, g.iv(i, j + 1), w2 * i2hy);
      if (j - 1 >= 1) emit(1, out, 1, g.iv(i, j - 1), -w2 * i2hy);
      if (i + 1 <= nx - 1)
        emit(1, out, 1, g.iv(i + 1, j), w1 * i2hx);
      else
        emit(1, out, 1, g.iv(nx - 1, j), -w1 * i2hx);
      if (i - 1 >= 0)
        emit(1, out, 1, g.iv(i - 1, j), -w1 * i2hx);
      else
        emit(1, out, 1, g.iv(0, j), w1 * i2hx);
    }
}

void Stepper::Impl::advect(const State& w, const State& in, State& out) const {
  out.u.assign(g.nu(), 0.0);
  out.v.assign(g.nv(), 0.0);
  std::vector<double> tu(g.nu(), 0.0), tv(g.nv(), 0.0);
  for_each_adv_entry(w, [&](int oc, int oi, int ic, int ii, double coef) {
    const double xin = ic == 0 ? in.u[ii] : in.v[ii];
    const double xout = oc == 0 ? in.u[oi] : in.v[oi];
    // Forward action into out, transposed action into (tu, tv).
    if (oc == 0)
      out.u[oi] += coef * xin;
    else
      out.v[oi] += coef * xin;
    if (ic == 0)
      tu[ii] += coef * xout;
    else
      tv[ii] += coef * xout;
  });
  for (int d = 0; d < g.nu(); ++d) out.u[d] = 0.5 * (out.u[d] - tu[d]);
  for (int d = 0; d < g.nv(); ++d) out.v[d] = 0.5 * (out.v[d] - tv[d]);
}

void Stepper::Impl::precond_solve(double sigma, double c, const std::vector<double>& r_u,
                                  const std::vector<double>& r_v, std::vector<double>& z_u,
                                  std::vector<double>& z_v) const {
  const int nx = g.nx, ny = g.ny;
  // u block: rows j (odd reflection), columns i-1 (Dirichlet).
  std::copy(r_u.begin(), r_u.end(), dst_u.buf.begin());
  fftw_execute(dst_u.fwd);
  for (int j = 0; j < ny; ++j)
    for (int ii = 0; ii < nx - 1; ++ii)
      dst_u.buf[static_cast<std::size_t>(j) * (nx - 1) + ii] /=
          (sigma + c * nu_bar * (lamx_u[ii] + lamy_u[j])) * dst_u.norm;
  fftw_execute(dst_u.inv);
  z_u.assign(dst_u.buf.begin(), dst_u.buf.end());

  std::copy(r_v.begin(), r_v.end(), dst_v.buf.begin());
  fftw_execute(dst_v.fwd);
  for (int jj = 0; jj < ny - 1; ++jj)
    for (int i = 0; i < nx; ++i)
      dst_v.buf[static_cast<std::size_t>(jj) * nx + i] /=
          (sigma + c * nu_bar * (lamx_v[i] + lamy_v[jj])) * dst_v.norm;
  fftw_execute(dst_v.inv);
  z_v.assign(dst_v.buf.begin(), dst_v.buf.end());
}

int Stepper::Impl::cg_viscous(double sigma, double c, const State& rhs, State& x) const {
  const int nu = g.nu(), nv = g.nv();
  auto dot2 = [nu, nv](const std::vector<double>& au, const std::vector<double>& av,
                       const std::vector<double>& bu, const std::vector<double>& bv) {
    double acc = 0.0;
    for (int d = 0; d < nu; ++d) acc += au[d] * bu[d];
    for (int d = 0; d < nv; ++d) acc += av[d] * bv[d];
    return acc;
  };
  const double bnorm = std::sqrt(dot2(rhs.u, rhs.v, rhs.u, rhs.v));
  if (bnorm == 0.0) {
    x.u.assign(nu, 0.0);
    x.v.assign(nv, 0.0);
    return 0;
  }

  State Ax, Ap;
  viscous_apply(x, Ax);
  std::vector<double> ru(nu), rv(nv);
  for (int d = 0; d < nu; ++d) ru[d] = rhs.u[d] - sigma * x.u[d] - c * Ax.u[d];
  for (int d = 0; d < nv; ++d) rv[d] = rhs.v[d] - sigma * x.v[d] - c * Ax.v[d];

  std::vector<double> zu, zv;
  precond_solve(sigma, c, ru, rv, zu, zv);
  std::vector<double> pu = zu, pv = zv;
  double rz = dot2(ru, rv, zu, zv);
  const int max_iter = 500;
  for (int it = 1; it <= max_iter; ++it) {
    State pstate;
    pstate.u = pu;
    pstate.v = pv;
    viscous_apply(pstate, Ap);
    for (int d = 0; d < nu; ++d) Ap.u[d] = sigma * pu[d] + c * Ap.u[d];
    for (int d = 0; d < nv; ++d) Ap.v[d] = sigma * pv[d] + c * Ap.v[d];
    const double pAp = dot2(pu, pv, Ap.u, Ap.v);
    if (!(pAp > 0.0))
      throw NumericError("viscous solve: operator lost positivity (p.Ap = " +
                         io::fmt_double(pAp) + ")");
    const double alpha = rz / pAp;
    for (int d = 0; d < nu; ++d) {
      x.u[d] += alpha * pu[d];
      ru[d] -= alpha * Ap.u[d];
    }
    for (int d = 0; d < nv; ++d) {
      x.v[d] += alpha * pv[d];
      rv[d] -= alpha * Ap.v[d];
    }
    if (std::sqrt(dot2(ru, rv, ru, rv)) <= viscous_tol * bnorm) return it;
    precond_solve(sigma, c, ru, rv, zu, zv);
    const double rz_new = dot2(ru, rv, zu, zv);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (int d = 0; d < nu; ++d) pu[d] = zu[d] + beta * pu[d];
    for (int d = 0; d < nv; ++d) pv[d] = zv[d] + beta * pv[d];
  }
  throw NumericError("viscous solve: CG failed to reach tolerance " +
                     io::fmt_double(viscous_tol) + " in " + std::to_string(max_iter) +
                     " iterations");
}

void Stepper::Impl::solve_poisson(const std::vector<double>& rhs, std::vector<double>& phi) const {
  const int nx = g.nx, ny = g.ny;
  std::copy(rhs.begin(), rhs.end(), dct_p.buf.begin());
  fftw_execute(dct_p.fwd);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const std::size_t c = static_cast<std::size_t>(j) * nx + i;
      const double lam = lamx_p[i] + lamy_p[j];
      // Discrete Laplacian eigenvalue is -lam; the zero mode is deflated.
      dct_p.buf[c] = (i == 0 && j == 0) ? 0.0 : -dct_p.buf[c] / (lam * dct_p.norm);
    }
  fftw_execute(dct_p.inv);
  phi.assign(dct_p.buf.begin(), dct_p.buf.end());
}

void Stepper::Impl::project_velocity(State& s, std::vector<double>& phi) const {
  const int nx = g.nx, ny = g.ny;
  const double ihx = 1.0 / g.hx(), ihy = 1.0 / g.hy();
  std::vector<double> div(g.np());
  for (int cj = 0; cj < ny; ++cj)
    for (int ci = 0; ci < nx; ++ci)
      div[g.ip(ci, cj)] =
          (get_u(g, s.u, ci + 1, cj) - get_u(g, s.u, ci, cj)) * ihx +
          (get_v(g, s.v, ci, cj + 1) - get_v(g, s.v, ci, cj)) * ihy;
  solve_poisson(div, phi);
  for (int j = 0; j < ny; ++j)
    for (int i = 1; i <= nx - 1; ++i)
      s.u[g.iu(i, j)] -= (phi[g.ip(i, j)] - phi[g.ip(i - 1, j)]) * ihx;
  for (int j = 1; j <= ny - 1; ++j)
    for (int i = 0; i < nx; ++i)
      s.v[g.iv(i, j)] -= (phi[g.ip(i, j)] - phi[g.ip(i, j - 1)]) * ihy;
}

void Stepper::Impl::forcing_at(double t, std::vector<double>& fu, std::vector<double>& fv) const {
  const int nx = g.nx, ny = g.ny;
  const double hx = g.hx(), hy = g.hy();
  fu.resize(g.nu());
  fv.resize(g.nv());
  for (int j = 0; j < ny; ++j)
    for (int i = 1; i <= nx - 1; ++i) fu[g.iu(i, j)] = forcing.f1(i * hx, (j + 0.5) * hy, t);
  for (int j = 1; j <= ny - 1; ++j)
    for (int i = 0; i < nx; ++i) fv[g.iv(i, j)] = forcing.f2((i + 0.5) * hx, j * hy, t);
}

Stepper::Stepper(const Grid& g, TensorProvider tensor, ForcingTerm forcing, double dt,
                 double viscous_tol)
    : g_(g), dt_(dt), impl_(new Impl) {
  if (g.nx < 4 || g.ny < 4) throw ConfigError("flow grid must be at least 4x4");
  if (!(g.Lx > 0.0) || !(g.Ly > 0.0)) throw ConfigError("flow domain lengths must be positive");
  if (!(dt > 0.0)) throw ConfigError("flow time step must be positive");
  if (!tensor) throw ConfigError("flow tensor provider is empty");
  if (!forcing.f1 || !forcing.f2) throw ConfigError("flow forcing is incomplete");
  if (!(viscous_tol > 0.0)) throw ConfigError("viscous tolerance must be positive");
  impl_->g = g;
  impl_->forcing = std::move(forcing);
  impl_->dt = dt;
  impl_->viscous_tol = viscous_tol;
  impl_->build_tensor_cache(tensor);
  if (!(impl_->nu_bar > 0.0))
    throw ConfigError("flow tensor has non-positive mean viscosity");
  impl_->build_transforms();
}

Stepper::~Stepper() = default;

State Stepper::zero_state() const {
  State s;
  s.u.assign(g_.nu(), 0.0);
  s.v.assign(g_.nv(), 0.0);
  s.p.assign(g_.np(), 0.0);
  s.t = 0.0;
  return s;
}

void Stepper::reset_history() { impl_->has_history = false; }

StepStats Stepper::step(State& s) {
  Impl& im = *impl_;
  const int nu = g_.nu(), nv = g_.nv();
  if (static_cast<int>(s.u.size()) != nu || static_cast<int>(s.v.size()) != nv ||
      static_cast<int>(s.p.size()) != g_.np())
    throw ConfigError("flow state size does not match the grid");
  const bool first = !im.has_history;
  const double dt = im.dt;

  State adv_n;
  im.advect(s, s, adv_n);

  // Viscous rhs. First step: backward Euler (sigma + 1*L); later: CN.
  const double sigma = 1.0 / dt;
  const double c = first ? 1.0 : 0.5;
  std::vector<double> fu, fv;
  im.forcing_at(first ? s.t + dt : s.t + 0.5 * dt, fu, fv);

  State rhs;
  rhs.u.resize(nu);
  rhs.v.resize(nv);
  State lun;
  if (!first) im.viscous_apply(s, lun);
  const double ihx = 1.0 / g_.hx(), ihy = 1.0 / g_.hy();
  for (int j = 0; j < g_.ny; ++j)
    for (int i = 1; i <= g_.nx - 1; ++i) {
      const int d = g_.iu(i, j);
      const double adv =
          first ? adv_n.u[d] : 1.5 * adv_n.u[d] - 0.5 * im.adv_prev_u[d];
      const double gp = (s.p[g_.ip(i, j)] - s.p[g_.ip(i - 1, j)]) * ihx;
      rhs.u[d] = sigma * s.u[d] - adv - gp + fu[d] - (first ? 0.0 : 0.5 * lun.u[d]);
    }
  for (int j = 1; j <= g_.ny - 1; ++j)
    for (int i = 0; i < g_.nx; ++i) {
      const int d = g_.iv(i, j);
      const double adv =
          first ? adv_n.v[d] : 1.5 * adv_n.v[d] - 0.5 * im.adv_prev_v[d];
      const double gp = (s.p[g_.ip(i, j)] - s.p[g_.ip(i, j - 1)]) * ihy;
      rhs.v[d] = sigma * s.v[d] - adv - gp + fv[d] - (first ? 0.0 : 0.5 * lun.v[d]);
    }

  State ustar;
  ustar.u = s.u;  // warm start
  ustar.v = s.v;
  StepStats stats;
  stats.viscous_iterations = im.cg_viscous(sigma, c, rhs, ustar);

  // Incremental projection: phi carries dt * (pressure increment).
  std::vector<double> phi;
  im.project_velocity(ustar, phi);
  s.u = std::move(ustar.u);
  s.v = std::move(ustar.v);
  const double idt = 1.0 / dt;
  for (int d = 0; d < g_.np(); ++d) s.p[d] += phi[d] * idt;
  s.t += dt;

  im.adv_prev_u = std::move(adv_n.u);
  im.adv_prev_v = std::move(adv_n.v);
  im.has_history = true;
  stats.divergence_sup = divergence_sup(s);
  return stats;
}

void Stepper::viscous_apply(const State& in, State& out) const { impl_->viscous_apply(in, out); }

double Stepper::viscous_form(const State& a, const State& b) const {
  return impl_->viscous_form(a, b);
}

void Stepper::advect(const State& w, const State& in, State& out) const {
  impl_->advect(w, in, out);
}

void Stepper::project(State& s) const {
  std::vector<double> phi;
  impl_->project_velocity(s, phi);
}

double Stepper::kinetic_energy(const State& s) const {
  double acc = 0.0;
  for (double x : s.u) acc += x * x;
  for (double x : s.v) acc += x * x;
  return 0.5 * acc * g_.hx() * g_.hy();
}

double Stepper::forcing_power(const State& s, double t) const {
  std::vector<double> fu, fv;
  impl_->forcing_at(t, fu, fv);
  double acc = 0.0;
  for (int d = 0; d < g_.nu(); ++d) acc += fu[d] * s.u[d];
  for (int d = 0; d < g_.nv(); ++d) acc += fv[d] * s.v[d];
  return acc * g_.hx() * g_.hy();
}

double Stepper::divergence_sup(const State& s) const {
  const double ihx = 1.0 / g_.hx(), ihy = 1.0 / g_.hy();
  double sup = 0.0;
  for (int cj = 0; cj < g_.ny; ++cj)
    for (int ci = 0; ci < g_.nx; ++ci) {
      const double d = (get_u(g_, s.u, ci + 1, cj) - get_u(g_, s.u, ci, cj)) * ihx +
                       (get_v(g_, s.v, ci, cj + 1) - get_v(g_, s.v, ci, cj)) * ihy;
      sup = std::max(sup, std::abs(d));
    }
  return sup;
}

double Stepper::dot_w(const State& a, const State& b) const {
  double acc = 0.0;
  for (int d = 0; d < g_.nu(); ++d) acc += a.u[d] * b.u[d];
  for (int d = 0; d < g_.nv(); ++d) acc += a.v[d] * b.v[d];
  return acc * g_.hx() * g_.hy();
}

RunResult run_flow(const FlowConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!(cfg.t_end > 0.0)) throw ConfigError("run_flow: t_end must be positive");
  double dt = cfg.dt > 0.0 ? cfg.dt : default_dt(cfg.grid);
  // Land exactly on t_end with a uniform step.
  long nsteps = std::lround(cfg.t_end / dt);
  if (nsteps < 1 || std::abs(nsteps * dt - cfg.t_end) > 1e-9 * cfg.t_end)
    nsteps = static_cast<long>(std::ceil(cfg.t_end / dt - 1e-12));
  dt = cfg.t_end / static_cast<double>(nsteps);

  Stepper stepper(cfg.grid, cfg.tensor, cfg.forcing, dt, cfg.viscous_tol);
  State s = stepper.zero_state();

  RunResult res;
  res.model_tag = cfg.model_tag;
  res.grid = cfg.grid;
  res.dt = dt;
  res.steps = static_cast<int>(nsteps);
  res.snapshots.resize(cfg.snapshot_times.size());
  std::vector<long> snap_step(cfg.snapshot_times.size());
  for (std::size_t k = 0; k < cfg.snapshot_times.size(); ++k) {
    long target = std::lround(cfg.snapshot_times[k] / dt);
    snap_step[k] = std::clamp(target, 0l, nsteps);
    if (snap_step[k] == 0) res.snapshots[k] = s;
  }

  res.ledger.reserve(nsteps);
  State prev;
  for (long n = 1; n <= nsteps; ++n) {
    prev = s;
    const StepStats st = stepper.step(s);
    res.max_viscous_iterations = std::max(res.max_viscous_iterations, st.viscous_iterations);
    res.max_divergence = std::max(res.max_divergence, st.divergence_sup);

    State mid;
    mid.u.resize(s.u.size());
    mid.v.resize(s.v.size());
    for (std::size_t d = 0; d < s.u.size(); ++d) mid.u[d] = 0.5 * (prev.u[d] + s.u[d]);
    for (std::size_t d = 0; d < s.v.size(); ++d) mid.v[d] = 0.5 * (prev.v[d] + s.v[d]);
    EnergyRow row;
    row.step = static_cast<int>(n);
    row.time = s.t;
    row.kinetic_energy = stepper.kinetic_energy(s);
    row.dissipation = stepper.viscous_form(mid, mid);
    row.forcing_power = stepper.forcing_power(mid, prev.t + 0.5 * dt);
    res.ledger.push_back(row);

    for (std::size_t k = 0; k < snap_step.size(); ++k)
      if (snap_step[k] == n) res.snapshots[k] = s;
  }
  res.final_state = std::move(s);
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

double velocity_grad_sq(const Grid& g, const State& s) {
  const int nx = g.nx, ny = g.ny;
  const double hx = g.hx(), hy = g.hy(), wc = hx * hy;
  const double ihx = 1.0 / hx, ihy = 1.0 / hy;
  double acc = 0.0;
  for (int cj = 0; cj < ny; ++cj)
    for (int ci = 0; ci < nx; ++ci) {
      const double A = (get_u(g, s.u, ci + 1, cj) - get_u(g, s.u, ci, cj)) * ihx;
      const double B = (get_v(g, s.v, ci, cj + 1) - get_v(g, s.v, ci, cj)) * ihy;
      acc += wc * (A * A + B * B);
    }
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      const double fx = (i == 0 || i == nx) ? 0.5 : 1.0;
      const double fy = (j == 0 || j == ny) ? 0.5 : 1.0;
      const double C = (get_u(g, s.u, i, j) - get_u(g, s.u, i, j - 1)) * ihy;
      const double D = (get_v(g, s.v, i, j) - get_v(g, s.v, i - 1, j)) * ihx;
      acc += wc * fx * fy * (C * C + D * D);
    }
  return acc;
}

double velocity_l2_sq(const Grid& g, const State& s) {
  double acc = 0.0;
  for (double x : s.u) acc += x * x;
  for (double x : s.v) acc += x * x;
  return acc * g.hx() * g.hy();
}

void write_energy_csv(const std::vector<EnergyRow>& rows, const std::string& path) {
  std::string out = "step,time,kinetic_energy,dissipation,forcing_power\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + io::fmt_double(r.time) + "," +
           io::fmt_double(r.kinetic_energy) + "," + io::fmt_double(r.dissipation) + "," +
           io::fmt_double(r.forcing_power) + "\n";
  }
  io::atomic_write(path, out);
}

namespace {

void put_u32(std::string& s, std::uint32_t v) { s.append(reinterpret_cast<const char*>(&v), 4); }
void put_f64(std::string& s, double v) { s.append(reinterpret_cast<const char*>(&v), 8); }
void put_array(std::string& s, const std::vector<double>& a) {
  s.append(reinterpret_cast<const char*>(a.data()), a.size() * sizeof(double));
}

struct Reader {
  const std::string& s;
  std::size_t pos = 0;
  explicit Reader(const std::string& str) : s(str) {}
  void need(std::size_t n) {
    if (pos + n > s.size()) throw ConfigError("snapshot file truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, s.data() + pos, 4);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, s.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string v = s.substr(pos, n);
    pos += n;
    return v;
  }
  void array(std::vector<double>& a, std::size_t n) {
    need(n * sizeof(double));
    a.resize(n);
    std::memcpy(a.data(), s.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
  }
};

}  // namespace

void dump_snapshot(const Snapshot& snap, const std::string& path) {
  const Grid& g = snap.grid;
  const State& st = snap.state;
  if (static_cast<int>(st.u.size()) != g.nu() || static_cast<int>(st.v.size()) != g.nv() ||
      static_cast<int>(st.p.size()) != g.np())
    throw InvariantError("snapshot state does not match its grid");
  std::string out = "RHSN";
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(g.nx));
  put_u32(out, static_cast<std::uint32_t>(g.ny));
  put_f64(out, g.Lx);
  put_f64(out, g.Ly);
  put_f64(out, st.t);
  put_u32(out, static_cast<std::uint32_t>(snap.model_tag.size()));
  out += snap.model_tag;
  put_array(out, st.u);
  put_array(out, st.v);
  put_array(out, st.p);
  io::atomic_write(path, out);
}

Snapshot load_snapshot(const std::string& path) {
  const std::string raw = io::read_file(path);
  Reader r(raw);
  if (r.bytes(4) != "RHSN") throw ConfigError("not a snapshot file: " + path);
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw ConfigError("unsupported snapshot version " + std::to_string(version));
  Snapshot snap;
  snap.grid.nx = static_cast<int>(r.u32());
  snap.grid.ny = static_cast<int>(r.u32());
  snap.grid.Lx = r.f64();
  snap.grid.Ly = r.f64();
  snap.state.t = r.f64();
  snap.model_tag = r.bytes(r.u32());
  if (snap.grid.nx < 4 || snap.grid.ny < 4) throw ConfigError("snapshot grid too small");
  r.array(snap.state.u, static_cast<std::size_t>(snap.grid.nu()));
  r.array(snap.state.v, static_cast<std::size_t>(snap.grid.nv()));
  r.array(snap.state.p, static_cast<std::size_t>(snap.grid.np()));
  if (r.pos != raw.size()) throw ConfigError("snapshot file has trailing bytes");
  return snap;
}

}  // namespace rehom::flow
