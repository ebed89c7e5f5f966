#include "rehom/corrector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstddef>

#include "rehom/errors.hpp"
#include "rehom/io_util.hpp"

namespace rehom::corrector {

namespace {

using fourier::cvec;

constexpr double kTwoPi = 2.0 * M_PI;

// Velocity access mirroring the flow module's no-slip conventions: normal
// components vanish on their walls, tangential ghosts reflect oddly.
double getu(const flow::Grid& g, const std::vector<double>& u, int i, int j) {
  if (i <= 0 || i >= g.nx) return 0.0;
  if (j < 0) return -u[g.iu(i, 0)];
  if (j >= g.ny) return -u[g.iu(i, g.ny - 1)];
  return u[g.iu(i, j)];
}

double getv(const flow::Grid& g, const std::vector<double>& v, int i, int j) {
  if (j <= 0 || j >= g.ny) return 0.0;
  if (i < 0) return -v[g.iv(0, j)];
  if (i >= g.nx) return -v[g.iv(g.nx - 1, j)];
  return v[g.iv(i, j)];
}

// tab[c*n + kidx] = exp(i 2 pi mode(kidx) (coords[c]*scale + 1/2)), the phase
// the spectral synthesis needs at the trace point coords[c]*scale.
cvec phase_table(const std::vector<double>& coords, double scale, int n) {
  cvec tab(coords.size() * static_cast<std::size_t>(n));
  for (std::size_t c = 0; c < coords.size(); ++c) {
    const double base = coords[c] * scale + 0.5;
    for (int idx = 0; idx < n; ++idx) {
      const double arg = kTwoPi * fourier::mode_of(idx, n) * base;
      tab[c * n + idx] = {std::cos(arg), std::sin(arg)};
    }
  }
  return tab;
}

// out[c1*n2c + c2] = Re sum_{k1,k2} hat[k1*n + k2] P1[c1*n + k1] P2[c2*n + k2].
// Contracting the second axis first makes the cost O(n^2) per column plus
// O(n) per output point instead of O(n^2) per point.
void synth_separable(const cvec& hat, int n, const cvec& P1, std::size_t n1c, const cvec& P2,
                     std::size_t n2c, std::vector<double>& out) {
  cvec inner(n2c * static_cast<std::size_t>(n));
  for (std::size_t c2 = 0; c2 < n2c; ++c2)
    for (int k1 = 0; k1 < n; ++k1) {
      const std::complex<double>* h = hat.data() + static_cast<std::size_t>(k1) * n;
      const std::complex<double>* p = P2.data() + c2 * n;
      std::complex<double> acc = 0.0;
      for (int k2 = 0; k2 < n; ++k2) acc += h[k2] * p[k2];
      inner[c2 * n + k1] = acc;
    }
  out.assign(n1c * n2c, 0.0);
  for (std::size_t c1 = 0; c1 < n1c; ++c1) {
    const std::complex<double>* p = P1.data() + c1 * n;
    for (std::size_t c2 = 0; c2 < n2c; ++c2) {
      const std::complex<double>* in = inner.data() + c2 * n;
      double acc = 0.0;
      for (int k = 0; k < n; ++k) acc += p[k].real() * in[k].real() - p[k].imag() * in[k].imag();
      out[c1 * n2c + c2] = acc;
    }
  }
}

// Joint (y, z) phase table along one axis: both traces share the coordinate,
// so the combined mode (ky, m) carries the product phase.
cvec combine_tables(const cvec& py, int ny, const cvec& pz, int nz, std::size_t ncoords) {
  const int n = ny * nz;
  cvec out(ncoords * static_cast<std::size_t>(n));
  for (std::size_t c = 0; c < ncoords; ++c)
    for (int ky = 0; ky < ny; ++ky)
      for (int m = 0; m < nz; ++m)
        out[c * n + static_cast<std::size_t>(ky) * nz + m] = py[c * ny + ky] * pz[c * nz + m];
  return out;
}

// Reorders the eta spectrum [ky_flat*nz2 + kz_flat] into the axis-separable
// layout [(ky1*nz+m1) * n + (ky2*nz+m2)] consumed by synth_separable.
cvec permute_eta(const cvec& H, int ny, int nz) {
  const int n = ny * nz;
  const std::size_t nz2 = static_cast<std::size_t>(nz) * nz;
  cvec out(static_cast<std::size_t>(n) * n);
  for (int ky1 = 0; ky1 < ny; ++ky1)
    for (int ky2 = 0; ky2 < ny; ++ky2)
      for (int m1 = 0; m1 < nz; ++m1)
        for (int m2 = 0; m2 < nz; ++m2)
          out[(static_cast<std::size_t>(ky1) * nz + m1) * n + static_cast<std::size_t>(ky2) * nz +
              m2] = H[(static_cast<std::size_t>(ky1) * ny + ky2) * nz2 +
                      static_cast<std::size_t>(m1) * nz + m2];
  return out;
}

GradientSnapshot gradient_of(const flow::Grid& g, const flow::State& s) {
  GradientSnapshot gs;
  gs.t = s.t;
  const double ihx = 1.0 / g.hx(), ihy = 1.0 / g.hy();
  for (auto& a : gs.G) a.assign(g.np(), 0.0);
  for (int cj = 0; cj < g.ny; ++cj)
    for (int ci = 0; ci < g.nx; ++ci) {
      const int c = g.ip(ci, cj);
      gs.G[0][c] = (getu(g, s.u, ci + 1, cj) - getu(g, s.u, ci, cj)) * ihx;
      gs.G[3][c] = (getv(g, s.v, ci, cj + 1) - getv(g, s.v, ci, cj)) * ihy;
      double accC = 0.0, accD = 0.0;  // corner derivatives averaged to the centre
      for (int dj = 0; dj <= 1; ++dj)
        for (int di = 0; di <= 1; ++di) {
          const int i = ci + di, j = cj + dj;
          accC += (getu(g, s.u, i, j) - getu(g, s.u, i, j - 1)) * ihy;
          accD += (getv(g, s.v, i, j) - getv(g, s.v, i - 1, j)) * ihx;
        }
      gs.G[2][c] = 0.25 * accC;
      gs.G[1][c] = 0.25 * accD;
    }
  return gs;
}

double trapezoid(const std::vector<double>& t, const std::vector<double>& f) {
  double acc = 0.0;
  for (std::size_t s = 1; s < t.size(); ++s) acc += 0.5 * (t[s] - t[s - 1]) * (f[s] + f[s - 1]);
  return acc;
}

flow::State velocity_diff(const flow::State& a, const flow::State& b) {
  flow::State d = a;
  for (std::size_t k = 0; k < d.u.size(); ++k) d.u[k] -= b.u[k];
  for (std::size_t k = 0; k < d.v.size(); ++k) d.v[k] -= b.v[k];
  return d;
}

}  // namespace

std::array<double, 4> CorrectorFields::grad_u0_at(std::size_t snap, double x1, double x2) const {
  const GradientSnapshot& gs = grads.at(snap);
  const double sx = x1 / grid.hx() - 0.5, sy = x2 / grid.hy() - 0.5;
  int i0 = static_cast<int>(std::floor(sx)), j0 = static_cast<int>(std::floor(sy));
  i0 = std::clamp(i0, 0, grid.nx - 2);
  j0 = std::clamp(j0, 0, grid.ny - 2);
  const double fx = std::clamp(sx - i0, 0.0, 1.0), fy = std::clamp(sy - j0, 0.0, 1.0);
  std::array<double, 4> out{};
  for (int e = 0; e < 4; ++e) {
    const std::vector<double>& a = gs.G[e];
    out[e] = (1 - fx) * (1 - fy) * a[grid.ip(i0, j0)] + fx * (1 - fy) * a[grid.ip(i0 + 1, j0)] +
             (1 - fx) * fy * a[grid.ip(i0, j0 + 1)] + fx * fy * a[grid.ip(i0 + 1, j0 + 1)];
  }
  return out;
}

double CorrectorFields::eval_u1(std::size_t snap, double x1, double x2, double y1, double y2,
                                int comp) const {
  const auto G = grad_u0_at(snap, x1, x2);
  double acc = 0.0;
  for (int e = 0; e < 4; ++e)
    acc += G[e] * fourier::eval_at(chi_hat[e][comp - 1], n_y, n_y, y1, y2);
  return -acc;
}

double CorrectorFields::eval_u2(std::size_t snap, double x1, double x2, double y1, double y2,
                                double z1, double z2, int comp) const {
  const auto G = grad_u0_at(snap, x1, x2);
  const int ny = n_y, nz = n_z;
  cvec py1(ny), py2(ny), pz1(nz), pz2(nz);
  for (int k = 0; k < ny; ++k) {
    const int m = fourier::mode_of(k, ny);
    py1[k] = std::polar(1.0, kTwoPi * m * (y1 + 0.5));
    py2[k] = std::polar(1.0, kTwoPi * m * (y2 + 0.5));
  }
  for (int k = 0; k < nz; ++k) {
    const int m = fourier::mode_of(k, nz);
    pz1[k] = std::polar(1.0, kTwoPi * m * (z1 + 0.5));
    pz2[k] = std::polar(1.0, kTwoPi * m * (z2 + 0.5));
  }
  const std::size_t nz2 = static_cast<std::size_t>(nz) * nz;
  double acc = 0.0;
  for (int e = 0; e < 4; ++e) {
    const cvec& H = eta_hat[e][comp - 1];
    std::complex<double> sum = 0.0;
    for (int ky1 = 0; ky1 < ny; ++ky1)
      for (int ky2 = 0; ky2 < ny; ++ky2) {
        const std::complex<double> ph_y = py1[ky1] * py2[ky2];
        const std::complex<double>* row =
            H.data() + (static_cast<std::size_t>(ky1) * ny + ky2) * nz2;
        std::complex<double> zsum = 0.0;
        for (int m1 = 0; m1 < nz; ++m1)
          for (int m2 = 0; m2 < nz; ++m2)
            zsum += row[static_cast<std::size_t>(m1) * nz + m2] * pz1[m1] * pz2[m2];
        sum += ph_y * zsum;
      }
    acc += G[e] * sum.real();
  }
  return -acc;
}

CorrectorFields build_correctors(const flow::RunResult& u0_run,
                                 const cells::CellSolution& cs) {
  const std::string expect = "homogenized|" + cs.sampling.field_tag;
  if (u0_run.model_tag != expect)
    throw InvariantError("corrector provenance mismatch: run tagged '" + u0_run.model_tag +
                         "' but cells require '" + expect + "'");
  if (u0_run.snapshots.empty())
    throw ConfigError("corrector construction needs at least one stored snapshot");

  CorrectorFields corr;
  corr.grid = u0_run.grid;
  corr.field_tag = cs.sampling.field_tag;
  corr.n_y = cs.sampling.n_y;
  corr.n_z = cs.sampling.n_z;
  corr.u0 = u0_run.snapshots;
  corr.grads.reserve(corr.u0.size());
  for (const auto& s : corr.u0) {
    if (static_cast<int>(s.u.size()) != corr.grid.nu() ||
        static_cast<int>(s.v.size()) != corr.grid.nv())
      throw InvariantError("homogenized snapshot does not match its grid");
    corr.grads.push_back(gradient_of(corr.grid, s));
  }

  const int ny = corr.n_y, nz = corr.n_z;
  const std::size_t ny2 = static_cast<std::size_t>(ny) * ny;
  const std::size_t nz2 = static_cast<std::size_t>(nz) * nz;
  for (int e = 0; e < 4; ++e) {
    const cells::CellEntry& ent = cs.entries[e];
    if (ent.chi.n != ny || ent.eta.n_y != ny || ent.eta.n_z != nz)
      throw InvariantError("cell entry grid does not match the sampling header");
    fourier::to_spectral(ent.chi.comp1, corr.chi_hat[e][0], ny, ny);
    fourier::to_spectral(ent.chi.comp2, corr.chi_hat[e][1], ny, ny);
    // eta: z-spectrum per y node, then a y-DFT across nodes for each z mode.
    const std::vector<double>* comps[2] = {&ent.eta.comp1, &ent.eta.comp2};
    for (int m = 0; m < 2; ++m) {
      cvec zspec(ny2 * nz2);
      cvec hat;
      std::vector<double> block(nz2);
      for (std::size_t p = 0; p < ny2; ++p) {
        std::copy_n(comps[m]->begin() + p * nz2, nz2, block.begin());
        fourier::to_spectral(block, hat, nz, nz);
        std::copy_n(hat.begin(), nz2, zspec.begin() + p * nz2);
      }
      cvec& H = corr.eta_hat[e][m];
      H.assign(ny2 * nz2, 0.0);
      cvec gather(ny2), spec(ny2);
      for (std::size_t zm = 0; zm < nz2; ++zm) {
        for (std::size_t p = 0; p < ny2; ++p) gather[p] = zspec[p * nz2 + zm];
        fourier::fft2(gather.data(), spec.data(), ny, ny, true);
        const double inv = 1.0 / static_cast<double>(ny2);
        for (std::size_t k = 0; k < ny2; ++k) H[k * nz2 + zm] = spec[k] * inv;
      }
    }
  }
  return corr;
}

std::vector<flow::State> evaluate_expansion(const CorrectorFields& corr, double epsilon,
                                            int min_points_per_fine_period) {
  if (!(epsilon > 0.0) || !(epsilon < 1.0))
    throw ConfigError("expansion epsilon must lie in (0,1)");
  const flow::Grid& g = corr.grid;
  const double eps2 = epsilon * epsilon;
  const double ppx = g.nx * eps2 / g.Lx, ppy = g.ny * eps2 / g.Ly;
  if (ppx + 1e-9 < min_points_per_fine_period || ppy + 1e-9 < min_points_per_fine_period)
    throw ConfigError("grid " + std::to_string(g.nx) + "x" + std::to_string(g.ny) +
                      " does not resolve the x/eps^2 oscillation at eps = " +
                      io::fmt_double(epsilon) + " (needs >= " +
                      std::to_string(min_points_per_fine_period) + " points per period)");

  const int ny_ = corr.n_y, nz_ = corr.n_z;
  const double hx = g.hx(), hy = g.hy();
  const double iy = 1.0 / epsilon, iz = 1.0 / eps2;

  std::vector<double> xu(g.nx - 1), yu(g.ny), xv(g.nx), yv(g.ny - 1);
  for (int i = 1; i <= g.nx - 1; ++i) xu[i - 1] = i * hx;
  for (int j = 0; j < g.ny; ++j) yu[j] = (j + 0.5) * hy;
  for (int i = 0; i < g.nx; ++i) xv[i] = (i + 0.5) * hx;
  for (int j = 1; j <= g.ny - 1; ++j) yv[j - 1] = j * hy;

  const cvec py_xu = phase_table(xu, iy, ny_), pz_xu = phase_table(xu, iz, nz_);
  const cvec py_yu = phase_table(yu, iy, ny_), pz_yu = phase_table(yu, iz, nz_);
  const cvec py_xv = phase_table(xv, iy, ny_), pz_xv = phase_table(xv, iz, nz_);
  const cvec py_yv = phase_table(yv, iy, ny_), pz_yv = phase_table(yv, iz, nz_);
  const cvec cj_xu = combine_tables(py_xu, ny_, pz_xu, nz_, xu.size());
  const cvec cj_yu = combine_tables(py_yu, ny_, pz_yu, nz_, yu.size());
  const cvec cj_xv = combine_tables(py_xv, ny_, pz_xv, nz_, xv.size());
  const cvec cj_yv = combine_tables(py_yv, ny_, pz_yv, nz_, yv.size());

  // Trace values of the cell fields at the faces, one array per entry; these
  // are snapshot independent, so they are synthesized once.
  std::array<std::vector<double>, 4> chi_u, chi_v, eta_u, eta_v;
  for (int e = 0; e < 4; ++e) {
    synth_separable(corr.chi_hat[e][0], ny_, py_xu, xu.size(), py_yu, yu.size(), chi_u[e]);
    synth_separable(corr.chi_hat[e][1], ny_, py_xv, xv.size(), py_yv, yv.size(), chi_v[e]);
    const cvec h0 = permute_eta(corr.eta_hat[e][0], ny_, nz_);
    synth_separable(h0, ny_ * nz_, cj_xu, xu.size(), cj_yu, yu.size(), eta_u[e]);
    const cvec h1 = permute_eta(corr.eta_hat[e][1], ny_, nz_);
    synth_separable(h1, ny_ * nz_, cj_xv, xv.size(), cj_yv, yv.size(), eta_v[e]);
  }

  std::vector<flow::State> out(corr.u0.size());
  for (std::size_t s = 0; s < corr.u0.size(); ++s) {
    out[s] = corr.u0[s];
    for (int i = 1; i <= g.nx - 1; ++i)
      for (int j = 0; j < g.ny; ++j) {
        const std::size_t c = static_cast<std::size_t>(i - 1) * yu.size() + j;
        const auto G = corr.grad_u0_at(s, xu[i - 1], yu[j]);
        double u1 = 0.0, u2 = 0.0;
        for (int e = 0; e < 4; ++e) {
          u1 -= G[e] * chi_u[e][c];
          u2 -= G[e] * eta_u[e][c];
        }
        out[s].u[g.iu(i, j)] += epsilon * u1 + eps2 * u2;
      }
    for (int i = 0; i < g.nx; ++i)
      for (int j = 1; j <= g.ny - 1; ++j) {
        const std::size_t c = static_cast<std::size_t>(i) * yv.size() + (j - 1);
        const auto G = corr.grad_u0_at(s, xv[i], yv[j - 1]);
        double u1 = 0.0, u2 = 0.0;
        for (int e = 0; e < 4; ++e) {
          u1 -= G[e] * chi_v[e][c];
          u2 -= G[e] * eta_v[e][c];
        }
        out[s].v[g.iv(i, j)] += epsilon * u1 + eps2 * u2;
      }
  }
  return out;
}

namespace {

// Quadrature audit: on one epsilon-period patch near the domain centre,
// integrate |u1(x, x/eps)|^2 with the gradient frozen at the patch centre by
// (a) nodal quadrature through the fast synthesis path and (b) Parseval on
// the combined chi spectrum. Exact trace quadrature makes the two agree to
// roundoff; a mismatch flags aliasing in the trace sampling.
double parseval_audit(const CorrectorFields& corr, double epsilon, std::size_t snap) {
  const flow::Grid& g = corr.grid;
  const double h = g.hx();
  const int cells_per = std::max(1, static_cast<int>(std::lround(g.Lx / epsilon)));
  const int c = std::clamp(cells_per / 2, 0, cells_per - 1);
  const double x0 = c * epsilon;
  const int i0 = static_cast<int>(std::lround(x0 / h));
  const int m = std::max(2, static_cast<int>(std::lround(epsilon / h)));
  const auto G = corr.grad_u0_at(snap, x0 + 0.5 * epsilon, x0 + 0.5 * epsilon);

  std::vector<double> xs(m);
  for (int t = 0; t < m; ++t) xs[t] = (i0 + t + 0.5) * h;
  const cvec P = phase_table(xs, 1.0 / epsilon, corr.n_y);

  const std::size_t ny2 = static_cast<std::size_t>(corr.n_y) * corr.n_y;
  double nodal = 0.0, parseval = 0.0;
  std::vector<double> vals;
  for (int comp = 0; comp < 2; ++comp) {
    cvec combined(ny2, 0.0);
    for (int e = 0; e < 4; ++e)
      for (std::size_t k = 0; k < ny2; ++k) combined[k] += G[e] * corr.chi_hat[e][comp][k];
    synth_separable(combined, corr.n_y, P, xs.size(), P, xs.size(), vals);
    for (double v : vals) nodal += h * h * v * v;
    for (const auto& z : combined) parseval += std::norm(z);
  }
  parseval *= epsilon * epsilon;
  const double scale = std::max(std::max(nodal, parseval), 1e-300);
  return std::abs(nodal - parseval) / scale;
}

}  // namespace

CorrectorReport corrector_sweep(const SweepConfig& cfg) {
  if (cfg.epsilons.empty()) throw ConfigError("corrector sweep needs at least one epsilon");
  for (std::size_t k = 0; k < cfg.epsilons.size(); ++k) {
    if (!(cfg.epsilons[k] > 0.0) || !(cfg.epsilons[k] < 1.0))
      throw ConfigError("sweep epsilons must lie in (0,1)");
    if (k && !(cfg.epsilons[k] < cfg.epsilons[k - 1]))
      throw ConfigError("sweep epsilons must be strictly decreasing");
  }
  if (cfg.snapshots < 2) throw ConfigError("corrector sweep needs at least two snapshots");
  if (!(cfg.t_end > 0.0)) throw ConfigError("corrector sweep t_end must be positive");
  if (cfg.cells.sampling.field_tag != cfg.field.family_tag ||
      cfg.tensor.field_tag != cfg.field.family_tag)
    throw InvariantError("corrector sweep field/cells/tensor provenance mismatch");

  CorrectorReport rep;
  rep.field_tag = cfg.field.family_tag;
  for (double eps : cfg.epsilons) {
    CorrectorRow row;
    row.epsilon = eps;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const int nx =
          static_cast<int>(std::lround(cfg.points_per_fine_period / (eps * eps)));
      flow::FlowConfig fc;
      fc.grid = {nx, nx, 1.0, 1.0};
      fc.forcing = flow::make_forcing(cfg.forcing, cfg.forcing_amplitude);
      fc.dt = flow::default_dt(fc.grid);
      fc.t_end = cfg.t_end;
      fc.viscous_tol = cfg.viscous_tol;
      fc.snapshot_times.resize(cfg.snapshots);
      for (int s = 0; s < cfg.snapshots; ++s)
        fc.snapshot_times[s] = cfg.t_end * s / (cfg.snapshots - 1);

      fc.tensor = flow::constant_tensor(cfg.tensor);
      fc.model_tag = "homogenized|" + cfg.field.family_tag;
      const auto u0_run = flow::run_flow(fc);

      fc.tensor = flow::oscillatory_tensor(cfg.field, eps);
      fc.model_tag = "oscillatory|" + cfg.field.family_tag + "|eps=" + io::fmt_double(eps);
      const auto dns = flow::run_flow(fc);

      const auto corr = build_correctors(u0_run, cfg.cells);
      const auto approx = evaluate_expansion(corr, eps, cfg.min_points_per_fine_period);

      std::vector<double> times, grad_sq, l2_sq;
      for (std::size_t s = 0; s < dns.snapshots.size(); ++s) {
        times.push_back(dns.snapshots[s].t);
        grad_sq.push_back(
            flow::velocity_grad_sq(fc.grid, velocity_diff(dns.snapshots[s], approx[s])));
        l2_sq.push_back(
            flow::velocity_l2_sq(fc.grid, velocity_diff(dns.snapshots[s], u0_run.snapshots[s])));
      }
      row.E_grad = std::sqrt(trapezoid(times, grad_sq));
      row.E_L2 = std::sqrt(trapezoid(times, l2_sq));
      row.parseval_rel_gap = parseval_audit(corr, eps, corr.u0.size() - 1);
      row.nx = nx;
      row.dt = dns.dt;
      row.ok = true;
    } catch (const std::exception& ex) {
      row.ok = false;
      row.error = ex.what();
    }
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

void write_corrector_csv(const CorrectorReport& report, const std::string& path) {
  std::string out = "epsilon,E_grad,E_L2,nx,dt,wall_seconds\n";
  for (const auto& r : report.rows) {
    if (!r.ok) continue;
    out += io::fmt_double(r.epsilon) + "," + io::fmt_double(r.E_grad) + "," +
           io::fmt_double(r.E_L2) + "," + std::to_string(r.nx) + "," + io::fmt_double(r.dt) +
           "," + io::fmt_double(r.wall_seconds) + "\n";
  }
  io::atomic_write(path, out);
}

}  // namespace rehom::corrector
