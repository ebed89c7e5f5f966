#include <algorithm>
#include <cmath>
#include <vector>

#include "rehom/cells.hpp"
#include "rehom/errors.hpp"
#include "rehom/io_util.hpp"

// Two-step path: for every Y node p, solve the four frozen-y Z problems
//   sum_m,il <a_il(p,.) d_l w^(jh),m, d_i v^m>_Z = -sum_i <a_ij(p,.), d_i v^h>_Z,
// condense them into the intermediate tensor
//   b_ijkh(p) = delta_kh <a_ij(p,.)>_Z + sum_l <a_il(p,.) d_l w^(jh),k>_Z,
// then solve the Y-stage problem with coefficient b on the plain collocation
// grid, and reconstruct eta from the stored w fields. With exact inner solves
// the minimized functional is identical to the coupled one, so the two paths
// agree to solver tolerance.

namespace rehom::cells {

using fourier::fft2;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

inline int centry(int i, int l) { return i + l; }
inline int idx4(int i, int j, int k, int h) { return ((i * 2 + j) * 2 + k) * 2 + h; }

struct PairVec {
  cvec c1, c2;
};

double pair_dot(const PairVec& x, const PairVec& y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.c1.size(); ++i) {
    acc += x.c1[i].real() * y.c1[i].real() + x.c1[i].imag() * y.c1[i].imag();
    acc += x.c2[i].real() * y.c2[i].real() + x.c2[i].imag() * y.c2[i].imag();
  }
  return acc;
}

// Preconditioned CG on PairVec dofs; returns iterations, sets rel residual.
// zero_floor guards structurally-zero right hand sides: below it the rhs is
// projection/FFT roundoff and the zero vector is the solution.
template <typename Apply, typename Precond>
int pcg(const Apply& apply, const Precond& precond, const PairVec& b, PairVec& x, double tol,
        int max_iter, double zero_floor, double& rel_out) {
  const std::size_t n = b.c1.size();
  x.c1.assign(n, 0.0);
  x.c2.assign(n, 0.0);
  const double bnorm = std::sqrt(pair_dot(b, b));
  if (bnorm <= zero_floor) {
    rel_out = 0.0;
    return 0;
  }
  PairVec r = b, z, p, Ap;
  precond(r, z);
  p = z;
  double rz = pair_dot(r, z);
  double rel = 1.0;
  int it = 0;
  for (; it < max_iter; ++it) {
    apply(p, Ap);
    const double pAp = pair_dot(p, Ap);
    if (!(pAp > 0.0))
      throw NumericError("sequential cell solver: negative curvature (p.Ap = " +
                         io::fmt_double(pAp) + ")");
    const double alpha = rz / pAp;
    for (std::size_t i = 0; i < n; ++i) {
      x.c1[i] += alpha * p.c1[i];
      x.c2[i] += alpha * p.c2[i];
      r.c1[i] -= alpha * Ap.c1[i];
      r.c2[i] -= alpha * Ap.c2[i];
    }
    rel = std::sqrt(pair_dot(r, r)) / bnorm;
    if (rel <= tol) {
      ++it;
      break;
    }
    precond(r, z);
    const double rz_new = pair_dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) {
      p.c1[i] = z.c1[i] + beta * p.c1[i];
      p.c2[i] = z.c2[i] + beta * p.c2[i];
    }
  }
  if (rel > tol)
    throw NumericError("sequential cell solver: no convergence after " +
                       std::to_string(max_iter) + " iterations, residual " +
                       io::fmt_double(rel));
  rel_out = rel;
  return it;
}

}  // namespace

SequentialResult solve_cell_sequential(const coeff::CellSampling& s, CellIndex idx, double tol) {
  if (tol <= 0.0) throw ConfigError("solve_cell_sequential: tol must be positive");
  CellContext ctx(s);
  const int ny = ctx.n_y, nz = ctx.n_z, mzn = ctx.mz;
  const std::size_t nodes_y = ctx.ny2(), nz_sq = ctx.nz2(), mz_sq = ctx.mz2();
  const double inv_mz_sq = 1.0 / static_cast<double>(mz_sq);
  const int i0 = idx.i - 1, k0 = idx.k - 1;
  const int kmax_z = nz / 2 - 1;

  SequentialResult res;
  res.entry.idx = idx;
  res.b.assign(nodes_y * 16, 0.0);
  double worst_rel = 0.0;
  long total_iters = 0;

  // Stored z-stage solutions: w[j*2+h], spectra per node p at offset p*nz_sq.
  PairVec w_store[4];
  for (auto& w : w_store) {
    w.c1.assign(nodes_y * nz_sq, 0.0);
    w.c2.assign(nodes_y * nz_sq, 0.0);
  }

  cvec der(nz_sq), padded(mz_sq), ahat[3], flux(mz_sq);
  for (auto& h : ahat) h.resize(mz_sq);
  cvec dv[2][2], fh[2];
  for (auto& row : dv)
    for (auto& v : row) v.resize(mz_sq);
  for (auto& v : fh) v.resize(mz_sq);

  const int max_iter_z = 10 * nz * nz;
  for (std::size_t p = 0; p < nodes_y; ++p) {
    const double* a11 = ctx.a[0].data() + p * mz_sq;
    const double* a12 = ctx.a[1].data() + p * mz_sq;
    const double* a22 = ctx.a[2].data() + p * mz_sq;
    double maz[3];
    for (int c = 0; c < 3; ++c) {
      const double* src = ctx.a[c].data() + p * mz_sq;
      double acc = 0.0;
      for (std::size_t q = 0; q < mz_sq; ++q) {
        flux[q] = src[q];
        acc += src[q];
      }
      fft2(flux.data(), ahat[c].data(), mzn, mzn, true);
      for (auto& cc : ahat[c]) cc *= inv_mz_sq;
      maz[c] = acc * inv_mz_sq;
    }

    auto apply_z = [&](const PairVec& x, PairVec& out) {
      out.c1.assign(nz_sq, 0.0);
      out.c2.assign(nz_sq, 0.0);
      const cvec* comps[2] = {&x.c1, &x.c2};
      for (int m = 0; m < 2; ++m) {
        for (int j = 0; j < 2; ++j) {
          fourier::derivative(*comps[m], der, nz, nz, j);
          fourier::pad_spectrum(der, nz, padded, mzn);
          fft2(padded.data(), dv[m][j].data(), mzn, mzn, false);
        }
      }
      cvec* outs[2] = {&out.c1, &out.c2};
      for (int m = 0; m < 2; ++m) {
        for (std::size_t q = 0; q < mz_sq; ++q) {
          const double g1 = dv[m][0][q].real(), g2 = dv[m][1][q].real();
          fh[0][q] = a11[q] * g1 + a12[q] * g2;
          fh[1][q] = a12[q] * g1 + a22[q] * g2;
        }
        fft2(fh[0].data(), fh[0].data(), mzn, mzn, true);
        fft2(fh[1].data(), fh[1].data(), mzn, mzn, true);
        for (int k1 = -kmax_z; k1 <= kmax_z; ++k1) {
          for (int k2 = -kmax_z; k2 <= kmax_z; ++k2) {
            const std::size_t sidx = static_cast<std::size_t>(fourier::index_of(k1, mzn)) * mzn +
                                     fourier::index_of(k2, mzn);
            const std::complex<double> div =
                std::complex<double>(0.0, kTwoPi) *
                (double(k1) * fh[0][sidx] + double(k2) * fh[1][sidx]) * inv_mz_sq;
            (*outs[m])[static_cast<std::size_t>(fourier::index_of(k1, nz)) * nz +
                       fourier::index_of(k2, nz)] = -div;
          }
        }
      }
      fourier::leray_project(out.c1, out.c2, nz, nz);
    };
    auto precond_z = [&](const PairVec& r, PairVec& z) {
      z.c1.resize(nz_sq);
      z.c2.resize(nz_sq);
      for (int a1 = 0; a1 < nz; ++a1) {
        const double k1 = fourier::mode_of(a1, nz);
        for (int a2 = 0; a2 < nz; ++a2) {
          const double k2 = fourier::mode_of(a2, nz);
          const std::size_t q = static_cast<std::size_t>(a1) * nz + a2;
          const double sc =
              kTwoPi * kTwoPi * (maz[0] * k1 * k1 + 2.0 * maz[1] * k1 * k2 + maz[2] * k2 * k2);
          z.c1[q] = sc > 0.0 ? r.c1[q] / sc : 0.0;
          z.c2[q] = sc > 0.0 ? r.c2[q] / sc : 0.0;
        }
      }
    };

    for (int j = 0; j < 2; ++j) {
      for (int h = 0; h < 2; ++h) {
        PairVec rhs;
        rhs.c1.assign(nz_sq, 0.0);
        rhs.c2.assign(nz_sq, 0.0);
        cvec* rc = h == 0 ? &rhs.c1 : &rhs.c2;
        for (int k1 = -kmax_z; k1 <= kmax_z; ++k1) {
          for (int k2 = -kmax_z; k2 <= kmax_z; ++k2) {
            const std::size_t sidx = static_cast<std::size_t>(fourier::index_of(k1, mzn)) * mzn +
                                     fourier::index_of(k2, mzn);
            (*rc)[static_cast<std::size_t>(fourier::index_of(k1, nz)) * nz +
                  fourier::index_of(k2, nz)] =
                std::complex<double>(0.0, kTwoPi) * (double(k1) * ahat[centry(0, j)][sidx] +
                                                     double(k2) * ahat[centry(1, j)][sidx]);
          }
        }
        fourier::leray_project(rhs.c1, rhs.c2, nz, nz);
        PairVec wsol;
        double rel = 0.0;
        total_iters += pcg(apply_z, precond_z, rhs, wsol, tol, max_iter_z,
                           1e-13 * kTwoPi * ctx.sup_a, rel);
        worst_rel = std::max(worst_rel, rel);

        // Condense: derivatives of w at the dealiased nodes, then b entries.
        const cvec* comps[2] = {&wsol.c1, &wsol.c2};
        for (int m = 0; m < 2; ++m) {
          for (int l = 0; l < 2; ++l) {
            fourier::derivative(*comps[m], der, nz, nz, l);
            fourier::pad_spectrum(der, nz, padded, mzn);
            fft2(padded.data(), dv[m][l].data(), mzn, mzn, false);
          }
        }
        for (int i = 0; i < 2; ++i) {
          const double* row[2] = {ctx.a[centry(i, 0)].data() + p * mz_sq,
                                  ctx.a[centry(i, 1)].data() + p * mz_sq};
          for (int k = 0; k < 2; ++k) {
            double acc = 0.0;
            for (std::size_t q = 0; q < mz_sq; ++q)
              acc += row[0][q] * dv[k][0][q].real() + row[1][q] * dv[k][1][q].real();
            res.b[p * 16 + idx4(i, j, k, h)] =
                (k == h ? maz[centry(i, j)] : 0.0) + acc * inv_mz_sq;
          }
        }
        std::copy_n(wsol.c1.begin(), nz_sq, w_store[j * 2 + h].c1.begin() + p * nz_sq);
        std::copy_n(wsol.c2.begin(), nz_sq, w_store[j * 2 + h].c2.begin() + p * nz_sq);
      }
    }
  }

  // Symmetrized intermediate tensor (the functional only sees the symmetric
  // part; raw b is Gram-symmetric up to the z solver tolerance).
  std::vector<double> bs(nodes_y * 16);
  for (std::size_t p = 0; p < nodes_y; ++p)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k)
          for (int h = 0; h < 2; ++h)
            bs[p * 16 + idx4(i, j, k, h)] = 0.5 * (res.b[p * 16 + idx4(i, j, k, h)] +
                                                   res.b[p * 16 + idx4(j, i, h, k)]);

  // Y stage on the plain collocation grid.
  const double inv_ny_sq = 1.0 / static_cast<double>(nodes_y);
  cvec dery(nodes_y), valsy(nodes_y);
  cvec dchi_hat[2][2];
  std::vector<double> dchi[2][2];
  cvec fyh[2][2];
  for (auto& row : fyh)
    for (auto& v : row) v.resize(nodes_y);

  auto apply_y = [&](const PairVec& x, PairVec& out) {
    const cvec* comps[2] = {&x.c1, &x.c2};
    for (int h = 0; h < 2; ++h) {
      for (int j = 0; j < 2; ++j) {
        fourier::derivative(*comps[h], dery, ny, ny, j);
        fft2(dery.data(), valsy.data(), ny, ny, false);
        dchi[h][j].resize(nodes_y);
        for (std::size_t p = 0; p < nodes_y; ++p) dchi[h][j][p] = valsy[p].real();
      }
    }
    for (std::size_t p = 0; p < nodes_y; ++p) {
      const double* bp = bs.data() + p * 16;
      for (int k = 0; k < 2; ++k) {
        for (int i = 0; i < 2; ++i) {
          double acc = 0.0;
          for (int j = 0; j < 2; ++j)
            for (int h = 0; h < 2; ++h) acc += bp[idx4(i, j, k, h)] * dchi[h][j][p];
          fyh[k][i][p] = acc;
        }
      }
    }
    out.c1.assign(nodes_y, 0.0);
    out.c2.assign(nodes_y, 0.0);
    cvec* outs[2] = {&out.c1, &out.c2};
    for (int k = 0; k < 2; ++k) {
      for (int i = 0; i < 2; ++i) {
        fft2(fyh[k][i].data(), fyh[k][i].data(), ny, ny, true);
        for (int a1 = 0; a1 < ny; ++a1) {
          const double kk1 = fourier::mode_of(a1, ny);
          for (int a2 = 0; a2 < ny; ++a2) {
            const double kk2 = fourier::mode_of(a2, ny);
            const double ki = i == 0 ? kk1 : kk2;
            const std::size_t q = static_cast<std::size_t>(a1) * ny + a2;
            (*outs[k])[q] -= std::complex<double>(0.0, kTwoPi * ki) * fyh[k][i][q] * inv_ny_sq;
          }
        }
      }
    }
    fourier::leray_project(out.c1, out.c2, ny, ny);
  };

  // Mode-wise 2x2 preconditioner from the p-average of bs.
  double bbar[16] = {};
  for (std::size_t p = 0; p < nodes_y; ++p)
    for (int t = 0; t < 16; ++t) bbar[t] += bs[p * 16 + t] * inv_ny_sq;
  auto precond_y = [&](const PairVec& r, PairVec& z) {
    z.c1.resize(nodes_y);
    z.c2.resize(nodes_y);
    for (int a1 = 0; a1 < ny; ++a1) {
      const double k1 = fourier::mode_of(a1, ny);
      for (int a2 = 0; a2 < ny; ++a2) {
        const double k2 = fourier::mode_of(a2, ny);
        const std::size_t q = static_cast<std::size_t>(a1) * ny + a2;
        const double kk[2] = {k1, k2};
        double m11 = 0.0, m12 = 0.0, m22 = 0.0;
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) {
            const double w = kTwoPi * kTwoPi * kk[i] * kk[j];
            m11 += w * bbar[idx4(i, j, 0, 0)];
            m12 += w * bbar[idx4(i, j, 0, 1)];
            m22 += w * bbar[idx4(i, j, 1, 1)];
          }
        const double det = m11 * m22 - m12 * m12;
        if (det > 1e-300 && m11 > 0.0) {
          z.c1[q] = (m22 * r.c1[q] - m12 * r.c2[q]) / det;
          z.c2[q] = (m11 * r.c2[q] - m12 * r.c1[q]) / det;
        } else {
          const double sc = m11 + m22;
          z.c1[q] = sc > 0.0 ? r.c1[q] / sc : 0.0;
          z.c2[q] = sc > 0.0 ? r.c2[q] / sc : 0.0;
        }
      }
    }
  };

  PairVec rhs_y;
  rhs_y.c1.assign(nodes_y, 0.0);
  rhs_y.c2.assign(nodes_y, 0.0);
  {
    cvec ghat(nodes_y), field(nodes_y);
    cvec* rcs[2] = {&rhs_y.c1, &rhs_y.c2};
    for (int k = 0; k < 2; ++k) {
      for (int i = 0; i < 2; ++i) {
        for (std::size_t p = 0; p < nodes_y; ++p) field[p] = bs[p * 16 + idx4(i, i0, k, k0)];
        fft2(field.data(), ghat.data(), ny, ny, true);
        for (int a1 = 0; a1 < ny; ++a1) {
          const double kk1 = fourier::mode_of(a1, ny);
          for (int a2 = 0; a2 < ny; ++a2) {
            const double kk2 = fourier::mode_of(a2, ny);
            const double ki = i == 0 ? kk1 : kk2;
            const std::size_t q = static_cast<std::size_t>(a1) * ny + a2;
            (*rcs[k])[q] -= std::complex<double>(0.0, kTwoPi * ki) * ghat[q] * inv_ny_sq;
          }
        }
      }
    }
    fourier::leray_project(rhs_y.c1, rhs_y.c2, ny, ny);
  }

  double sup_b = 0.0;
  for (double v : bs) sup_b = std::max(sup_b, std::abs(v));
  PairVec chi;
  double rel_y = 0.0;
  total_iters += pcg(apply_y, precond_y, rhs_y, chi, tol, 10 * ny * ny,
                     1e-13 * kTwoPi * sup_b, rel_y);
  worst_rel = std::max(worst_rel, rel_y);

  // Reconstruct eta from the stored z solutions.
  CellVec full;
  full.chi1 = chi.c1;
  full.chi2 = chi.c2;
  full.eta1.assign(nodes_y * nz_sq, 0.0);
  full.eta2.assign(nodes_y * nz_sq, 0.0);
  {
    const cvec* comps[2] = {&chi.c1, &chi.c2};
    for (int h = 0; h < 2; ++h) {
      for (int j = 0; j < 2; ++j) {
        fourier::derivative(*comps[h], dery, ny, ny, j);
        fft2(dery.data(), valsy.data(), ny, ny, false);
        dchi[h][j].resize(nodes_y);
        for (std::size_t p = 0; p < nodes_y; ++p) dchi[h][j][p] = valsy[p].real();
      }
    }
    for (std::size_t p = 0; p < nodes_y; ++p) {
      for (int j = 0; j < 2; ++j) {
        for (int h = 0; h < 2; ++h) {
          const double xi = dchi[h][j][p] - ((j == i0 && h == k0) ? 1.0 : 0.0);
          if (xi == 0.0) continue;
          const PairVec& w = w_store[j * 2 + h];
          for (std::size_t q = 0; q < nz_sq; ++q) {
            full.eta1[p * nz_sq + q] += xi * w.c1[p * nz_sq + q];
            full.eta2[p * nz_sq + q] += xi * w.c2[p * nz_sq + q];
          }
        }
      }
    }
  }

  vec_to_entry(ctx, full, res.entry);
  res.entry.residual = worst_rel;
  res.entry.iterations = static_cast<int>(std::min<long>(total_iters, 0x7fffffffL));
  return res;
}

}  // namespace rehom::cells
