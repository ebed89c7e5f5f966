#include "rehom/cells.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "rehom/errors.hpp"
#include "rehom/io_util.hpp"

namespace rehom::cells {

using fourier::fft2;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

// Coefficient entry index for tensor position (i, l), 0-based.
inline int centry(int i, int l) { return i + l; }  // (0,0)->0, mixed->1, (1,1)->2

}  // namespace

CellContext::CellContext(const coeff::CellSampling& s) {
  n_y = s.n_y;
  n_z = s.n_z;
  mz = 3 * n_z / 2;
  alpha = s.alpha;
  field_tag = s.field_tag;
  const std::size_t nodes_y = ny2(), nodes_zp = mz2(), nz_sq = nz2();
  for (auto& arr : a) arr.resize(nodes_y * nodes_zp);

  std::vector<double> samples(nz_sq);
  std::vector<double> padded;
  for (std::size_t p = 0; p < nodes_y; ++p) {
    for (int c = 0; c < 3; ++c) {
      for (std::size_t q = 0; q < nz_sq; ++q) {
        const auto& m = s.values[p * nz_sq + q];
        samples[q] = c == 0 ? m.a11 : (c == 1 ? m.a12 : m.a22);
      }
      fourier::resample_values(samples, n_z, padded, mz);
      std::copy(padded.begin(), padded.end(), a[c].begin() + p * nodes_zp);
    }
  }
  for (int c = 0; c < 3; ++c) {
    double acc = 0.0;
    for (double v : a[c]) {
      acc += v;
      sup_a = std::max(sup_a, std::abs(v));
    }
    mean_a[c] = acc / static_cast<double>(a[c].size());
  }
}

CoupledOperator::CoupledOperator(const CellContext& ctx) : ctx_(ctx) {}

void CoupledOperator::alloc(CellVec& x) const {
  x.chi1.assign(ctx_.ny2(), 0.0);
  x.chi2.assign(ctx_.ny2(), 0.0);
  x.eta1.assign(ctx_.ny2() * ctx_.nz2(), 0.0);
  x.eta2.assign(ctx_.ny2() * ctx_.nz2(), 0.0);
}

void CoupledOperator::project(CellVec& x) const {
  fourier::leray_project(x.chi1, x.chi2, ctx_.n_y, ctx_.n_y);
  const std::size_t nz_sq = ctx_.nz2();
  cvec b1(nz_sq), b2(nz_sq);
  for (std::size_t p = 0; p < ctx_.ny2(); ++p) {
    std::copy_n(x.eta1.begin() + p * nz_sq, nz_sq, b1.begin());
    std::copy_n(x.eta2.begin() + p * nz_sq, nz_sq, b2.begin());
    fourier::leray_project(b1, b2, ctx_.n_z, ctx_.n_z);
    std::copy_n(b1.begin(), nz_sq, x.eta1.begin() + p * nz_sq);
    std::copy_n(b2.begin(), nz_sq, x.eta2.begin() + p * nz_sq);
  }
}

double CoupledOperator::dot(const CellVec& x, const CellVec& y) const {
  double chi_part = 0.0;
  for (std::size_t i = 0; i < x.chi1.size(); ++i) {
    chi_part += x.chi1[i].real() * y.chi1[i].real() + x.chi1[i].imag() * y.chi1[i].imag();
    chi_part += x.chi2[i].real() * y.chi2[i].real() + x.chi2[i].imag() * y.chi2[i].imag();
  }
  double eta_part = 0.0;
  for (std::size_t i = 0; i < x.eta1.size(); ++i) {
    eta_part += x.eta1[i].real() * y.eta1[i].real() + x.eta1[i].imag() * y.eta1[i].imag();
    eta_part += x.eta2[i].real() * y.eta2[i].real() + x.eta2[i].imag() * y.eta2[i].imag();
  }
  return chi_part + eta_part / static_cast<double>(ctx_.ny2());
}

void CoupledOperator::precondition(const CellVec& r, CellVec& z) const {
  const auto& m = ctx_.mean_a;
  auto scale_block = [&m](const cvec& src, const cvec& src2, cvec& dst, cvec& dst2, int n,
                          std::size_t offset) {
    for (int a1 = 0; a1 < n; ++a1) {
      const double k1 = fourier::mode_of(a1, n);
      for (int a2 = 0; a2 < n; ++a2) {
        const double k2 = fourier::mode_of(a2, n);
        const std::size_t idx = offset + static_cast<std::size_t>(a1) * n + a2;
        const double s = kTwoPi * kTwoPi * (m[0] * k1 * k1 + 2.0 * m[1] * k1 * k2 + m[2] * k2 * k2);
        if (s > 0.0) {
          dst[idx] = src[idx] / s;
          dst2[idx] = src2[idx] / s;
        } else {
          dst[idx] = 0.0;
          dst2[idx] = 0.0;
        }
      }
    }
  };
  z.chi1.resize(r.chi1.size());
  z.chi2.resize(r.chi2.size());
  z.eta1.resize(r.eta1.size());
  z.eta2.resize(r.eta2.size());
  scale_block(r.chi1, r.chi2, z.chi1, z.chi2, ctx_.n_y, 0);
  for (std::size_t p = 0; p < ctx_.ny2(); ++p)
    scale_block(r.eta1, r.eta2, z.eta1, z.eta2, ctx_.n_z, p * ctx_.nz2());
}

void CoupledOperator::apply(const CellVec& x, CellVec& out) const {
  const int ny = ctx_.n_y, nz = ctx_.n_z, mzn = ctx_.mz;
  const std::size_t nodes_y = ctx_.ny2(), nz_sq = ctx_.nz2(), mz_sq = ctx_.mz2();
  out.chi1.assign(nodes_y, 0.0);
  out.chi2.assign(nodes_y, 0.0);
  out.eta1.assign(nodes_y * nz_sq, 0.0);
  out.eta2.assign(nodes_y * nz_sq, 0.0);

  // Gradient of chi at the Y collocation nodes: dchi[m][j].
  std::vector<double> dchi[2][2];
  {
    cvec der(nodes_y), vals(nodes_y);
    const cvec* comps[2] = {&x.chi1, &x.chi2};
    for (int m = 0; m < 2; ++m) {
      for (int j = 0; j < 2; ++j) {
        fourier::derivative(*comps[m], der, ny, ny, j);
        fft2(der.data(), vals.data(), ny, ny, false);
        dchi[m][j].resize(nodes_y);
        for (std::size_t i = 0; i < nodes_y; ++i) dchi[m][j][i] = vals[i].real();
      }
    }
  }

  // Z-mean fluxes accumulated over Y nodes: mf[i][m].
  std::vector<double> mf[2][2];
  for (auto& row : mf)
    for (auto& v : row) v.assign(nodes_y, 0.0);

  cvec block(nz_sq), der(nz_sq), padded(mz_sq), dvals[2][2], fhat[2][2];
  for (auto& row : dvals)
    for (auto& v : row) v.resize(mz_sq);
  for (auto& row : fhat)
    for (auto& v : row) v.resize(mz_sq);

  const cvec* eta_comps[2] = {&x.eta1, &x.eta2};
  cvec* out_eta[2] = {&out.eta1, &out.eta2};
  const double inv_mz_sq = 1.0 / static_cast<double>(mz_sq);

  for (std::size_t p = 0; p < nodes_y; ++p) {
    for (int m = 0; m < 2; ++m) {
      std::copy_n(eta_comps[m]->begin() + p * nz_sq, nz_sq, block.begin());
      for (int j = 0; j < 2; ++j) {
        fourier::derivative(block, der, nz, nz, j);
        fourier::pad_spectrum(der, nz, padded, mzn);
        fft2(padded.data(), dvals[m][j].data(), mzn, mzn, false);
      }
    }
    const double* a11 = ctx_.a[0].data() + p * mz_sq;
    const double* a12 = ctx_.a[1].data() + p * mz_sq;
    const double* a22 = ctx_.a[2].data() + p * mz_sq;
    for (int m = 0; m < 2; ++m) {
      // fhat reused first as nodal flux storage, then transformed in place.
      for (std::size_t q = 0; q < mz_sq; ++q) {
        const double g1 = dchi[m][0][p] + dvals[m][0][q].real();
        const double g2 = dchi[m][1][p] + dvals[m][1][q].real();
        fhat[m][0][q] = a11[q] * g1 + a12[q] * g2;
        fhat[m][1][q] = a12[q] * g1 + a22[q] * g2;
      }
      for (int i = 0; i < 2; ++i) {
        fft2(fhat[m][i].data(), fhat[m][i].data(), mzn, mzn, true);
        mf[i][m][p] = fhat[m][i][0].real() * inv_mz_sq;
      }
      // out.eta^m(mode) = -sum_i i*2pi*mode_i Fhat_i(mode), truncated to nz.
      cvec& dst = *out_eta[m];
      const int kmax = nz / 2 - 1;
      for (int k1 = -kmax; k1 <= kmax; ++k1) {
        for (int k2 = -kmax; k2 <= kmax; ++k2) {
          const std::size_t src_idx =
              static_cast<std::size_t>(fourier::index_of(k1, mzn)) * mzn +
              fourier::index_of(k2, mzn);
          const std::complex<double> f1 = fhat[m][0][src_idx] * inv_mz_sq;
          const std::complex<double> f2 = fhat[m][1][src_idx] * inv_mz_sq;
          const std::complex<double> div =
              std::complex<double>(0.0, kTwoPi) * (double(k1) * f1 + double(k2) * f2);
          dst[p * nz_sq + static_cast<std::size_t>(fourier::index_of(k1, nz)) * nz +
              fourier::index_of(k2, nz)] = -div;
        }
      }
    }
  }

  // chi residual: out.chi^m(k) = -sum_i i*2pi*k_i mfhat[i][m](k).
  {
    cvec mfhat(nodes_y), tmp(nodes_y);
    cvec* out_chi[2] = {&out.chi1, &out.chi2};
    const double inv_ny_sq = 1.0 / static_cast<double>(nodes_y);
    for (int m = 0; m < 2; ++m) {
      std::fill(out_chi[m]->begin(), out_chi[m]->end(), std::complex<double>(0.0));
      for (int i = 0; i < 2; ++i) {
        for (std::size_t idx = 0; idx < nodes_y; ++idx) tmp[idx] = mf[i][m][idx];
        fft2(tmp.data(), mfhat.data(), ny, ny, true);
        for (int a1 = 0; a1 < ny; ++a1) {
          const double k1 = fourier::mode_of(a1, ny);
          for (int a2 = 0; a2 < ny; ++a2) {
            const double k2 = fourier::mode_of(a2, ny);
            const double ki = i == 0 ? k1 : k2;
            const std::size_t idx = static_cast<std::size_t>(a1) * ny + a2;
            (*out_chi[m])[idx] -=
                std::complex<double>(0.0, kTwoPi * ki) * mfhat[idx] * inv_ny_sq;
          }
        }
      }
    }
  }
  project(out);
}

void CoupledOperator::build_rhs(CellIndex idx, CellVec& rhs) const {
  const int ny = ctx_.n_y, nz = ctx_.n_z, mzn = ctx_.mz;
  const std::size_t nodes_y = ctx_.ny2(), nz_sq = ctx_.nz2(), mz_sq = ctx_.mz2();
  const int i0 = idx.i - 1, k0 = idx.k - 1;
  alloc(rhs);
  cvec* rhs_eta = k0 == 0 ? &rhs.eta1 : &rhs.eta2;
  cvec* rhs_chi = k0 == 0 ? &rhs.chi1 : &rhs.chi2;

  // Z-mean of the coefficient row i0 per Y node.
  std::vector<double> maz[2];
  maz[0].assign(nodes_y, 0.0);
  maz[1].assign(nodes_y, 0.0);

  cvec avals(mz_sq), ahat(mz_sq);
  const double inv_mz_sq = 1.0 / static_cast<double>(mz_sq);
  for (std::size_t p = 0; p < nodes_y; ++p) {
    cvec lhat[2];
    for (int l = 0; l < 2; ++l) {
      const double* src = ctx_.a[centry(i0, l)].data() + p * mz_sq;
      for (std::size_t q = 0; q < mz_sq; ++q) avals[q] = src[q];
      fft2(avals.data(), ahat.data(), mzn, mzn, true);
      for (auto& c : ahat) c *= inv_mz_sq;
      lhat[l] = ahat;
      maz[l][p] = ahat[0].real();
    }
    const int kmax = nz / 2 - 1;
    for (int k1 = -kmax; k1 <= kmax; ++k1) {
      for (int k2 = -kmax; k2 <= kmax; ++k2) {
        const std::size_t src_idx = static_cast<std::size_t>(fourier::index_of(k1, mzn)) * mzn +
                                    fourier::index_of(k2, mzn);
        const std::complex<double> div =
            std::complex<double>(0.0, kTwoPi) *
            (double(k1) * lhat[0][src_idx] + double(k2) * lhat[1][src_idx]);
        (*rhs_eta)[p * nz_sq + static_cast<std::size_t>(fourier::index_of(k1, nz)) * nz +
                   fourier::index_of(k2, nz)] = -div;
      }
    }
  }

  cvec mhat(nodes_y), tmp(nodes_y);
  const double inv_ny_sq = 1.0 / static_cast<double>(nodes_y);
  for (int l = 0; l < 2; ++l) {
    for (std::size_t p = 0; p < nodes_y; ++p) tmp[p] = maz[l][p];
    fft2(tmp.data(), mhat.data(), ny, ny, true);
    for (int a1 = 0; a1 < ny; ++a1) {
      const double k1 = fourier::mode_of(a1, ny);
      for (int a2 = 0; a2 < ny; ++a2) {
        const double k2 = fourier::mode_of(a2, ny);
        const double kl = l == 0 ? k1 : k2;
        const std::size_t s = static_cast<std::size_t>(a1) * ny + a2;
        (*rhs_chi)[s] -= std::complex<double>(0.0, kTwoPi * kl) * mhat[s] * inv_ny_sq;
      }
    }
  }
  project(rhs);
}

void entry_to_vec(const CellContext& ctx, const CellEntry& e, CellVec& v) {
  fourier::to_spectral(e.chi.comp1, v.chi1, ctx.n_y, ctx.n_y);
  fourier::to_spectral(e.chi.comp2, v.chi2, ctx.n_y, ctx.n_y);
  const std::size_t nz_sq = ctx.nz2();
  v.eta1.resize(ctx.ny2() * nz_sq);
  v.eta2.resize(ctx.ny2() * nz_sq);
  std::vector<double> block(nz_sq);
  cvec hat;
  for (std::size_t p = 0; p < ctx.ny2(); ++p) {
    std::copy_n(e.eta.comp1.begin() + p * nz_sq, nz_sq, block.begin());
    fourier::to_spectral(block, hat, ctx.n_z, ctx.n_z);
    std::copy_n(hat.begin(), nz_sq, v.eta1.begin() + p * nz_sq);
    std::copy_n(e.eta.comp2.begin() + p * nz_sq, nz_sq, block.begin());
    fourier::to_spectral(block, hat, ctx.n_z, ctx.n_z);
    std::copy_n(hat.begin(), nz_sq, v.eta2.begin() + p * nz_sq);
  }
}

void vec_to_entry(const CellContext& ctx, const CellVec& v, CellEntry& e) {
  e.chi.n = ctx.n_y;
  fourier::to_values(v.chi1, e.chi.comp1, ctx.n_y, ctx.n_y);
  fourier::to_values(v.chi2, e.chi.comp2, ctx.n_y, ctx.n_y);
  e.eta.n_y = ctx.n_y;
  e.eta.n_z = ctx.n_z;
  const std::size_t nz_sq = ctx.nz2();
  e.eta.comp1.resize(ctx.ny2() * nz_sq);
  e.eta.comp2.resize(ctx.ny2() * nz_sq);
  cvec hat(nz_sq);
  std::vector<double> block;
  for (std::size_t p = 0; p < ctx.ny2(); ++p) {
    std::copy_n(v.eta1.begin() + p * nz_sq, nz_sq, hat.begin());
    fourier::to_values(hat, block, ctx.n_z, ctx.n_z);
    std::copy_n(block.begin(), nz_sq, e.eta.comp1.begin() + p * nz_sq);
    std::copy_n(v.eta2.begin() + p * nz_sq, nz_sq, hat.begin());
    fourier::to_values(hat, block, ctx.n_z, ctx.n_z);
    std::copy_n(block.begin(), nz_sq, e.eta.comp2.begin() + p * nz_sq);
  }
}

double cell_form(const CellContext& ctx, const CellVec& u, const CellVec& v) {
  const int ny = ctx.n_y, nz = ctx.n_z, mzn = ctx.mz;
  const std::size_t nodes_y = ctx.ny2(), nz_sq = ctx.nz2(), mz_sq = ctx.mz2();

  auto chi_gradients = [&](const CellVec& x, std::vector<double> dchi[2][2]) {
    cvec der(nodes_y), vals(nodes_y);
    const cvec* comps[2] = {&x.chi1, &x.chi2};
    for (int m = 0; m < 2; ++m)
      for (int j = 0; j < 2; ++j) {
        fourier::derivative(*comps[m], der, ny, ny, j);
        fft2(der.data(), vals.data(), ny, ny, false);
        dchi[m][j].resize(nodes_y);
        for (std::size_t i = 0; i < nodes_y; ++i) dchi[m][j][i] = vals[i].real();
      }
  };
  std::vector<double> du[2][2], dv[2][2];
  chi_gradients(u, du);
  chi_gradients(v, dv);

  cvec block(nz_sq), der(nz_sq), padded(mz_sq);
  cvec gu[2][2], gv[2][2];
  for (auto& row : gu)
    for (auto& g : row) g.resize(mz_sq);
  for (auto& row : gv)
    for (auto& g : row) g.resize(mz_sq);

  const cvec* ue[2] = {&u.eta1, &u.eta2};
  const cvec* ve[2] = {&v.eta1, &v.eta2};
  double acc = 0.0;
  for (std::size_t p = 0; p < nodes_y; ++p) {
    for (int m = 0; m < 2; ++m) {
      for (int j = 0; j < 2; ++j) {
        std::copy_n(ue[m]->begin() + p * nz_sq, nz_sq, block.begin());
        fourier::derivative(block, der, nz, nz, j);
        fourier::pad_spectrum(der, nz, padded, mzn);
        fft2(padded.data(), gu[m][j].data(), mzn, mzn, false);
        std::copy_n(ve[m]->begin() + p * nz_sq, nz_sq, block.begin());
        fourier::derivative(block, der, nz, nz, j);
        fourier::pad_spectrum(der, nz, padded, mzn);
        fft2(padded.data(), gv[m][j].data(), mzn, mzn, false);
      }
    }
    const double* a11 = ctx.a[0].data() + p * mz_sq;
    const double* a12 = ctx.a[1].data() + p * mz_sq;
    const double* a22 = ctx.a[2].data() + p * mz_sq;
    double local = 0.0;
    for (int m = 0; m < 2; ++m) {
      for (std::size_t q = 0; q < mz_sq; ++q) {
        const double gu1 = du[m][0][p] + gu[m][0][q].real();
        const double gu2 = du[m][1][p] + gu[m][1][q].real();
        const double gv1 = dv[m][0][p] + gv[m][0][q].real();
        const double gv2 = dv[m][1][p] + gv[m][1][q].real();
        local += a11[q] * gu1 * gv1 + a12[q] * (gu1 * gv2 + gu2 * gv1) + a22[q] * gu2 * gv2;
      }
    }
    acc += local;
  }
  return acc / (static_cast<double>(nodes_y) * static_cast<double>(mz_sq));
}

double cell_rhs_functional(const CellContext& ctx, CellIndex idx, const CellVec& v) {
  CoupledOperator op(ctx);
  CellVec rhs;
  op.build_rhs(idx, rhs);
  return op.dot(rhs, v);
}

double chi_gradient_energy(const CellContext& ctx, const CellVec& v) {
  double acc = 0.0;
  const int ny = ctx.n_y;
  for (int a1 = 0; a1 < ny; ++a1) {
    const double k1 = fourier::mode_of(a1, ny);
    for (int a2 = 0; a2 < ny; ++a2) {
      const double k2 = fourier::mode_of(a2, ny);
      const double w = kTwoPi * kTwoPi * (k1 * k1 + k2 * k2);
      const std::size_t idx = static_cast<std::size_t>(a1) * ny + a2;
      acc += w * (std::norm(v.chi1[idx]) + std::norm(v.chi2[idx]));
    }
  }
  return acc;
}

double eta_gradient_energy(const CellContext& ctx, const CellVec& v) {
  double acc = 0.0;
  const int nz = ctx.n_z;
  const std::size_t nz_sq = ctx.nz2();
  for (std::size_t p = 0; p < ctx.ny2(); ++p) {
    for (int a1 = 0; a1 < nz; ++a1) {
      const double k1 = fourier::mode_of(a1, nz);
      for (int a2 = 0; a2 < nz; ++a2) {
        const double k2 = fourier::mode_of(a2, nz);
        const double w = kTwoPi * kTwoPi * (k1 * k1 + k2 * k2);
        const std::size_t idx = p * nz_sq + static_cast<std::size_t>(a1) * nz + a2;
        acc += w * (std::norm(v.eta1[idx]) + std::norm(v.eta2[idx]));
      }
    }
  }
  return acc / static_cast<double>(ctx.ny2());
}

namespace {

CellEntry solve_with_ctx(const CellContext& ctx, CellIndex idx, double tol, int max_iter) {
  if (tol <= 0.0) throw ConfigError("solve_cell_coupled: tol must be positive");
  CoupledOperator op(ctx);
  if (max_iter <= 0) max_iter = 10 * (ctx.n_y * ctx.n_y + ctx.n_z * ctx.n_z);

  CellVec b;
  op.build_rhs(idx, b);
  const double bnorm = std::sqrt(op.dot(b, b));

  CellEntry e;
  e.idx = idx;
  CellVec x;
  op.alloc(x);
  // Symmetric fields leave some unit forcings with a structurally zero rhs;
  // what survives the projection is FFT roundoff, so compare against the
  // coefficient scale rather than exact zero before iterating on noise.
  if (bnorm <= 1e-13 * kTwoPi * ctx.sup_a) {
    vec_to_entry(ctx, x, e);
    e.residual = 0.0;
    e.iterations = 0;
    return e;
  }

  CellVec r = b, z, p, Ap;
  op.precondition(r, z);
  p = z;
  double rz = op.dot(r, z);
  double rel = 1.0;
  int it = 0;
  for (; it < max_iter; ++it) {
    op.apply(p, Ap);
    const double pAp = op.dot(p, Ap);
    if (!(pAp > 0.0))
      throw NumericError("cell solver: negative curvature (p.Ap = " + io::fmt_double(pAp) +
                         "), coefficient field not coercive on the discrete space");
    const double alpha = rz / pAp;
    for (std::size_t i = 0; i < x.chi1.size(); ++i) {
      x.chi1[i] += alpha * p.chi1[i];
      x.chi2[i] += alpha * p.chi2[i];
      r.chi1[i] -= alpha * Ap.chi1[i];
      r.chi2[i] -= alpha * Ap.chi2[i];
    }
    for (std::size_t i = 0; i < x.eta1.size(); ++i) {
      x.eta1[i] += alpha * p.eta1[i];
      x.eta2[i] += alpha * p.eta2[i];
      r.eta1[i] -= alpha * Ap.eta1[i];
      r.eta2[i] -= alpha * Ap.eta2[i];
    }
    rel = std::sqrt(op.dot(r, r)) / bnorm;
    if (rel <= tol) {
      ++it;
      break;
    }
    op.precondition(r, z);
    const double rz_new = op.dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < p.chi1.size(); ++i) {
      p.chi1[i] = z.chi1[i] + beta * p.chi1[i];
      p.chi2[i] = z.chi2[i] + beta * p.chi2[i];
    }
    for (std::size_t i = 0; i < p.eta1.size(); ++i) {
      p.eta1[i] = z.eta1[i] + beta * p.eta1[i];
      p.eta2[i] = z.eta2[i] + beta * p.eta2[i];
    }
  }
  if (rel > tol)
    throw NumericError("cell solver: no convergence after " + std::to_string(max_iter) +
                       " iterations, residual " + io::fmt_double(rel));
  vec_to_entry(ctx, x, e);
  e.residual = rel;
  e.iterations = it;
  return e;
}

}  // namespace

CellEntry solve_cell_coupled(const coeff::CellSampling& s, CellIndex idx, double tol,
                             int max_iter) {
  CellContext ctx(s);
  return solve_with_ctx(ctx, idx, tol, max_iter);
}

CellSolution solve_all(const coeff::CellSampling& s, double tol, int threads) {
  CellContext ctx(s);
  CellSolution sol;
  sol.sampling = s;
  sol.tol = tol;
  const CellIndex order[4] = {{1, 1}, {1, 2}, {2, 1}, {2, 2}};
  if (threads > 1) {
    std::vector<std::thread> pool;
    std::array<std::exception_ptr, 4> errors{};
    for (int t = 0; t < 4; ++t) {
      pool.emplace_back([&, t]() {
        try {
          sol.entries[t] = solve_with_ctx(ctx, order[t], tol, 0);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors)
      if (err) std::rethrow_exception(err);
  } else {
    for (int t = 0; t < 4; ++t) sol.entries[t] = solve_with_ctx(ctx, order[t], tol, 0);
  }
  return sol;
}

double divergence_defect(const PeriodicVectorField2& f) {
  cvec h1, h2, div;
  fourier::to_spectral(f.comp1, h1, f.n, f.n);
  fourier::to_spectral(f.comp2, h2, f.n, f.n);
  div.resize(h1.size());
  for (int a1 = 0; a1 < f.n; ++a1) {
    const double k1 = fourier::mode_of(a1, f.n);
    for (int a2 = 0; a2 < f.n; ++a2) {
      const double k2 = fourier::mode_of(a2, f.n);
      const std::size_t idx = static_cast<std::size_t>(a1) * f.n + a2;
      div[idx] = std::complex<double>(0.0, kTwoPi) * (k1 * h1[idx] + k2 * h2[idx]);
    }
  }
  std::vector<double> vals;
  fourier::to_values(div, vals, f.n, f.n);
  double sup = 0.0;
  for (double v : vals) sup = std::max(sup, std::abs(v));
  return sup;
}

double divergence_defect_eta(const EtaField& f) {
  const std::size_t nz_sq = static_cast<std::size_t>(f.n_z) * f.n_z;
  PeriodicVectorField2 slice;
  slice.n = f.n_z;
  slice.comp1.resize(nz_sq);
  slice.comp2.resize(nz_sq);
  double sup = 0.0;
  const std::size_t nodes_y = static_cast<std::size_t>(f.n_y) * f.n_y;
  for (std::size_t p = 0; p < nodes_y; ++p) {
    std::copy_n(f.comp1.begin() + p * nz_sq, nz_sq, slice.comp1.begin());
    std::copy_n(f.comp2.begin() + p * nz_sq, nz_sq, slice.comp2.begin());
    sup = std::max(sup, divergence_defect(slice));
  }
  return sup;
}

namespace {

template <typename T>
void put(std::string& buf, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  buf.append(p, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw ConfigError("cell solution file truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

void put_array(std::string& buf, const std::vector<double>& v) {
  buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

void take_array(const std::string& buf, std::size_t& pos, std::vector<double>& v,
                std::size_t count) {
  if (pos + count * sizeof(double) > buf.size()) throw ConfigError("cell solution file truncated");
  v.resize(count);
  std::memcpy(v.data(), buf.data() + pos, count * sizeof(double));
  pos += count * sizeof(double);
}

}  // namespace

void dump_cell_solution(const CellSolution& sol, const std::string& path) {
  std::string buf;
  buf.append("RHCS");
  put<std::uint32_t>(buf, 1u);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(sol.sampling.n_y));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(sol.sampling.n_z));
  put<double>(buf, sol.tol);
  put<double>(buf, sol.sampling.alpha);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(sol.sampling.field_tag.size()));
  buf.append(sol.sampling.field_tag);
  for (const auto& e : sol.entries) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(e.idx.i));
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(e.idx.k));
    put<double>(buf, e.residual);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(e.iterations));
    put_array(buf, e.chi.comp1);
    put_array(buf, e.chi.comp2);
    put_array(buf, e.eta.comp1);
    put_array(buf, e.eta.comp2);
  }
  io::atomic_write(path, buf);
}

CellSolution load_cell_solution(const std::string& path) {
  const std::string buf = io::read_file(path);
  std::size_t pos = 0;
  if (buf.size() < 4 || buf.compare(0, 4, "RHCS") != 0)
    throw ConfigError("not a cell solution file: " + path);
  pos = 4;
  const auto version = take<std::uint32_t>(buf, pos);
  if (version != 1u) throw ConfigError("unsupported cell solution version");
  CellSolution sol;
  sol.sampling.n_y = static_cast<int>(take<std::uint32_t>(buf, pos));
  sol.sampling.n_z = static_cast<int>(take<std::uint32_t>(buf, pos));
  sol.tol = take<double>(buf, pos);
  sol.sampling.alpha = take<double>(buf, pos);
  const auto tag_len = take<std::uint32_t>(buf, pos);
  if (pos + tag_len > buf.size()) throw ConfigError("cell solution file truncated");
  sol.sampling.field_tag = buf.substr(pos, tag_len);
  pos += tag_len;
  const std::size_t ny_sq = static_cast<std::size_t>(sol.sampling.n_y) * sol.sampling.n_y;
  const std::size_t nz_sq = static_cast<std::size_t>(sol.sampling.n_z) * sol.sampling.n_z;
  for (auto& e : sol.entries) {
    e.idx.i = static_cast<int>(take<std::uint32_t>(buf, pos));
    e.idx.k = static_cast<int>(take<std::uint32_t>(buf, pos));
    e.residual = take<double>(buf, pos);
    e.iterations = static_cast<int>(take<std::uint32_t>(buf, pos));
    e.chi.n = sol.sampling.n_y;
    take_array(buf, pos, e.chi.comp1, ny_sq);
    take_array(buf, pos, e.chi.comp2, ny_sq);
    e.eta.n_y = sol.sampling.n_y;
    e.eta.n_z = sol.sampling.n_z;
    take_array(buf, pos, e.eta.comp1, ny_sq * nz_sq);
    take_array(buf, pos, e.eta.comp2, ny_sq * nz_sq);
  }
  return sol;
}

}  // namespace rehom::cells
