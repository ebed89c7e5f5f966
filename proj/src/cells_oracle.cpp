#include <cmath>
#include <complex>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "rehom/cells.hpp"
#include "rehom/errors.hpp"

// Independent dense-Galerkin oracle. Same trial space as the iterative path
// (all modes 0 < max|k_i| <= n/2 - 1, real fields), but expressed in an
// orthonormal cos/sin basis with the divergence constraints enforced by
// explicit Lagrange multipliers, assembled into one sparse saddle-point
// system and factorized directly. Test-only; guarded to n <= 8.

namespace rehom::cells {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;
constexpr double kSqrt2 = 1.4142135623730951;

inline int centry(int i, int l) { return i + l; }

struct Mode {
  int k1, k2;
};

// Half-space mode list: k1 > 0, or k1 == 0 and k2 > 0.
std::vector<Mode> half_modes(int n) {
  const int kmax = n / 2 - 1;
  std::vector<Mode> out;
  for (int k1 = 0; k1 <= kmax; ++k1)
    for (int k2 = -kmax; k2 <= kmax; ++k2)
      if (k1 > 0 || (k1 == 0 && k2 > 0)) out.push_back({k1, k2});
  return out;
}

// Gradient tables of the orthonormal basis {sqrt2 cos theta_t, sqrt2 sin theta_t}
// at the uniform nodes of an m x m grid; G[l][node][2t] = d_l c_t, [2t+1] = d_l s_t.
void gradient_table(const std::vector<Mode>& modes, int m, std::vector<double> G[2]) {
  const std::size_t nodes = static_cast<std::size_t>(m) * m;
  const std::size_t nb = 2 * modes.size();
  G[0].assign(nodes * nb, 0.0);
  G[1].assign(nodes * nb, 0.0);
  for (int p1 = 0; p1 < m; ++p1) {
    for (int p2 = 0; p2 < m; ++p2) {
      const std::size_t node = static_cast<std::size_t>(p1) * m + p2;
      for (std::size_t t = 0; t < modes.size(); ++t) {
        const double th = kTwoPi * (double(modes[t].k1) * p1 + double(modes[t].k2) * p2) / m;
        const double c = std::cos(th), s = std::sin(th);
        const double k[2] = {double(modes[t].k1), double(modes[t].k2)};
        for (int l = 0; l < 2; ++l) {
          G[l][node * nb + 2 * t] = -kTwoPi * k[l] * kSqrt2 * s;
          G[l][node * nb + 2 * t + 1] = kTwoPi * k[l] * kSqrt2 * c;
        }
      }
    }
  }
}

}  // namespace

std::array<CellEntry, 4> solve_cell_dense_oracle_all(const coeff::CellSampling& s) {
  if (s.n_y > 8 || s.n_z > 8)
    throw ConfigError("dense cell oracle limited to n_y, n_z <= 8 (got " +
                      std::to_string(s.n_y) + ", " + std::to_string(s.n_z) + ")");
  CellContext ctx(s);
  const int ny = ctx.n_y, nz = ctx.n_z, mzn = ctx.mz;
  const std::size_t nodes_y = ctx.ny2(), mz_sq = ctx.mz2();

  const std::vector<Mode> my = half_modes(ny), mzm = half_modes(nz);
  const std::size_t nby = 2 * my.size(), nbz = 2 * mzm.size();
  std::vector<double> Gy[2], Gz[2];
  gradient_table(my, ny, Gy);
  gradient_table(mzm, mzn, Gz);

  // Unknown layout: chi dofs, then eta dofs per node, then multipliers.
  const std::size_t off_chi = 0;
  const std::size_t off_eta = off_chi + 2 * nby;
  const std::size_t off_lchi = off_eta + nodes_y * 2 * nbz;
  const std::size_t off_leta = off_lchi + nby;
  const std::size_t N = off_leta + nodes_y * nbz;

  const double wy = 1.0 / static_cast<double>(nodes_y);
  const double wz = wy / static_cast<double>(mz_sq);

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(nodes_y * (2 * nbz * nbz * 2 + 4 * nby * nbz) + 4 * nby * nby);

  auto chi_dof = [&](int m, std::size_t b) { return off_chi + m * nby + b; };
  auto eta_dof = [&](std::size_t p, int m, std::size_t b) {
    return off_eta + p * 2 * nbz + m * nbz + b;
  };

  // Z-means of the coefficient per node, then the chi-chi block.
  std::vector<double> maz[3];
  for (auto& v : maz) v.assign(nodes_y, 0.0);
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < nodes_y; ++p) {
      const double* a = ctx.a[c].data() + p * mz_sq;
      double acc = 0.0;
      for (std::size_t q = 0; q < mz_sq; ++q) acc += a[q];
      maz[c][p] = acc / static_cast<double>(mz_sq);
    }
  {
    std::vector<double> Sy(nby * nby, 0.0);
    for (std::size_t p = 0; p < nodes_y; ++p) {
      const double m11 = maz[0][p], m12 = maz[1][p], m22 = maz[2][p];
      const double* g1 = Gy[0].data() + p * nby;
      const double* g2 = Gy[1].data() + p * nby;
      for (std::size_t bv = 0; bv < nby; ++bv) {
        const double f1 = m11 * g1[bv] + m12 * g2[bv];
        const double f2 = m12 * g1[bv] + m22 * g2[bv];
        for (std::size_t bu = 0; bu < nby; ++bu)
          Sy[bv * nby + bu] += f1 * g1[bu] + f2 * g2[bu];
      }
    }
    for (int m = 0; m < 2; ++m)
      for (std::size_t bv = 0; bv < nby; ++bv)
        for (std::size_t bu = 0; bu < nby; ++bu) {
          const double val = wy * Sy[bv * nby + bu];
          if (val != 0.0) trip.emplace_back(chi_dof(m, bv), chi_dof(m, bu), val);
        }
  }

  // Per-node eta blocks and chi-eta coupling; W[i] doubles as the eta rhs row.
  std::vector<std::vector<double>> W_all(nodes_y);  // [p][i*nbz + b]
  {
    std::vector<double> Sz(nbz * nbz), W(2 * nbz), f1row(mz_sq), f2row(mz_sq);
    for (std::size_t p = 0; p < nodes_y; ++p) {
      const double* a11 = ctx.a[0].data() + p * mz_sq;
      const double* a12 = ctx.a[1].data() + p * mz_sq;
      const double* a22 = ctx.a[2].data() + p * mz_sq;
      std::fill(Sz.begin(), Sz.end(), 0.0);
      std::fill(W.begin(), W.end(), 0.0);
      for (std::size_t bu = 0; bu < nbz; ++bu) {
        for (std::size_t q = 0; q < mz_sq; ++q) {
          const double g1 = Gz[0][q * nbz + bu], g2 = Gz[1][q * nbz + bu];
          f1row[q] = a11[q] * g1 + a12[q] * g2;
          f2row[q] = a12[q] * g1 + a22[q] * g2;
        }
        for (std::size_t q = 0; q < mz_sq; ++q) {
          W[0 * nbz + bu] += f1row[q];
          W[1 * nbz + bu] += f2row[q];
        }
        for (std::size_t bv = 0; bv <= bu; ++bv) {
          double acc = 0.0;
          for (std::size_t q = 0; q < mz_sq; ++q)
            acc += Gz[0][q * nbz + bv] * f1row[q] + Gz[1][q * nbz + bv] * f2row[q];
          Sz[bv * nbz + bu] = acc;
          Sz[bu * nbz + bv] = acc;
        }
      }
      for (double& v : W) v *= wz;
      W_all[p] = W;
      for (int m = 0; m < 2; ++m) {
        for (std::size_t bv = 0; bv < nbz; ++bv)
          for (std::size_t bu = 0; bu < nbz; ++bu) {
            const double val = wz * Sz[bv * nbz + bu];
            if (val != 0.0) trip.emplace_back(eta_dof(p, m, bv), eta_dof(p, m, bu), val);
          }
        const double* g1 = Gy[0].data() + p * nby;
        const double* g2 = Gy[1].data() + p * nby;
        for (std::size_t bc = 0; bc < nby; ++bc) {
          for (std::size_t bu = 0; bu < nbz; ++bu) {
            const double val = g1[bc] * W[0 * nbz + bu] + g2[bc] * W[1 * nbz + bu];
            if (val != 0.0) {
              trip.emplace_back(chi_dof(m, bc), eta_dof(p, m, bu), val);
              trip.emplace_back(eta_dof(p, m, bu), chi_dof(m, bc), val);
            }
          }
        }
      }
    }
  }

  // Divergence constraints: for mode t the s_t row kills the cos dofs and the
  // c_t row the sin dofs.
  for (std::size_t t = 0; t < my.size(); ++t) {
    const double k[2] = {double(my[t].k1), double(my[t].k2)};
    for (int m = 0; m < 2; ++m) {
      if (k[m] == 0.0) continue;
      trip.emplace_back(off_lchi + 2 * t, chi_dof(m, 2 * t), -kTwoPi * k[m]);
      trip.emplace_back(chi_dof(m, 2 * t), off_lchi + 2 * t, -kTwoPi * k[m]);
      trip.emplace_back(off_lchi + 2 * t + 1, chi_dof(m, 2 * t + 1), kTwoPi * k[m]);
      trip.emplace_back(chi_dof(m, 2 * t + 1), off_lchi + 2 * t + 1, kTwoPi * k[m]);
    }
  }
  for (std::size_t p = 0; p < nodes_y; ++p) {
    for (std::size_t t = 0; t < mzm.size(); ++t) {
      const double k[2] = {double(mzm[t].k1), double(mzm[t].k2)};
      const std::size_t row = off_leta + p * nbz;
      for (int m = 0; m < 2; ++m) {
        if (k[m] == 0.0) continue;
        trip.emplace_back(row + 2 * t, eta_dof(p, m, 2 * t), -kTwoPi * k[m]);
        trip.emplace_back(eta_dof(p, m, 2 * t), row + 2 * t, -kTwoPi * k[m]);
        trip.emplace_back(row + 2 * t + 1, eta_dof(p, m, 2 * t + 1), kTwoPi * k[m]);
        trip.emplace_back(eta_dof(p, m, 2 * t + 1), row + 2 * t + 1, kTwoPi * k[m]);
      }
    }
  }

  Eigen::SparseMatrix<double> A(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  A.setFromTriplets(trip.begin(), trip.end());
  A.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.analyzePattern(A);
  lu.factorize(A);
  if (lu.info() != Eigen::Success)
    throw NumericError("dense cell oracle: saddle-point factorization failed");

  std::array<CellEntry, 4> out;
  const CellIndex order[4] = {{1, 1}, {1, 2}, {2, 1}, {2, 2}};
  for (int e = 0; e < 4; ++e) {
    const int i0 = order[e].i - 1, k0 = order[e].k - 1;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(N));
    for (std::size_t b = 0; b < nby; ++b) {
      double acc = 0.0;
      for (std::size_t p = 0; p < nodes_y; ++p)
        acc += maz[centry(i0, 0)][p] * Gy[0][p * nby + b] +
               maz[centry(i0, 1)][p] * Gy[1][p * nby + b];
      rhs[static_cast<Eigen::Index>(chi_dof(k0, b))] = wy * acc;
    }
    for (std::size_t p = 0; p < nodes_y; ++p)
      for (std::size_t b = 0; b < nbz; ++b)
        rhs[static_cast<Eigen::Index>(eta_dof(p, k0, b))] = W_all[p][i0 * nbz + b];

    Eigen::VectorXd sol = lu.solve(rhs);
    if (lu.info() != Eigen::Success) throw NumericError("dense cell oracle: solve failed");

    // Coefficients back to nodal fields through the complex spectrum.
    CellEntry& entry = out[e];
    entry.idx = order[e];
    cvec hat(nodes_y);
    auto fill_spectrum = [](cvec& h, int n, const std::vector<Mode>& modes,
                            const double* coef) {
      std::fill(h.begin(), h.end(), std::complex<double>(0.0));
      for (std::size_t t = 0; t < modes.size(); ++t) {
        const std::complex<double> v(coef[2 * t] / kSqrt2, -coef[2 * t + 1] / kSqrt2);
        h[static_cast<std::size_t>(fourier::index_of(modes[t].k1, n)) * n +
          fourier::index_of(modes[t].k2, n)] = v;
        h[static_cast<std::size_t>(fourier::index_of(-modes[t].k1, n)) * n +
          fourier::index_of(-modes[t].k2, n)] = std::conj(v);
      }
    };
    std::vector<double> coef(nby);
    entry.chi.n = ny;
    for (int m = 0; m < 2; ++m) {
      for (std::size_t b = 0; b < nby; ++b) coef[b] = sol[static_cast<Eigen::Index>(chi_dof(m, b))];
      fill_spectrum(hat, ny, my, coef.data());
      fourier::to_values(hat, m == 0 ? entry.chi.comp1 : entry.chi.comp2, ny, ny);
    }
    entry.eta.n_y = ny;
    entry.eta.n_z = nz;
    const std::size_t nz_sq = ctx.nz2();
    entry.eta.comp1.resize(nodes_y * nz_sq);
    entry.eta.comp2.resize(nodes_y * nz_sq);
    cvec zhat(nz_sq);
    std::vector<double> zvals, zcoef(nbz);
    for (std::size_t p = 0; p < nodes_y; ++p) {
      for (int m = 0; m < 2; ++m) {
        for (std::size_t b = 0; b < nbz; ++b)
          zcoef[b] = sol[static_cast<Eigen::Index>(eta_dof(p, m, b))];
        fill_spectrum(zhat, nz, mzm, zcoef.data());
        fourier::to_values(zhat, zvals, nz, nz);
        std::copy_n(zvals.begin(), nz_sq,
                    (m == 0 ? entry.eta.comp1 : entry.eta.comp2).begin() + p * nz_sq);
      }
    }
    entry.residual = 0.0;
    entry.iterations = 0;
  }
  return out;
}

CellEntry solve_cell_dense_oracle(const coeff::CellSampling& s, CellIndex idx) {
  auto all = solve_cell_dense_oracle_all(s);
  return all[(idx.i - 1) * 2 + (idx.k - 1)];
}

}  // namespace rehom::cells
