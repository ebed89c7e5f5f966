#include "rehom/effective.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>
#include <vector>

#include "rehom/errors.hpp"
#include "rehom/fourier.hpp"
#include "rehom/io_util.hpp"

namespace rehom::effective {

using fourier::cvec;

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

// Coefficient entry index for the symmetric 2x2 matrix: a_{l l'} = a[l + l'].
constexpr int centry(int l, int lp) { return l + lp; }

void require_consistent(const cells::CellSolution& sol, const coeff::CellSampling& s) {
  const auto& m = sol.sampling;
  if (m.field_tag != s.field_tag || m.n_y != s.n_y || m.n_z != s.n_z || m.alpha != s.alpha) {
    std::ostringstream os;
    os << "effective tensor: cell solution metadata (" << m.field_tag << ", " << m.n_y << "x"
       << m.n_z << ") does not match the sampling (" << s.field_tag << ", " << s.n_y << "x"
       << s.n_z << ")";
    throw InvariantError(os.str());
  }
}

Eigen::Matrix4d voigt_matrix(const std::array<double, 16>& q) {
  Eigen::Matrix4d M;
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k)
      for (int j = 0; j < 2; ++j)
        for (int h = 0; h < 2; ++h) M(i * 2 + k, j * 2 + h) = q[tensor_index(i, j, k, h)];
  return M;
}

double voigt_min_eig(const std::array<double, 16>& q) {
  const Eigen::Matrix4d M = voigt_matrix(q);
  const Eigen::Matrix4d S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(S);
  return es.eigenvalues().minCoeff();
}

void finish(EffectiveTensor& t, const coeff::CellSampling& s) {
  t.field_tag = s.field_tag;
  t.n_y = s.n_y;
  t.n_z = s.n_z;
  t.alpha0 = voigt_min_eig(t.q);
  if (!(t.alpha0 > 0.0))
    throw InvariantError("effective tensor lost coercivity: min Voigt eigenvalue " +
                         io::fmt_double(t.alpha0));
}

}  // namespace

EffectiveTensor assemble_q(const cells::CellSolution& sol, const coeff::CellSampling& s) {
  require_consistent(sol, s);
  const cells::CellContext ctx(s);
  const cells::CoupledOperator op(ctx);

  std::array<cells::CellVec, 4> vec, rhs;
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k) {
      const int e = i * 2 + k;
      cells::entry_to_vec(ctx, sol.entry(i + 1, k + 1), vec[e]);
      op.build_rhs({i + 1, k + 1}, rhs[e]);
    }

  EffectiveTensor t;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int h = 0; h < 2; ++h)
          t.q[tensor_index(i, j, k, h)] =
              (k == h ? ctx.mean_a[centry(i, j)] : 0.0) - op.dot(rhs[i * 2 + k], vec[j * 2 + h]);
  finish(t, s);
  return t;
}

EffectiveTensor assemble_q_energy_form(const cells::CellSolution& sol,
                                       const coeff::CellSampling& s) {
  require_consistent(sol, s);
  const cells::CellContext ctx(s);
  const int ny = ctx.n_y, nz = ctx.n_z, mz = ctx.mz;
  const std::size_t ny_sq = ctx.ny2(), nz_sq = ctx.nz2(), mz_sq = ctx.mz2();

  std::array<cells::CellVec, 4> vec;
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k)
      cells::entry_to_vec(ctx, sol.entry(i + 1, k + 1), vec[i * 2 + k]);

  // Slow-scale gradient values d chi^m / d y_l at the y nodes, per entry.
  std::vector<double> dchi[4][2][2];
  {
    cvec dhat;
    std::vector<double> vals;
    for (int e = 0; e < 4; ++e)
      for (int m = 0; m < 2; ++m) {
        const cvec& hat = m == 0 ? vec[e].chi1 : vec[e].chi2;
        for (int l = 0; l < 2; ++l) {
          fourier::derivative(hat, dhat, ny, ny, l);
          fourier::to_values(dhat, vals, ny, ny);
          dchi[e][m][l] = vals;
        }
      }
  }

  // Stream over y nodes: synthesize the fast-scale gradients on the
  // dealiased z grid and accumulate all sixteen pairings in one pass.
  double sums[4][4] = {};
  cvec slice(nz_sq), dhat, padded;
  std::vector<double> vals;
  std::vector<double> deta[4][2][2];
  for (std::size_t p = 0; p < ny_sq; ++p) {
    for (int e = 0; e < 4; ++e)
      for (int m = 0; m < 2; ++m) {
        const cvec& src = m == 0 ? vec[e].eta1 : vec[e].eta2;
        std::copy(src.begin() + p * nz_sq, src.begin() + (p + 1) * nz_sq, slice.begin());
        for (int l = 0; l < 2; ++l) {
          fourier::derivative(slice, dhat, nz, nz, l);
          fourier::pad_spectrum(dhat, nz, padded, mz);
          fourier::to_values(padded, vals, mz, mz);
          deta[e][m][l] = vals;
        }
      }
    const double* a0 = ctx.a[0].data() + p * mz_sq;
    const double* a1 = ctx.a[1].data() + p * mz_sq;
    const double* a2 = ctx.a[2].data() + p * mz_sq;
    for (std::size_t q = 0; q < mz_sq; ++q) {
      double g[4][2][2];
      for (int e = 0; e < 4; ++e) {
        const int ei = e / 2, ek = e % 2;
        for (int m = 0; m < 2; ++m)
          for (int l = 0; l < 2; ++l)
            g[e][m][l] = dchi[e][m][l][p] + deta[e][m][l][q] -
                         ((l == ei && m == ek) ? 1.0 : 0.0);
      }
      for (int e1 = 0; e1 < 4; ++e1)
        for (int e2 = e1; e2 < 4; ++e2) {
          double acc = 0.0;
          for (int m = 0; m < 2; ++m)
            acc += a0[q] * g[e1][m][0] * g[e2][m][0] +
                   a1[q] * (g[e1][m][0] * g[e2][m][1] + g[e1][m][1] * g[e2][m][0]) +
                   a2[q] * g[e1][m][1] * g[e2][m][1];
          sums[e1][e2] += acc;
        }
    }
  }

  const double w = 1.0 / (static_cast<double>(ny_sq) * static_cast<double>(mz_sq));
  EffectiveTensor t;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int h = 0; h < 2; ++h) {
          const int e1 = i * 2 + k, e2 = j * 2 + h;
          t.q[tensor_index(i, j, k, h)] = w * (e1 <= e2 ? sums[e1][e2] : sums[e2][e1]);
        }
  finish(t, s);
  return t;
}

TensorCheck check_tensor(const EffectiveTensor& t, const coeff::CoefficientField& f) {
  // Cell mean of the coefficient on a tensor quadrature grid, exact for the
  // builtin trigonometric families.
  const int n = 32;
  const double hstep = 1.0 / n;
  double mean[3] = {0.0, 0.0, 0.0};
  for (int p1 = 0; p1 < n; ++p1)
    for (int p2 = 0; p2 < n; ++p2)
      for (int q1 = 0; q1 < n; ++q1)
        for (int q2 = 0; q2 < n; ++q2) {
          const auto m = f.eval(-0.5 + p1 * hstep, -0.5 + p2 * hstep, -0.5 + q1 * hstep,
                                -0.5 + q2 * hstep);
          mean[0] += m.a11;
          mean[1] += m.a12;
          mean[2] += m.a22;
        }
  const double wq = 1.0 / (static_cast<double>(n) * n * n * n);
  for (double& v : mean) v *= wq;

  TensorCheck c;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int h = 0; h < 2; ++h)
          c.symmetry_defect = std::max(c.symmetry_defect,
                                       std::abs(t.q[tensor_index(i, j, k, h)] -
                                                t.q[tensor_index(j, i, h, k)]));

  const Eigen::Matrix4d M = voigt_matrix(t.q);
  const Eigen::Matrix4d S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(S);
  c.alpha0 = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  c.voigt_condition =
      c.alpha0 > 0.0 ? lmax / c.alpha0 : std::numeric_limits<double>::infinity();

  Eigen::Matrix4d Mean;
  for (int i = 0; i < 2; ++i)
    for (int k = 0; k < 2; ++k)
      for (int j = 0; j < 2; ++j)
        for (int h = 0; h < 2; ++h)
          Mean(i * 2 + k, j * 2 + h) = (k == h ? mean[centry(i, j)] : 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eg(Mean - S);
  c.upper_margin = eg.eigenvalues().minCoeff();

  c.pass = c.alpha0 > 0.0 && c.symmetry_defect <= 1e-9 && c.upper_margin >= -1e-8;
  return c;
}

void write_tensor_csv(const EffectiveTensor& t, const std::string& path) {
  std::string out = "i,j,k,h,value\n";
  for (int i = 1; i <= 2; ++i)
    for (int j = 1; j <= 2; ++j)
      for (int k = 1; k <= 2; ++k)
        for (int h = 1; h <= 2; ++h) {
          out += std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(k) + "," +
                 std::to_string(h) + "," + io::fmt_double(t.entry(i, j, k, h)) + "\n";
        }
  io::atomic_write(path, out);
}

}  // namespace rehom::effective
