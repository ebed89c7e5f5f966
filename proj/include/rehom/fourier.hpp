#pragma once

// Spectral core: cached-plan 2D FFTs and mode-space helpers used by the cell
// solvers and the corrector evaluation.
//
// Conventions. A real periodic field on the unit cell (-1/2,1/2)^2 is stored
// row-major at the n1 x n2 uniform nodes x_j = -1/2 + j/n. Its spectral view
// holds coefficients of f(x) = sum_k fhat(k) exp(2*pi*i * k.(x + 1/2)), so
// fhat = forward-DFT(values)/(n1*n2) and differentiation multiplies by
// i*2*pi*k. Mode k of axis length n lives at array index k >= 0 ? k : k + n.

#include <complex>
#include <mutex>
#include <vector>

namespace rehom::fourier {

using cvec = std::vector<std::complex<double>>;

inline int mode_of(int index, int n) { return index <= n / 2 ? index : index - n; }
inline int index_of(int mode, int n) { return mode >= 0 ? mode : mode + n; }

// Unnormalized complex 2D DFT (forward: exp(-i...), backward: exp(+i...)).
// Plans are created once per (n1, n2, direction) with FFTW_ESTIMATE and
// cached; execution is thread-safe, creation is mutex-guarded. in == out is
// allowed.
void fft2(const std::complex<double>* in, std::complex<double>* out, int n1, int n2,
          bool forward);

// Grid values <-> normalized spectral coefficients.
void to_spectral(const std::vector<double>& values, cvec& hat, int n1, int n2);
// Inverse synthesis; imaginary residue of a Hermitian spectrum is discarded.
void to_values(const cvec& hat, std::vector<double>& values, int n1, int n2);

// out = d(hat)/dx_axis in spectral space (axis 0 = first index). Aliases allowed.
void derivative(const cvec& hat, cvec& out, int n1, int n2, int axis);

// Zero the mean and the Nyquist rows/columns in place.
void zero_mean_and_nyquist(cvec& hat, int n1, int n2);

// Per-mode divergence-free (Leray) projection of a 2-component spectrum:
// uhat <- uhat - k (k.uhat)/|k|^2; also zeroes mean and Nyquist modes.
void leray_project(cvec& hat1, cvec& hat2, int n1, int n2);

// Max-norm of the spectral divergence sum_j i*2*pi*k_j uhat_j(k).
double divergence_sup(const cvec& hat1, const cvec& hat2, int n1, int n2);

// Copy retained modes |k_i| <= nsrc/2 - 1 into an ndst spectrum (ndst >= nsrc),
// zero elsewhere; truncate reads them back.
void pad_spectrum(const cvec& src, int nsrc, cvec& dst, int ndst);
void truncate_spectrum(const cvec& src, int nsrc, cvec& dst, int ndst);

// Trigonometric interpolation of real n x n samples onto the m x m grid
// (m >= n), both grids on x_j = -1/2 + j/n nodes.
void resample_values(const std::vector<double>& src, int n, std::vector<double>& dst, int m);

// Pointwise synthesis at an arbitrary point (slow; oracles and traces only).
double eval_at(const cvec& hat, int n1, int n2, double x1, double x2);

// L2 norm over the cell: sqrt((1/n^2) sum values^2) via Parseval on the spectrum.
double l2_norm(const cvec& hat);

// Global FFTW planner lock; any plan created or destroyed outside this
// translation unit must hold it (the planner API is not thread-safe).
std::mutex& planner_mutex();

}  // namespace rehom::fourier
