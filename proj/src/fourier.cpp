#include "rehom/fourier.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <mutex>
#include <unordered_map>

#include "rehom/errors.hpp"

namespace rehom::fourier {

namespace {

struct PlanKey {
  int n1, n2, sign;
  bool operator==(const PlanKey& o) const { return n1 == o.n1 && n2 == o.n2 && sign == o.sign; }
};

struct PlanKeyHash {
  std::size_t operator()(const PlanKey& k) const {
    return (static_cast<std::size_t>(k.n1) * 1000003u) ^ (static_cast<std::size_t>(k.n2) * 97u) ^
           static_cast<std::size_t>(k.sign + 2);
  }
};

std::mutex g_plan_mutex;
std::unordered_map<PlanKey, fftw_plan, PlanKeyHash>& plan_cache() {
  static auto* cache = new std::unordered_map<PlanKey, fftw_plan, PlanKeyHash>();
  return *cache;
}

fftw_plan get_plan(int n1, int n2, int sign) {
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  PlanKey key{n1, n2, sign};
  auto& cache = plan_cache();
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  // FFTW_UNALIGNED lets the plan run on any caller buffer via the new-array
  // interface; FFTW_ESTIMATE keeps planning deterministic.
  std::vector<std::complex<double>> scratch_in(static_cast<std::size_t>(n1) * n2);
  std::vector<std::complex<double>> scratch_out(scratch_in.size());
  fftw_plan plan = fftw_plan_dft_2d(n1, n2, reinterpret_cast<fftw_complex*>(scratch_in.data()),
                                    reinterpret_cast<fftw_complex*>(scratch_out.data()), sign,
                                    FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (!plan) throw NumericError("fftw plan creation failed");
  cache.emplace(key, plan);
  return plan;
}

}  // namespace

std::mutex& planner_mutex() { return g_plan_mutex; }

void fft2(const std::complex<double>* in, std::complex<double>* out, int n1, int n2,
          bool forward) {
  const int sign = forward ? FFTW_FORWARD : FFTW_BACKWARD;
  fftw_plan plan = get_plan(n1, n2, sign);
  // Plans are created out-of-place; new-array execution must keep in != out.
  if (in == out) {
    std::vector<std::complex<double>> tmp(in, in + static_cast<std::size_t>(n1) * n2);
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(tmp.data()),
                     reinterpret_cast<fftw_complex*>(out));
  } else {
    fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in)),
                     reinterpret_cast<fftw_complex*>(out));
  }
}

void to_spectral(const std::vector<double>& values, cvec& hat, int n1, int n2) {
  const std::size_t n = static_cast<std::size_t>(n1) * n2;
  cvec tmp(n);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = values[i];
  hat.resize(n);
  fft2(tmp.data(), hat.data(), n1, n2, true);
  const double scale = 1.0 / static_cast<double>(n);
  for (auto& c : hat) c *= scale;
}

void to_values(const cvec& hat, std::vector<double>& values, int n1, int n2) {
  const std::size_t n = static_cast<std::size_t>(n1) * n2;
  cvec tmp(n);
  fft2(hat.data(), tmp.data(), n1, n2, false);
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = tmp[i].real();
}

void derivative(const cvec& hat, cvec& out, int n1, int n2, int axis) {
  out.resize(hat.size());
  const double twopi = 2.0 * M_PI;
  for (int a = 0; a < n1; ++a) {
    const int k1 = mode_of(a, n1);
    for (int b = 0; b < n2; ++b) {
      const int k2 = mode_of(b, n2);
      const double k = axis == 0 ? k1 : k2;
      const std::complex<double> v = hat[static_cast<std::size_t>(a) * n2 + b];
      out[static_cast<std::size_t>(a) * n2 + b] =
          std::complex<double>(-twopi * k * v.imag(), twopi * k * v.real());
    }
  }
}

void zero_mean_and_nyquist(cvec& hat, int n1, int n2) {
  hat[0] = 0.0;
  const int ny1 = n1 / 2, ny2 = n2 / 2;
  for (int b = 0; b < n2; ++b) hat[static_cast<std::size_t>(ny1) * n2 + b] = 0.0;
  for (int a = 0; a < n1; ++a) hat[static_cast<std::size_t>(a) * n2 + ny2] = 0.0;
}

void leray_project(cvec& hat1, cvec& hat2, int n1, int n2) {
  for (int a = 0; a < n1; ++a) {
    const double k1 = mode_of(a, n1);
    for (int b = 0; b < n2; ++b) {
      const double k2 = mode_of(b, n2);
      const std::size_t idx = static_cast<std::size_t>(a) * n2 + b;
      const double kk = k1 * k1 + k2 * k2;
      if (kk == 0.0) continue;
      const std::complex<double> dot = k1 * hat1[idx] + k2 * hat2[idx];
      hat1[idx] -= k1 * dot / kk;
      hat2[idx] -= k2 * dot / kk;
    }
  }
  zero_mean_and_nyquist(hat1, n1, n2);
  zero_mean_and_nyquist(hat2, n1, n2);
}

double divergence_sup(const cvec& hat1, const cvec& hat2, int n1, int n2) {
  double sup = 0.0;
  const double twopi = 2.0 * M_PI;
  for (int a = 0; a < n1; ++a) {
    const double k1 = mode_of(a, n1);
    for (int b = 0; b < n2; ++b) {
      const double k2 = mode_of(b, n2);
      const std::size_t idx = static_cast<std::size_t>(a) * n2 + b;
      const double mag = std::abs(twopi * (k1 * hat1[idx] + k2 * hat2[idx]));
      if (mag > sup) sup = mag;
    }
  }
  return sup;
}

void pad_spectrum(const cvec& src, int nsrc, cvec& dst, int ndst) {
  dst.assign(static_cast<std::size_t>(ndst) * ndst, 0.0);
  const int kmax = nsrc / 2 - 1;
  for (int k1 = -kmax; k1 <= kmax; ++k1) {
    for (int k2 = -kmax; k2 <= kmax; ++k2) {
      dst[static_cast<std::size_t>(index_of(k1, ndst)) * ndst + index_of(k2, ndst)] =
          src[static_cast<std::size_t>(index_of(k1, nsrc)) * nsrc + index_of(k2, nsrc)];
    }
  }
}

void truncate_spectrum(const cvec& src, int nsrc, cvec& dst, int ndst) {
  dst.assign(static_cast<std::size_t>(ndst) * ndst, 0.0);
  const int kmax = ndst / 2 - 1;
  for (int k1 = -kmax; k1 <= kmax; ++k1) {
    for (int k2 = -kmax; k2 <= kmax; ++k2) {
      dst[static_cast<std::size_t>(index_of(k1, ndst)) * ndst + index_of(k2, ndst)] =
          src[static_cast<std::size_t>(index_of(k1, nsrc)) * nsrc + index_of(k2, nsrc)];
    }
  }
}

void resample_values(const std::vector<double>& src, int n, std::vector<double>& dst, int m) {
  if (m == n) {
    dst = src;
    return;
  }
  cvec hat, padded;
  to_spectral(src, hat, n, n);
  pad_spectrum(hat, n, padded, m);
  to_values(padded, dst, m, m);
}

double eval_at(const cvec& hat, int n1, int n2, double x1, double x2) {
  std::complex<double> acc = 0.0;
  const double twopi = 2.0 * M_PI;
  for (int a = 0; a < n1; ++a) {
    const double k1 = mode_of(a, n1);
    for (int b = 0; b < n2; ++b) {
      const double k2 = mode_of(b, n2);
      const double phase = twopi * (k1 * (x1 + 0.5) + k2 * (x2 + 0.5));
      acc += hat[static_cast<std::size_t>(a) * n2 + b] *
             std::complex<double>(std::cos(phase), std::sin(phase));
    }
  }
  return acc.real();
}

double l2_norm(const cvec& hat) {
  double s = 0.0;
  for (const auto& c : hat) s += std::norm(c);
  return std::sqrt(s);
}

}  // namespace rehom::fourier
