#include "rehom/sigma.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>

#include "rehom/errors.hpp"
#include "rehom/io_util.hpp"

namespace rehom::sigma {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;
constexpr int kMaxAxisNodes = 1 << 22;
constexpr int kMinFastNodes = 64;

// 10-point Gauss-Legendre on [-1,1], positive half.
constexpr double kGx[5] = {0.1488743389816312, 0.4333953941292472, 0.6794095682990244,
                           0.8650633666889845, 0.9739065285171717};
constexpr double kGw[5] = {0.2955242247147529, 0.2692667193099963, 0.2190863625159820,
                           0.1494513491505806, 0.0666713443086881};

struct AxisRule {
  std::vector<double> x, w;
};

// Smooth non-oscillatory axes: two Gauss panels, spectrally accurate for the
// analytic slow factors.
AxisRule slow_axis(double length) {
  AxisRule r;
  const int panels = 2;
  const double half = length / (2.0 * panels);
  for (int p = 0; p < panels; ++p) {
    const double mid = (2 * p + 1) * half;
    for (int g = 0; g < 5; ++g) {
      r.x.push_back(mid - half * kGx[g]);
      r.w.push_back(half * kGw[g]);
      r.x.push_back(mid + half * kGx[g]);
      r.w.push_back(half * kGw[g]);
    }
  }
  return r;
}

// Oscillatory axes: uniform midpoint; exact for trigonometric content below
// the sampling rate, and dense enough that the slow envelope is second-order
// resolved far past the pairing tolerances.
AxisRule fast_axis(double length, int n) {
  AxisRule r;
  r.x.resize(n);
  r.w.assign(n, length / n);
  for (int i = 0; i < n; ++i) r.x[i] = (i + 0.5) * length / n;
  return r;
}

int fast_node_count(double length, double freq, int min_ppp, const char* axis) {
  const double need = std::max<double>(kMinFastNodes, min_ppp * freq * length);
  if (need > kMaxAxisNodes)
    throw ResourceError(std::string("sigma quadrature axis ") + axis + " needs " +
                        std::to_string(static_cast<long long>(need)) + " nodes (cap " +
                        std::to_string(kMaxAxisNodes) + ")");
  return static_cast<int>(std::ceil(need - 1e-9));
}

std::vector<double> axis_trace_values(const AxisRule& ax, const TrigPoly1D& ua,
                                      const TrigPoly1D& ub, const TrigPoly1D& pa,
                                      const TrigPoly1D& pb, double eps) {
  const double i1 = 1.0 / eps, i2 = i1 * i1;
  std::vector<double> out(ax.x.size());
  for (std::size_t i = 0; i < ax.x.size(); ++i) {
    const double s1 = ax.x[i] * i1, s2 = ax.x[i] * i2;
    out[i] = ua.eval(s1) * ub.eval(s2) * pa.eval(s1) * pb.eval(s2);
  }
  return out;
}

std::vector<double> time_trace_values(const AxisRule& ax, const TrigPoly1D& ou,
                                      const TrigPoly1D& op, double eps) {
  const double i1 = 1.0 / eps;
  std::vector<double> out(ax.x.size());
  for (std::size_t i = 0; i < ax.x.size(); ++i)
    out[i] = ou.eval(ax.x[i] * i1) * op.eval(ax.x[i] * i1);
  return out;
}

// One shared accumulation path for the eps-level and the limit integrals so
// that a completely non-oscillatory test function yields a bitwise-zero gap.
double weighted_sum(const AxisRule& ax1, const AxisRule& ax2, const AxisRule& axt,
                    const std::vector<double>& P1, const std::vector<double>& P2,
                    const std::vector<double>& Pt, const SlowFactor& fu, const SlowFactor& fp) {
  double acc = 0.0;
  for (std::size_t k = 0; k < axt.x.size(); ++k) {
    const double t = axt.x[k];
    double acc_t = 0.0;
    for (std::size_t j = 0; j < ax2.x.size(); ++j) {
      const double x2 = ax2.x[j];
      double acc_x = 0.0;
      for (std::size_t i = 0; i < ax1.x.size(); ++i)
        acc_x += ax1.w[i] * P1[i] * fu(ax1.x[i], x2, t) * fp(ax1.x[i], x2, t);
      acc_t += ax2.w[j] * P2[j] * acc_x;
    }
    acc += axt.w[k] * Pt[k] * acc_t;
  }
  return acc;
}

void check_domain(const Domain& dom) {
  if (!(dom.Lx > 0.0) || !(dom.Ly > 0.0) || !(dom.t_end > 0.0))
    throw ConfigError("sigma domain extents must be positive");
}

void check_eps(double eps) {
  if (!(eps > 0.0) || !(eps < 1.0)) throw ConfigError("sigma epsilon must lie in (0,1)");
}

void check_eps_list(const std::vector<double>& eps_list) {
  if (eps_list.empty()) throw ConfigError("sigma epsilon list must not be empty");
  for (std::size_t k = 0; k < eps_list.size(); ++k) {
    check_eps(eps_list[k]);
    if (k && !(eps_list[k] < eps_list[k - 1]))
      throw ConfigError("sigma epsilon list must be strictly decreasing");
  }
}

}  // namespace

TrigPoly1D TrigPoly1D::cosine(int harmonic, double amplitude) {
  if (harmonic < 1) throw ConfigError("trig harmonic must be >= 1");
  TrigPoly1D p;
  p.constant = 0.0;
  p.cos_coef.assign(harmonic, 0.0);
  p.cos_coef[harmonic - 1] = amplitude;
  return p;
}

TrigPoly1D TrigPoly1D::sine(int harmonic, double amplitude) {
  if (harmonic < 1) throw ConfigError("trig harmonic must be >= 1");
  TrigPoly1D p;
  p.constant = 0.0;
  p.sin_coef.assign(harmonic, 0.0);
  p.sin_coef[harmonic - 1] = amplitude;
  return p;
}

double TrigPoly1D::eval(double s) const {
  double acc = constant;
  for (std::size_t m = 0; m < cos_coef.size(); ++m)
    if (cos_coef[m] != 0.0) acc += cos_coef[m] * std::cos(kTwoPi * (m + 1.0) * s);
  for (std::size_t m = 0; m < sin_coef.size(); ++m)
    if (sin_coef[m] != 0.0) acc += sin_coef[m] * std::sin(kTwoPi * (m + 1.0) * s);
  return acc;
}

int TrigPoly1D::bandwidth() const {
  int b = 0;
  for (std::size_t m = 0; m < cos_coef.size(); ++m)
    if (cos_coef[m] != 0.0) b = static_cast<int>(m) + 1;
  for (std::size_t m = 0; m < sin_coef.size(); ++m)
    if (sin_coef[m] != 0.0) b = std::max(b, static_cast<int>(m) + 1);
  return b;
}

double TrigPoly1D::mean_square() const {
  double acc = constant * constant;
  for (double a : cos_coef) acc += 0.5 * a * a;
  for (double b : sin_coef) acc += 0.5 * b * b;
  return acc;
}

double TrigPoly1D::sup() const {
  const int n = 1 << 14;
  double best = 0.0;
  int arg = 0;
  std::vector<double> vals(n);
  for (int i = 0; i < n; ++i) {
    vals[i] = std::abs(eval(static_cast<double>(i) / n));
    if (vals[i] > best) {
      best = vals[i];
      arg = i;
    }
  }
  // parabolic refinement around the sampled argmax
  const double fm = vals[(arg + n - 1) % n], f0 = vals[arg], fp = vals[(arg + 1) % n];
  const double den = fm - 2.0 * f0 + fp;
  if (den < 0.0) {
    const double delta = 0.5 * (fm - fp) / den;
    best = std::max(best, std::abs(eval((arg + delta) / n)));
  }
  return best;
}

TrigPoly1D TrigPoly1D::times(const TrigPoly1D& other) const {
  const int Ba = std::max<int>(static_cast<int>(cos_coef.size()),
                               static_cast<int>(sin_coef.size()));
  const int Bb = std::max<int>(static_cast<int>(other.cos_coef.size()),
                               static_cast<int>(other.sin_coef.size()));
  auto ecoef = [](const TrigPoly1D& p, int B) {
    std::vector<std::complex<double>> E(2 * B + 1, 0.0);
    E[B] = p.constant;
    for (int m = 1; m <= B; ++m) {
      const double a = m <= static_cast<int>(p.cos_coef.size()) ? p.cos_coef[m - 1] : 0.0;
      const double b = m <= static_cast<int>(p.sin_coef.size()) ? p.sin_coef[m - 1] : 0.0;
      E[B + m] = {0.5 * a, -0.5 * b};
      E[B - m] = {0.5 * a, 0.5 * b};
    }
    return E;
  };
  const auto Ea = ecoef(*this, Ba), Eb = ecoef(other, Bb);
  const int Bc = Ba + Bb;
  std::vector<std::complex<double>> C(2 * Bc + 1, 0.0);
  for (int i = -Ba; i <= Ba; ++i)
    for (int j = -Bb; j <= Bb; ++j) C[Bc + i + j] += Ea[Ba + i] * Eb[Bb + j];
  TrigPoly1D out;
  out.constant = C[Bc].real();
  out.cos_coef.assign(Bc, 0.0);
  out.sin_coef.assign(Bc, 0.0);
  for (int m = 1; m <= Bc; ++m) {
    out.cos_coef[m - 1] = 2.0 * C[Bc + m].real();
    out.sin_coef[m - 1] = -2.0 * C[Bc + m].imag();
  }
  return out;
}

double TestFunction::trace(double x1, double x2, double t, double eps) const {
  const double i1 = 1.0 / eps, i2 = i1 * i1;
  return phi(x1, x2, t) * mu1.eval(x1 * i1) * mu2.eval(x2 * i1) * omega.eval(t * i1) *
         nu1.eval(x1 * i2) * nu2.eval(x2 * i2);
}

double TestFunction::cell_mean() const {
  return mu1.mean() * mu2.mean() * omega.mean() * nu1.mean() * nu2.mean();
}

double TestFunction::cell_mean_square() const {
  return mu1.mean_square() * mu2.mean_square() * omega.mean_square() * nu1.mean_square() *
         nu2.mean_square();
}

double TestFunction::cell_sup() const {
  return mu1.sup() * mu2.sup() * omega.sup() * nu1.sup() * nu2.sup();
}

PairingRecord pairing(const TestFunction& u, const TestFunction& psi, double epsilon,
                      const Domain& dom, int min_points_per_fine_period) {
  check_eps(epsilon);
  check_domain(dom);
  if (min_points_per_fine_period < 2)
    throw ConfigError("sigma quadrature needs at least 2 points per fine period");

  const double ie = 1.0 / epsilon, ie2 = ie * ie;
  const double f1 = (u.mu1.bandwidth() + psi.mu1.bandwidth()) * ie +
                    (u.nu1.bandwidth() + psi.nu1.bandwidth()) * ie2;
  const double f2 = (u.mu2.bandwidth() + psi.mu2.bandwidth()) * ie +
                    (u.nu2.bandwidth() + psi.nu2.bandwidth()) * ie2;
  const double ft = (u.omega.bandwidth() + psi.omega.bandwidth()) * ie;

  const AxisRule ax1 =
      f1 > 0.0 ? fast_axis(dom.Lx, fast_node_count(dom.Lx, f1, min_points_per_fine_period, "x1"))
               : slow_axis(dom.Lx);
  const AxisRule ax2 =
      f2 > 0.0 ? fast_axis(dom.Ly, fast_node_count(dom.Ly, f2, min_points_per_fine_period, "x2"))
               : slow_axis(dom.Ly);
  const AxisRule axt =
      ft > 0.0
          ? fast_axis(dom.t_end, fast_node_count(dom.t_end, ft, min_points_per_fine_period, "t"))
          : slow_axis(dom.t_end);

  const auto P1 = axis_trace_values(ax1, u.mu1, u.nu1, psi.mu1, psi.nu1, epsilon);
  const auto P2 = axis_trace_values(ax2, u.mu2, u.nu2, psi.mu2, psi.nu2, epsilon);
  const auto Pt = time_trace_values(axt, u.omega, psi.omega, epsilon);
  const double lhs = weighted_sum(ax1, ax2, axt, P1, P2, Pt, u.phi, psi.phi);

  const AxisRule s1 = slow_axis(dom.Lx), s2 = slow_axis(dom.Ly), st = slow_axis(dom.t_end);
  const std::vector<double> o1(s1.x.size(), 1.0), o2(s2.x.size(), 1.0), ot(st.x.size(), 1.0);
  const double slow = weighted_sum(s1, s2, st, o1, o2, ot, u.phi, psi.phi);
  const double cm = u.mu1.times(psi.mu1).mean() * u.mu2.times(psi.mu2).mean() *
                    u.omega.times(psi.omega).mean() * u.nu1.times(psi.nu1).mean() *
                    u.nu2.times(psi.nu2).mean();
  const double rhs = cm * slow;
  return {epsilon, lhs, rhs, std::abs(lhs - rhs)};
}

double pairing_lhs(const flow::RunResult& run, int component, const TestFunction& psi,
                   double epsilon, int min_points_per_fine_period) {
  check_eps(epsilon);
  if (component != 1 && component != 2)
    throw ConfigError("numerical pairing component must be 1 or 2");
  if (run.snapshots.size() < 2)
    throw ConfigError("numerical pairing needs at least two stored snapshots");
  const flow::Grid& g = run.grid;
  const double ie = 1.0 / epsilon, ie2 = ie * ie;
  const double f1 = psi.mu1.bandwidth() * ie + psi.nu1.bandwidth() * ie2;
  const double f2 = psi.mu2.bandwidth() * ie + psi.nu2.bandwidth() * ie2;
  if (f1 > 0.0 && g.nx / g.Lx + 1e-9 < min_points_per_fine_period * f1)
    throw ConfigError("flow grid does not resolve the test-function oscillation along x1");
  if (f2 > 0.0 && g.ny / g.Ly + 1e-9 < min_points_per_fine_period * f2)
    throw ConfigError("flow grid does not resolve the test-function oscillation along x2");
  if (psi.omega.bandwidth() > 0) {
    double spacing = 0.0;
    for (std::size_t s = 1; s < run.snapshots.size(); ++s)
      spacing = std::max(spacing, run.snapshots[s].t - run.snapshots[s - 1].t);
    if (spacing <= 0.0 ||
        1.0 / spacing + 1e-9 < min_points_per_fine_period * psi.omega.bandwidth() * ie)
      throw ConfigError("snapshot cadence does not resolve the fast-time oscillation");
  }

  const double hx = g.hx(), hy = g.hy();
  std::vector<double> vals(run.snapshots.size(), 0.0);
  for (std::size_t s = 0; s < run.snapshots.size(); ++s) {
    const flow::State& st = run.snapshots[s];
    double acc = 0.0;
    if (component == 1) {
      for (int i = 1; i <= g.nx - 1; ++i)
        for (int j = 0; j < g.ny; ++j)
          acc += st.u[g.iu(i, j)] * psi.trace(i * hx, (j + 0.5) * hy, st.t, epsilon);
    } else {
      for (int i = 0; i < g.nx; ++i)
        for (int j = 1; j <= g.ny - 1; ++j)
          acc += st.v[g.iv(i, j)] * psi.trace((i + 0.5) * hx, j * hy, st.t, epsilon);
    }
    vals[s] = acc * hx * hy;
  }
  double out = 0.0;
  for (std::size_t s = 1; s < vals.size(); ++s)
    out += 0.5 * (run.snapshots[s].t - run.snapshots[s - 1].t) * (vals[s] + vals[s - 1]);
  return out;
}

std::vector<PairingRecord> mean_convergence_check(const TestFunction& psi,
                                                  const std::vector<double>& eps_list,
                                                  const SlowFactor& probe, const Domain& dom,
                                                  int min_points_per_fine_period) {
  check_eps_list(eps_list);
  TestFunction g;
  g.phi = probe;
  std::vector<PairingRecord> rows;
  rows.reserve(eps_list.size());
  for (double e : eps_list) rows.push_back(pairing(g, psi, e, dom, min_points_per_fine_period));
  return rows;
}

TestFunction product_profile(const TestFunction& a, const TestFunction& b) {
  TestFunction p;
  const SlowFactor fa = a.phi, fb = b.phi;
  p.phi = [fa, fb](double x1, double x2, double t) { return fa(x1, x2, t) * fb(x1, x2, t); };
  p.mu1 = a.mu1.times(b.mu1);
  p.mu2 = a.mu2.times(b.mu2);
  p.omega = a.omega.times(b.omega);
  p.nu1 = a.nu1.times(b.nu1);
  p.nu2 = a.nu2.times(b.nu2);
  return p;
}

std::vector<PairingRecord> product_convergence_check(const TestFunction& strong_seq,
                                                     const TestFunction& weak_seq,
                                                     const TestFunction& psi,
                                                     const std::vector<double>& eps_list,
                                                     const Domain& dom,
                                                     int min_points_per_fine_period) {
  check_eps_list(eps_list);
  const TestFunction prod = product_profile(strong_seq, weak_seq);
  std::vector<PairingRecord> rows;
  rows.reserve(eps_list.size());
  for (double e : eps_list)
    rows.push_back(pairing(prod, psi, e, dom, min_points_per_fine_period));
  return rows;
}

std::vector<PairingRecord> norm_convergence_check(const TestFunction& psi,
                                                  const std::vector<double>& eps_list,
                                                  const Domain& dom,
                                                  int min_points_per_fine_period) {
  check_eps_list(eps_list);
  std::vector<PairingRecord> rows;
  rows.reserve(eps_list.size());
  for (double e : eps_list) {
    const PairingRecord sq = pairing(psi, psi, e, dom, min_points_per_fine_period);
    PairingRecord r;
    r.epsilon = e;
    r.lhs = std::sqrt(std::max(0.0, sq.lhs));
    r.rhs = std::sqrt(std::max(0.0, sq.rhs));
    r.gap = std::abs(r.lhs - r.rhs);
    rows.push_back(r);
  }
  return rows;
}

PairingRecord trace_norm_bound(const TestFunction& psi, double epsilon, const Domain& dom,
                               int min_points_per_fine_period) {
  const PairingRecord sq = pairing(psi, psi, epsilon, dom, min_points_per_fine_period);
  TestFunction bare;
  bare.phi = psi.phi;
  const PairingRecord base = pairing(bare, bare, epsilon, dom, min_points_per_fine_period);
  PairingRecord r;
  r.epsilon = epsilon;
  r.lhs = std::sqrt(std::max(0.0, sq.lhs));
  r.rhs = std::sqrt(std::max(0.0, base.rhs)) * psi.cell_sup();
  r.gap = std::max(0.0, r.lhs - r.rhs);
  return r;
}

void write_sigma_csv(const std::vector<PairingRecord>& rows, const std::string& path) {
  std::string out = "epsilon,lhs,rhs,gap\n";
  for (const auto& r : rows)
    out += io::fmt_double(r.epsilon) + "," + io::fmt_double(r.lhs) + "," +
           io::fmt_double(r.rhs) + "," + io::fmt_double(r.gap) + "\n";
  io::atomic_write(path, out);
}

}  // namespace rehom::sigma
