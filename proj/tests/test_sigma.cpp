#include "rehom/sigma.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>

#include "mms_common.hpp"
#include "rehom/errors.hpp"
#include "rehom/flow.hpp"

namespace {

using namespace rehom;
using sigma::TrigPoly1D;

// Test-side oracle: plain 1D composite trapezoid, independent of the
// library's Gauss rules and closed-form means.
double integrate_1d(const std::function<double(double)>& f, double a, double b, int n) {
  double acc = 0.5 * (f(a) + f(b));
  for (int i = 1; i < n; ++i) acc += f(a + (b - a) * i / n);
  return acc * (b - a) / n;
}

sigma::TestFunction criterion_psi() {
  sigma::TestFunction psi;
  psi.phi = [](double x1, double x2, double t) {
    return (1.0 + x1) * (1.0 + 0.5 * x2) * (1.0 + t);
  };
  psi.mu1 = TrigPoly1D::cosine(1);
  psi.nu1 = TrigPoly1D::cosine(1);
  return psi;
}

TEST(SigmaTrigPoly, AlgebraMatchesQuadratureOracles) {
  TrigPoly1D a;
  a.constant = 0.3;
  a.cos_coef = {0.5, -0.2};
  a.sin_coef = {0.1};
  TrigPoly1D b;
  b.constant = -0.7;
  b.cos_coef = {0.4};
  b.sin_coef = {0.0, 0.6};

  const TrigPoly1D ab = a.times(b);
  for (double s : {0.0, 0.13, 0.29, 0.5, 0.77, 0.99})
    EXPECT_NEAR(ab.eval(s), a.eval(s) * b.eval(s), 1e-14);

  const double mean_oracle =
      integrate_1d([&](double s) { return a.eval(s) * b.eval(s); }, 0.0, 1.0, 8192);
  EXPECT_NEAR(ab.mean(), mean_oracle, 1e-11);

  const double msq_oracle =
      integrate_1d([&](double s) { return a.eval(s) * a.eval(s); }, 0.0, 1.0, 8192);
  EXPECT_NEAR(a.mean_square(), msq_oracle, 1e-11);

  double sup_oracle = 0.0;
  const int n = 1 << 17;
  for (int i = 0; i < n; ++i)
    sup_oracle = std::max(sup_oracle, std::abs(a.eval(static_cast<double>(i) / n)));
  EXPECT_GE(a.sup() + 1e-9, sup_oracle);
  EXPECT_NEAR(a.sup(), sup_oracle, 1e-6);
}

TEST(SigmaPairing, ZeroMeanOscillationVanishesInTheLimit) {
  sigma::TestFunction u;  // identically 1
  sigma::TestFunction psi;
  psi.phi = [](double x1, double, double t) { return (1.0 + x1) * (1.0 + t); };
  psi.mu1 = TrigPoly1D::cosine(1);

  const sigma::Domain dom;
  const auto r4 = sigma::pairing(u, psi, 0.25, dom);
  const auto r16 = sigma::pairing(u, psi, 0.0625, dom);
  EXPECT_EQ(r4.rhs, 0.0);  // cell mean of a pure cosine is exactly zero
  EXPECT_EQ(r16.rhs, 0.0);
  EXPECT_LT(r16.gap, r4.gap);
  EXPECT_LE(r16.gap, 1e-3);
}

TEST(SigmaPairing, CosCosTraceMatchesOneDimensionalOracle) {
  sigma::TestFunction u;
  u.mu1 = TrigPoly1D::cosine(1);
  u.nu1 = TrigPoly1D::cosine(1);
  const sigma::TestFunction psi = criterion_psi();
  const sigma::Domain dom;

  // limit = 1/4 * int_Q phi, each factor integrated by 1D trapezoid
  const double i1 = integrate_1d([](double s) { return 1.0 + s; }, 0.0, 1.0, 200000);
  const double i2 = integrate_1d([](double s) { return 1.0 + 0.5 * s; }, 0.0, 1.0, 200000);
  const double i3 = integrate_1d([](double s) { return 1.0 + s; }, 0.0, 1.0, 200000);
  const double oracle = 0.25 * i1 * i2 * i3;

  const auto rec = sigma::pairing(u, psi, 1.0 / 64.0, dom);
  std::printf("cos-cos pairing eps=1/64: lhs=%.12f rhs=%.12f gap=%.3e\n", rec.lhs, rec.rhs,
              rec.gap);
  EXPECT_NEAR(rec.rhs, oracle, 1e-9 * std::abs(oracle));
  EXPECT_LE(rec.gap, 1e-3);

  const auto coarse = sigma::pairing(u, psi, 0.25, dom);
  EXPECT_LE(coarse.gap, 0.05);  // already close at eps = 1/4
}

TEST(SigmaNorms, NormConvergenceGapDecreases) {
  const sigma::TestFunction psi = criterion_psi();
  const sigma::Domain dom;
  const std::vector<double> eps = {0.25, 0.0625, 1.0 / 64.0};
  const auto rows = sigma::norm_convergence_check(psi, eps, dom);
  ASSERT_EQ(rows.size(), 3u);

  const double p1 = integrate_1d([](double s) { return (1.0 + s) * (1.0 + s); }, 0, 1, 200000);
  const double p2 =
      integrate_1d([](double s) { return (1.0 + 0.5 * s) * (1.0 + 0.5 * s); }, 0, 1, 200000);
  const double p3 = integrate_1d([](double s) { return (1.0 + s) * (1.0 + s); }, 0, 1, 200000);
  const double csq =
      integrate_1d([](double s) { return std::pow(std::cos(2 * M_PI * s), 2); }, 0, 1, 65536);
  const double oracle = std::sqrt(p1 * p2 * p3 * csq * csq);

  for (const auto& r : rows)
    std::printf("norm eps=%.6f lhs=%.10f rhs=%.10f gap=%.3e\n", r.epsilon, r.lhs, r.rhs, r.gap);
  EXPECT_NEAR(rows[0].rhs, oracle, 1e-9 * oracle);
  EXPECT_LT(rows[1].gap, rows[0].gap);
  EXPECT_LT(rows[2].gap, rows[1].gap);
}

TEST(SigmaNorms, TraceNormBoundHolds) {
  sigma::TestFunction psi;
  psi.phi = [](double x1, double x2, double t) { return 1.0 + x1 * x2 + 0.5 * t; };
  psi.mu1 = TrigPoly1D::cosine(1, 0.8);
  psi.mu2 = TrigPoly1D::sine(2, 0.3);
  psi.nu1 = TrigPoly1D::cosine(1, 0.5);
  psi.mu1.constant = 0.4;
  const sigma::Domain dom;
  for (double eps : {0.25, 0.0625}) {
    const auto r = sigma::trace_norm_bound(psi, eps, dom);
    EXPECT_LE(r.lhs, r.rhs + 1e-8) << "eps " << eps;
    EXPECT_EQ(r.gap, 0.0) << "eps " << eps;
  }
}

TEST(SigmaMeanConvergence, ReductionExamples) {
  const sigma::Domain dom;
  const sigma::SlowFactor probe = [](double x1, double x2, double t) {
    return 1.0 + 0.5 * x1 + 0.25 * x2 * t;
  };
  const std::vector<double> eps = {0.5, 0.25, 0.125};

  // no oscillation at all: identical quadrature on both sides, gap exactly 0
  sigma::TestFunction flat;
  flat.phi = [](double x1, double, double t) { return (1.0 + x1) * (1.0 - 0.3 * t); };
  for (const auto& r : sigma::mean_convergence_check(flat, eps, probe, dom))
    EXPECT_EQ(r.gap, 0.0);

  // pure y oscillation: gap decays with eps
  sigma::TestFunction osc = flat;
  osc.mu1 = TrigPoly1D::cosine(1);
  const auto rows = sigma::mean_convergence_check(osc, eps, probe, dom);
  EXPECT_EQ(rows[0].rhs, 0.0);
  EXPECT_LT(rows[1].gap, rows[0].gap);
  EXPECT_LT(rows[2].gap, rows[1].gap);

  // y and z cosines: cell mean still exactly zero, gap small by eps = 1/8
  sigma::TestFunction osc2 = osc;
  osc2.nu1 = TrigPoly1D::cosine(1);
  const auto rows2 = sigma::mean_convergence_check(osc2, eps, probe, dom);
  EXPECT_EQ(rows2[2].rhs, 0.0);
  EXPECT_LE(rows2[2].gap, 1e-2);
}

TEST(SigmaProduct, StrongTimesWeakConvergesToProductLimit) {
  sigma::TestFunction strong;  // 1 + 0.5 cos(2 pi y1), slow factor 1
  strong.mu1.constant = 1.0;
  strong.mu1.cos_coef = {0.5};
  sigma::TestFunction weak;
  weak.phi = [](double x1, double, double) { return 1.0 + x1; };
  weak.nu1 = TrigPoly1D::cosine(1);
  sigma::TestFunction psi;
  psi.phi = [](double, double, double t) { return 1.0 + t; };
  psi.nu1 = TrigPoly1D::cosine(1);

  const sigma::Domain dom;
  const std::vector<double> eps = {0.25, 0.0625};
  const auto rows = sigma::product_convergence_check(strong, weak, psi, eps, dom);

  // limit oracle: mean_y(1 + 0.5 cos) * mean_z(cos^2) * int phi_w phi_psi
  const double my = integrate_1d(
      [](double s) { return 1.0 + 0.5 * std::cos(2 * M_PI * s); }, 0, 1, 65536);
  const double mz = integrate_1d(
      [](double s) { return std::pow(std::cos(2 * M_PI * s), 2); }, 0, 1, 65536);
  const double slow = integrate_1d([](double s) { return 1.0 + s; }, 0, 1, 200000) *
                      integrate_1d([](double s) { return 1.0 + s; }, 0, 1, 200000);
  const double oracle = my * mz * slow;
  EXPECT_NEAR(rows[1].rhs, oracle, 1e-9 * std::abs(oracle));
  EXPECT_LE(rows[1].gap, 1e-3);

  // strong factor identically 1 reduces to the pairing of the weak sequence
  const auto reduced = sigma::product_convergence_check({}, weak, psi, eps, dom);
  const auto direct0 = sigma::pairing(weak, psi, eps[0], dom);
  const auto direct1 = sigma::pairing(weak, psi, eps[1], dom);
  EXPECT_EQ(reduced[0].lhs, direct0.lhs);
  EXPECT_EQ(reduced[0].rhs, direct0.rhs);
  EXPECT_EQ(reduced[1].lhs, direct1.lhs);
  EXPECT_EQ(reduced[1].rhs, direct1.rhs);

  // weak factor identically zero kills every gap exactly
  sigma::TestFunction zero;
  zero.phi = [](double, double, double) { return 0.0; };
  for (const auto& r : sigma::product_convergence_check(strong, zero, psi, eps, dom)) {
    EXPECT_EQ(r.lhs, 0.0);
    EXPECT_EQ(r.rhs, 0.0);
    EXPECT_EQ(r.gap, 0.0);
  }
}

TEST(SigmaNumerical, DnsPairingReducesToPlainAndTwoScaleQuadrature) {
  flow::FlowConfig fc;
  fc.grid = {32, 32, 1.0, 1.0};
  fc.tensor = mms::scalar_tensor(1.0);
  fc.forcing = flow::make_forcing("swirl", 1.0);
  fc.model_tag = "sigma-dns";
  fc.t_end = 0.02;
  fc.snapshot_times = {0.0, 0.01, 0.02};
  const auto run = flow::run_flow(fc);
  ASSERT_EQ(run.snapshots.size(), 3u);
  const flow::Grid& g = run.grid;
  const double hx = g.hx(), hy = g.hy();

  // slow-only psi: plain weak pairing, re-derived locally
  sigma::TestFunction slow_psi;
  slow_psi.phi = [](double x1, double x2, double t) { return 1.0 + x1 - 0.5 * x2 + t; };
  const double lib_plain = sigma::pairing_lhs(run, 1, slow_psi, 0.25);
  std::vector<double> snap_vals;
  for (const auto& st : run.snapshots) {
    double acc = 0.0;
    for (int j = 0; j < g.ny; ++j)
      for (int i = 1; i <= g.nx - 1; ++i)
        acc += st.u[g.iu(i, j)] * (1.0 + i * hx - 0.5 * (j + 0.5) * hy + st.t);
    snap_vals.push_back(acc * hx * hy);
  }
  double oracle_plain = 0.0;
  for (std::size_t s = 1; s < snap_vals.size(); ++s)
    oracle_plain += 0.5 * (run.snapshots[s].t - run.snapshots[s - 1].t) *
                    (snap_vals[s] + snap_vals[s - 1]);
  EXPECT_NEAR(lib_plain, oracle_plain, 1e-12 * (1.0 + std::abs(oracle_plain)));

  // z-independent psi: the general pairing reduces to a two-scale pairing
  sigma::TestFunction y_psi = slow_psi;
  y_psi.mu1 = TrigPoly1D::cosine(1);
  const double eps = 0.25;
  const double lib_two_scale = sigma::pairing_lhs(run, 2, y_psi, eps);
  snap_vals.clear();
  for (const auto& st : run.snapshots) {
    double acc = 0.0;
    for (int j = 1; j <= g.ny - 1; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const double x1 = (i + 0.5) * hx, x2 = j * hy;
        acc += st.v[g.iv(i, j)] * (1.0 + x1 - 0.5 * x2 + st.t) *
               std::cos(2.0 * M_PI * x1 / eps);
      }
    snap_vals.push_back(acc * hx * hy);
  }
  double oracle_two_scale = 0.0;
  for (std::size_t s = 1; s < snap_vals.size(); ++s)
    oracle_two_scale += 0.5 * (run.snapshots[s].t - run.snapshots[s - 1].t) *
                        (snap_vals[s] + snap_vals[s - 1]);
  EXPECT_NEAR(lib_two_scale, oracle_two_scale, 1e-12 * (1.0 + std::abs(oracle_two_scale)));
}

TEST(SigmaErrors, ResolutionAndArgumentViolationsThrow) {
  flow::FlowConfig fc;
  fc.grid = {32, 32, 1.0, 1.0};
  fc.tensor = mms::scalar_tensor(1.0);
  fc.forcing = flow::make_forcing("zero", 1.0);
  fc.model_tag = "sigma-res";
  fc.t_end = 0.01;
  fc.snapshot_times = {0.0, 0.01};
  const auto run = flow::run_flow(fc);

  sigma::TestFunction zpsi;
  zpsi.nu1 = TrigPoly1D::cosine(1);
  // f = 1/eps^2 = 16 cycles needs 128 points; the grid has 32
  EXPECT_THROW(sigma::pairing_lhs(run, 1, zpsi, 0.25), ConfigError);
  EXPECT_THROW(sigma::pairing_lhs(run, 3, zpsi, 0.5), ConfigError);
  EXPECT_THROW(sigma::pairing_lhs(run, 1, zpsi, 0.0), ConfigError);

  sigma::TestFunction tpsi;
  tpsi.omega = TrigPoly1D::cosine(1);
  // two snapshots cannot resolve t/eps oscillation
  EXPECT_THROW(sigma::pairing_lhs(run, 1, tpsi, 0.0625), ConfigError);

  const sigma::Domain dom;
  sigma::TestFunction wide;
  wide.nu1 = TrigPoly1D::cosine(129);
  EXPECT_THROW(sigma::pairing({}, wide, 1.0 / 64.0, dom), ResourceError);
  EXPECT_THROW(sigma::norm_convergence_check(wide, {0.25, 0.25}, dom), ConfigError);
  EXPECT_THROW(sigma::mean_convergence_check(
                   wide, {}, [](double, double, double) { return 1.0; }, dom),
               ConfigError);
}

TEST(SigmaCsv, DeterministicRoundTrip) {
  const sigma::TestFunction psi = criterion_psi();
  const sigma::Domain dom;
  const auto rows = sigma::norm_convergence_check(psi, {0.25, 0.125}, dom);

  const auto dir = std::filesystem::temp_directory_path() / "rehom_sigma_csv";
  std::filesystem::create_directories(dir);
  const std::string p1 = (dir / "a.csv").string(), p2 = (dir / "b.csv").string();
  sigma::write_sigma_csv(rows, p1);
  sigma::write_sigma_csv(rows, p2);
  const auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::string c1 = slurp(p1), c2 = slurp(p2);
  EXPECT_EQ(c1, c2);
  EXPECT_EQ(c1.substr(0, c1.find('\n')), "epsilon,lhs,rhs,gap");
  std::filesystem::remove_all(dir);
}

}  // namespace
