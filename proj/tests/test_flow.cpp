#include "rehom/flow.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "mms_common.hpp"
#include "rehom/coeff.hpp"
#include "rehom/effective.hpp"
#include "rehom/errors.hpp"
#include "rehom/io_util.hpp"

namespace {

using rehom::ConfigError;
using rehom::effective::tensor_index;
namespace flow = rehom::flow;

flow::State random_state(const flow::Grid& g, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  flow::State s;
  s.u.resize(g.nu());
  s.v.resize(g.nv());
  s.p.resize(g.np());
  for (double& x : s.u) x = dist(rng);
  for (double& x : s.v) x = dist(rng);
  for (double& x : s.p) x = dist(rng);
  return s;
}

// Anisotropic constant tensor with Voigt spectrum {2, sqrt(3), 2, 2}.
std::array<double, 16> anisotropic_q() {
  std::array<double, 16> q{};
  q[tensor_index(0, 0, 0, 0)] = 2.0;
  q[tensor_index(1, 1, 1, 1)] = 2.0;
  q[tensor_index(1, 1, 0, 0)] = 2.0;
  q[tensor_index(0, 0, 1, 1)] = std::sqrt(3.0);
  return q;
}

// Smooth space-varying scalar viscosity plus a constant anisotropic part;
// pointwise symmetric positive definite.
flow::TensorProvider varying_tensor() {
  const std::array<double, 16> base = anisotropic_q();
  return [base](double x, double y) {
    std::array<double, 16> q = base;
    for (double& e : q) e *= 0.25;
    const double nu = 2.0 + 0.5 * std::sin(2.0 * M_PI * x) * std::cos(2.0 * M_PI * y);
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < 2; ++k) q[tensor_index(i, i, k, k)] += nu;
    return q;
  };
}

TEST(FlowGrid, IndexingIsBijective) {
  flow::Grid g{6, 5, 1.0, 1.0};
  std::vector<int> seen(g.nu(), 0);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 1; i <= g.nx - 1; ++i) seen.at(g.iu(i, j))++;
  for (int c : seen) EXPECT_EQ(c, 1);
  seen.assign(g.nv(), 0);
  for (int j = 1; j <= g.ny - 1; ++j)
    for (int i = 0; i < g.nx; ++i) seen.at(g.iv(i, j))++;
  for (int c : seen) EXPECT_EQ(c, 1);
  seen.assign(g.np(), 0);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) seen.at(g.ip(i, j))++;
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(FlowConfigRules, DefaultDtAndStepRounding) {
  flow::Grid g{32, 16, 1.0, 1.0};
  EXPECT_DOUBLE_EQ(flow::default_dt(g), 0.4 * (1.0 / 32));
  EXPECT_DOUBLE_EQ(flow::default_dt(g, 2.0), 0.2 * (1.0 / 32));
  EXPECT_THROW(flow::default_dt(g, 0.0), ConfigError);

  flow::FlowConfig cfg;
  cfg.grid = {8, 8, 1.0, 1.0};
  cfg.tensor = mms::scalar_tensor(1.0);
  cfg.forcing = flow::make_forcing("zero");
  cfg.dt = 0.013;  // does not divide t_end; steps round up, dt shrinks
  cfg.t_end = 0.1;
  auto res = flow::run_flow(cfg);
  EXPECT_EQ(res.steps, 8);
  EXPECT_DOUBLE_EQ(res.dt, 0.0125);

  cfg.dt = 0.025;
  res = flow::run_flow(cfg);
  EXPECT_EQ(res.steps, 4);
  EXPECT_DOUBLE_EQ(res.dt, 0.025);

  EXPECT_THROW(flow::make_forcing("vortex"), ConfigError);
}

TEST(FlowForcing, ManufacturedSolutionConsistentByFiniteDifferences) {
  const double nu = 0.7;
  const double pts[4][2] = {{0.23, 0.41}, {0.67, 0.13}, {0.5, 0.77}, {0.91, 0.33}};
  const double times[2] = {0.3, 0.7};
  const double h = 1e-4;
  for (const auto& pt : pts)
    for (double t : times) {
      const double x = pt[0], y = pt[1];
      // First derivatives by central differences.
      EXPECT_NEAR(mms::u1_x(x, y, t), (mms::u1(x + h, y, t) - mms::u1(x - h, y, t)) / (2 * h),
                  1e-4);
      EXPECT_NEAR(mms::u1_y(x, y, t), (mms::u1(x, y + h, t) - mms::u1(x, y - h, t)) / (2 * h),
                  1e-4);
      EXPECT_NEAR(mms::u2_x(x, y, t), (mms::u2(x + h, y, t) - mms::u2(x - h, y, t)) / (2 * h),
                  1e-4);
      EXPECT_NEAR(mms::u2_y(x, y, t), (mms::u2(x, y + h, t) - mms::u2(x, y - h, t)) / (2 * h),
                  1e-4);
      EXPECT_NEAR(mms::p_x(x, y, t), (mms::p(x + h, y, t) - mms::p(x - h, y, t)) / (2 * h), 1e-4);
      EXPECT_NEAR(mms::p_y(x, y, t), (mms::p(x, y + h, t) - mms::p(x, y - h, t)) / (2 * h), 1e-4);
      const double lap1_fd =
          (mms::u1(x + h, y, t) + mms::u1(x - h, y, t) + mms::u1(x, y + h, t) +
           mms::u1(x, y - h, t) - 4 * mms::u1(x, y, t)) /
          (h * h);
      const double lap2_fd =
          (mms::u2(x + h, y, t) + mms::u2(x - h, y, t) + mms::u2(x, y + h, t) +
           mms::u2(x, y - h, t) - 4 * mms::u2(x, y, t)) /
          (h * h);
      EXPECT_NEAR(mms::lap_u1(x, y, t), lap1_fd, 1e-3);
      EXPECT_NEAR(mms::lap_u2(x, y, t), lap2_fd, 1e-3);
      // Momentum balance: f = u_t - nu lap u + (u.grad)u + grad p.
      const double u1t_fd = (mms::u1(x, y, t + h) - mms::u1(x, y, t - h)) / (2 * h);
      const double u2t_fd = (mms::u2(x, y, t + h) - mms::u2(x, y, t - h)) / (2 * h);
      const double f1_fd = u1t_fd - nu * lap1_fd + mms::u1(x, y, t) * mms::u1_x(x, y, t) +
                           mms::u2(x, y, t) * mms::u1_y(x, y, t) + mms::p_x(x, y, t);
      const double f2_fd = u2t_fd - nu * lap2_fd + mms::u2(x, y, t) * mms::u2_y(x, y, t) +
                           mms::u1(x, y, t) * mms::u2_x(x, y, t) + mms::p_y(x, y, t);
      EXPECT_NEAR(mms::f1(nu, x, y, t), f1_fd, 1e-3);
      EXPECT_NEAR(mms::f2(nu, x, y, t), f2_fd, 1e-3);
      // Divergence-free and no-slip.
      EXPECT_NEAR(mms::u1_x(x, y, t) + mms::u2_y(x, y, t), 0.0, 1e-12);
      EXPECT_NEAR(mms::u1(0.0, y, t), 0.0, 1e-15);
      EXPECT_NEAR(mms::u1(1.0, y, t), 0.0, 1e-15);
      EXPECT_NEAR(mms::u1(x, 0.0, t), 0.0, 1e-15);
      EXPECT_NEAR(mms::u2(x, 1.0, t), 0.0, 1e-15);
      EXPECT_NEAR(mms::u2(0.0, y, t), 0.0, 1e-15);
    }
}

TEST(FlowViscous, FormMatchesOperatorAndIsSymmetricPositive) {
  flow::Grid g{24, 20, 1.0, 1.25};
  flow::Stepper st(g, varying_tensor(), flow::make_forcing("zero"), 0.01);
  const flow::State a = random_state(g, 11);
  const flow::State b = random_state(g, 22);

  flow::State la;
  st.viscous_apply(a, la);
  const double lhs = st.dot_w(la, b);
  const double rhs = st.viscous_form(a, b);
  EXPECT_NEAR(lhs, rhs, 1e-12 * (std::abs(lhs) + std::abs(rhs) + 1.0));

  const double rhs_t = st.viscous_form(b, a);
  EXPECT_NEAR(rhs, rhs_t, 1e-12 * (std::abs(rhs) + 1.0));

  EXPECT_GT(st.viscous_form(a, a), 0.0);
  EXPECT_GT(st.viscous_form(b, b), 0.0);
}

TEST(FlowAdvection, SkewFormIsAntisymmetric) {
  flow::Grid g{64, 64, 1.0, 1.0};
  flow::Stepper st(g, mms::scalar_tensor(1.0), flow::make_forcing("zero"), 0.01);
  const flow::State w = random_state(g, 5);
  const flow::State v = random_state(g, 6);
  const flow::State z = random_state(g, 7);

  flow::State nv, nz;
  st.advect(w, v, nv);
  st.advect(w, z, nz);
  const double norm_v = std::sqrt(st.dot_w(v, v)), norm_z = std::sqrt(st.dot_w(z, z));
  const double norm_nv = std::sqrt(st.dot_w(nv, nv)), norm_nz = std::sqrt(st.dot_w(nz, nz));

  EXPECT_LE(std::abs(st.dot_w(nv, v)), 1e-12 * norm_nv * norm_v);
  EXPECT_LE(std::abs(st.dot_w(nz, z)), 1e-12 * norm_nz * norm_z);
  EXPECT_LE(std::abs(st.dot_w(nv, z) + st.dot_w(nz, v)),
            1e-12 * (norm_nv * norm_z + norm_nz * norm_v));
}

TEST(FlowProjection, RemovesDiscreteDivergenceExactly) {
  flow::Grid g{48, 48, 1.0, 1.0};
  flow::Stepper st(g, mms::scalar_tensor(1.0), flow::make_forcing("zero"), 0.01);
  flow::State s = random_state(g, 99);
  const double div0 = st.divergence_sup(s);
  ASSERT_GT(div0, 1.0);  // random data is badly non-solenoidal
  st.project(s);
  EXPECT_LE(st.divergence_sup(s), 1e-10 * div0);
  // Projecting again must not move the field much (idempotence to roundoff).
  flow::State s2 = s;
  st.project(s2);
  double diff = 0.0;
  for (std::size_t d = 0; d < s.u.size(); ++d) diff = std::max(diff, std::abs(s.u[d] - s2.u[d]));
  for (std::size_t d = 0; d < s.v.size(); ++d) diff = std::max(diff, std::abs(s.v[d] - s2.v[d]));
  EXPECT_LE(diff, 1e-12);
}

TEST(FlowStepping, ZeroForcingFromRestStaysExactlyZero) {
  flow::FlowConfig cfg;
  cfg.grid = {24, 24, 1.0, 1.0};
  cfg.tensor = mms::scalar_tensor(1.0);
  cfg.forcing = flow::make_forcing("zero");
  cfg.dt = 0.01;
  cfg.t_end = 0.1;  // 10 steps
  cfg.snapshot_times = {0.05};
  const auto res = flow::run_flow(cfg);
  EXPECT_EQ(res.steps, 10);
  for (double x : res.final_state.u) EXPECT_EQ(x, 0.0);
  for (double x : res.final_state.v) EXPECT_EQ(x, 0.0);
  for (double x : res.final_state.p) EXPECT_EQ(x, 0.0);
  for (const auto& row : res.ledger) {
    EXPECT_EQ(row.kinetic_energy, 0.0);
    EXPECT_EQ(row.dissipation, 0.0);
    EXPECT_EQ(row.forcing_power, 0.0);
  }
  EXPECT_EQ(res.max_viscous_iterations, 0);
  EXPECT_EQ(res.max_divergence, 0.0);
  for (double x : res.snapshots.at(0).u) EXPECT_EQ(x, 0.0);
}

TEST(FlowStepping, PreconditionerIsExactForScalarViscosity) {
  // For constant scalar viscosity the DST diagonalization inverts the
  // implicit operator exactly, so CG needs a single iteration.
  flow::Grid g{32, 24, 1.0, 1.0};
  flow::Stepper st(g, mms::scalar_tensor(0.7), flow::make_forcing("swirl", 2.0), 0.01);
  flow::State s = random_state(g, 3);
  st.project(s);
  for (int n = 0; n < 3; ++n) {
    const auto stats = st.step(s);
    EXPECT_LE(stats.viscous_iterations, 2);
    EXPECT_LE(stats.divergence_sup, 1e-9);
  }
}

TEST(FlowStepping, ConstantCoefficientBranchesBitIdentical) {
  // A constant-in-space tensor fed through the oscillatory two-scale provider
  // and through the homogenized-constant provider must produce bit-identical
  // trajectories, since both reduce to the same cached coefficients.
  const auto field = rehom::coeff::make_builtin(
      "constant", {{"a11", 2.0}, {"a12", 0.3}, {"a22", 1.5}});
  rehom::effective::EffectiveTensor et;
  et.field_tag = field.family_tag;
  const double a[2][2] = {{2.0, 0.3}, {0.3, 1.5}};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) et.q[tensor_index(i, j, k, k)] = a[i][j];

  flow::FlowConfig cfg;
  cfg.grid = {24, 24, 1.0, 1.0};
  cfg.forcing = flow::make_forcing("swirl");
  cfg.dt = flow::default_dt(cfg.grid);
  cfg.t_end = 5.0 * cfg.dt;

  cfg.tensor = flow::constant_tensor(et);
  cfg.model_tag = "homogenized|" + field.family_tag;
  const auto res_const = flow::run_flow(cfg);

  cfg.tensor = flow::oscillatory_tensor(field, 0.5);
  cfg.model_tag = "oscillatory|" + field.family_tag + "|eps=0.5";
  const auto res_osc = flow::run_flow(cfg);

  ASSERT_EQ(res_const.final_state.u.size(), res_osc.final_state.u.size());
  EXPECT_EQ(0, std::memcmp(res_const.final_state.u.data(), res_osc.final_state.u.data(),
                           res_const.final_state.u.size() * sizeof(double)));
  EXPECT_EQ(0, std::memcmp(res_const.final_state.v.data(), res_osc.final_state.v.data(),
                           res_const.final_state.v.size() * sizeof(double)));
  EXPECT_EQ(0, std::memcmp(res_const.final_state.p.data(), res_osc.final_state.p.data(),
                           res_const.final_state.p.size() * sizeof(double)));
  for (std::size_t r = 0; r < res_const.ledger.size(); ++r) {
    EXPECT_EQ(res_const.ledger[r].kinetic_energy, res_osc.ledger[r].kinetic_energy);
    EXPECT_EQ(res_const.ledger[r].dissipation, res_osc.ledger[r].dissipation);
  }
}

TEST(FlowSnapshot, BinaryRoundTripIsExactAndByteStable) {
  flow::Snapshot snap;
  snap.grid = {12, 10, 1.0, 1.5};
  snap.state = random_state(snap.grid, 42);
  snap.state.t = 0.625;
  snap.model_tag = "homogenized|test|tag";

  const std::string dir = ::testing::TempDir();
  const std::string p1 = dir + "/snap_a.bin", p2 = dir + "/snap_b.bin";
  flow::dump_snapshot(snap, p1);
  const auto back = flow::load_snapshot(p1);
  EXPECT_EQ(back.grid.nx, snap.grid.nx);
  EXPECT_EQ(back.grid.ny, snap.grid.ny);
  EXPECT_DOUBLE_EQ(back.grid.Lx, snap.grid.Lx);
  EXPECT_DOUBLE_EQ(back.grid.Ly, snap.grid.Ly);
  EXPECT_EQ(back.model_tag, snap.model_tag);
  EXPECT_EQ(back.state.t, snap.state.t);
  ASSERT_EQ(back.state.u.size(), snap.state.u.size());
  EXPECT_EQ(0, std::memcmp(back.state.u.data(), snap.state.u.data(),
                           snap.state.u.size() * sizeof(double)));
  EXPECT_EQ(0, std::memcmp(back.state.v.data(), snap.state.v.data(),
                           snap.state.v.size() * sizeof(double)));
  EXPECT_EQ(0, std::memcmp(back.state.p.data(), snap.state.p.data(),
                           snap.state.p.size() * sizeof(double)));

  flow::dump_snapshot(snap, p2);
  EXPECT_EQ(rehom::io::read_file(p1), rehom::io::read_file(p2));

  snap.state.u.pop_back();
  EXPECT_THROW(flow::dump_snapshot(snap, p2), rehom::InvariantError);
}

TEST(FlowConvergence, SpatialSecondOrderAgainstManufacturedSolution) {
  const double nu = 1.0, T = 0.25;
  const std::vector<int> grids = {16, 32, 64, 128};
  std::vector<double> hs, errs;
  for (int n : grids) {
    flow::FlowConfig cfg;
    cfg.grid = {n, n, 1.0, 1.0};
    cfg.tensor = mms::scalar_tensor(nu);
    cfg.forcing = mms::forcing(nu);
    cfg.dt = T / 512;
    cfg.t_end = T;
    const auto res = flow::run_flow(cfg);
    const auto exact = mms::exact_state(res.grid, T);
    const double err = mms::rel_l2_velocity_error(res.final_state, exact);
    hs.push_back(1.0 / n);
    errs.push_back(err);
  }
  for (std::size_t k = 1; k < errs.size(); ++k) EXPECT_LT(errs[k], errs[k - 1]);
  const auto fit = mms::fit_loglog(hs, errs);
  RecordProperty("spatial_slope", std::to_string(fit.slope));
  std::printf("spatial errors: %.3e %.3e %.3e %.3e  slope %.3f\n", errs[0], errs[1], errs[2],
              errs[3], fit.slope);
  EXPECT_GE(fit.slope, 1.9);
}

TEST(FlowConvergence, TemporalOrderAgainstSelfReference) {
  const double nu = 1.0, T = 0.25;
  flow::FlowConfig cfg;
  cfg.grid = {48, 48, 1.0, 1.0};
  cfg.tensor = mms::scalar_tensor(nu);
  cfg.forcing = mms::forcing(nu);
  cfg.t_end = T;

  cfg.dt = T / 512;
  const auto ref = flow::run_flow(cfg);

  std::vector<double> dts = {T / 16, T / 32, T / 64};
  std::vector<double> errs;
  for (double dt : dts) {
    cfg.dt = dt;
    const auto res = flow::run_flow(cfg);
    errs.push_back(mms::rel_l2_velocity_error(res.final_state, ref.final_state));
  }
  for (std::size_t k = 1; k < errs.size(); ++k) EXPECT_LT(errs[k], errs[k - 1]);
  const auto fit = mms::fit_loglog(dts, errs);
  std::printf("temporal errors: %.3e %.3e %.3e  slope %.3f\n", errs[0], errs[1], errs[2],
              fit.slope);
  EXPECT_GE(fit.slope, 1.3);
}

TEST(FlowEnergy, LedgerResidualIsSecondOrderInDt) {
  // Discrete energy balance: (KE_n - KE_{n-1})/dt + D_n - P_n should be
  // O(dt^2) once the AB2 history exists.
  flow::FlowConfig cfg;
  cfg.grid = {48, 48, 1.0, 1.0};
  rehom::effective::EffectiveTensor et;
  et.q = anisotropic_q();
  cfg.tensor = flow::constant_tensor(et);
  cfg.forcing = flow::make_forcing("swirl");
  const double T = 0.25;
  cfg.t_end = T;

  std::vector<double> dts = {T / 64, T / 128, T / 256, T / 512};
  std::vector<double> maxres;
  for (double dt : dts) {
    cfg.dt = dt;
    const auto res = flow::run_flow(cfg);
    double worst = 0.0;
    for (std::size_t r = 2; r < res.ledger.size(); ++r) {
      const double dke =
          (res.ledger[r].kinetic_energy - res.ledger[r - 1].kinetic_energy) / res.dt;
      worst = std::max(worst,
                       std::abs(dke + res.ledger[r].dissipation - res.ledger[r].forcing_power));
    }
    maxres.push_back(worst);
  }
  const auto fit = mms::fit_loglog(dts, maxres);
  std::printf("ledger residuals: %.3e %.3e %.3e %.3e  slope %.3f r2 %.4f\n", maxres[0],
              maxres[1], maxres[2], maxres[3], fit.slope, fit.r2);
  EXPECT_GE(fit.slope, 1.8);
  EXPECT_LE(fit.slope, 2.6);
  EXPECT_GE(fit.r2, 0.99);
}

}  // namespace
