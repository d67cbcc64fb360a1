#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "spinnet/protocol.hpp"

using namespace spinnet;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

SpinNetwork pair_network(double sep) {
  SpinNetwork net;
  net.sites.resize(2);
  net.sites[0].species = Species::NV;
  net.sites[1].species = Species::P1;
  net.sites[1].subgroup = kP1AddressedSubgroup;
  net.sites[1].position = Vec3(0, 0, sep);
  net.spec.exclusion_radius = 1.0;
  net.spec.field_axis = Vec3(0, 0, 1);
  return net;
}

ProtocolConfig small_protocol(std::size_t realizations) {
  ProtocolConfig cfg;
  cfg.realizations = realizations;
  cfg.box_length = 60.0;
  cfg.seed = 21;
  cfg.cycle.n_cycles = 16;
  return cfg;
}

}  // namespace

TEST(ClosedForm, P1Polarization) {
  EXPECT_NEAR(estimate_p1_polarization(0.143, 1.0, 2.6, 0.75), 0.0739, 5e-4);
  EXPECT_NEAR(estimate_p1_polarization(0.143, 1.0, 2.6, 0.75), 0.074, 0.001);
  EXPECT_EQ(estimate_p1_polarization(0.0, 1.0, 2.6, 0.75), 0.0);
  EXPECT_NEAR(estimate_p1_polarization(1.0, 1.0, 1.0, 0.75), 0.75, 1e-15);
  EXPECT_THROW(estimate_p1_polarization(0.1, 1.0, 0.0, 0.75), DomainError);
  EXPECT_THROW(estimate_p1_polarization(0.1, 1.0, 1.0, 1.5), DomainError);
}

TEST(ClosedForm, SpinTemperatureAndThermal) {
  EXPECT_NEAR(spin_temperature(0.074, 446.0), 0.405, 0.005);
  EXPECT_NEAR(thermal_polarization(300.0, 446.0), 1.0e-4, 5e-6);
  const double Pth = thermal_polarization(300.0, 446.0);
  EXPECT_NEAR(enhancement(0.074, 1.0e-4), 740.0, 1e-9);
  EXPECT_NEAR(enhancement(0.074, Pth), 740.0, 40.0);
  EXPECT_THROW(spin_temperature(1.0, 446.0), DomainError);
  EXPECT_TRUE(std::isinf(spin_temperature(0.0, 446.0)));
  EXPECT_TRUE(std::isinf(spin_temperature(-0.1, 446.0)));
  // Inverse pair.
  EXPECT_NEAR(thermal_polarization(spin_temperature(0.3, 446.0), 446.0), 0.3, 1e-12);
}

TEST(ClosedForm, Summary) {
  const auto e = polarization_summary(0.143, 1.0, 2.6, 0.75, 446.0);
  EXPECT_NEAR(e.enhancement, e.P_p1 / e.P_thermal, 1e-9);
  const nlohmann::json j = e;
  EXPECT_TRUE(j.contains("T_spin_K"));
}

TEST(SaturationFit, NoiselessRoundTrip) {
  std::vector<double> N, A;
  for (int k = 0; k <= 32; ++k) {
    N.push_back(k);
    A.push_back(0.143 * (1.0 - std::exp(-k / 3.0)));
  }
  const auto f = fit_saturation(N, A);
  EXPECT_NEAR(f.value("A"), 0.143, 1e-9);
  EXPECT_NEAR(f.value("tau"), 3.0, 1e-8);
  const auto m = fitkit::models::exp_saturation();
  EXPECT_EQ(m(0.0, f.params), 0.0);
}

TEST(SaturationFit, NoisyTwoSigmaCoverage) {
  std::size_t hits = 0;
  const std::size_t trials = 100;
  std::vector<double> N;
  for (int k = 1; k <= 32; ++k) N.push_back(k);
  for (std::size_t t = 0; t < trials; ++t) {
    std::mt19937_64 rng(500 + t);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> A, s;
    for (double n : N) {
      const double y = 0.143 * (1.0 - std::exp(-n / 3.0));
      s.push_back(0.05 * y);
      A.push_back(y + 0.05 * y * g(rng));
    }
    const auto f = fit_saturation(N, A, s);
    hits += std::abs(f.value("tau") - 3.0) < 2.0 * f.error("tau") &&
            std::abs(f.value("A") - 0.143) < 2.0 * f.error("A");
  }
  // Joint coverage of two 95% intervals; binomial sd at n = 100 is about 2.5%.
  EXPECT_GE(double(hits) / trials, 0.85);
}

TEST(CrossoverFit, RoundTripAndHalfPoint) {
  const auto m = fitkit::models::crossover();
  const std::vector<double> p{0.143, 1.36};
  EXPECT_NEAR(m(1.36, p), 0.143 / 2.0, 1e-15);
  std::vector<double> om{0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.4}, A;
  for (double o : om) A.push_back(m(o, p));
  const auto f = fit_crossover(om, A);
  EXPECT_NEAR(f.value("A_inf"), 0.143, 1e-9);
  EXPECT_NEAR(f.value("W"), 1.36, 1e-8);
}

TEST(Config, Validation) {
  CycleConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_cycles = 33;
  EXPECT_THROW(c.validate(), ConfigError);
  c = CycleConfig{};
  c.p_nv0 = 1.2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = CycleConfig{};
  c.t_hh = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  ProtocolConfig p;
  p.realizations = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Protocol, TwoSiteSharesPolarization) {
  CycleConfig cc;
  cc.t_hh = 1e6;
  cc.n_cycles = 1;
  cc.t1rho_dark = kInf;
  cc.t1rho_laser = kInf;
  cc.nv_relaxation = false;
  const auto tr = simulate_protocol(pair_network(3.0), cc);
  EXPECT_NEAR(tr.p1_hh[1], 0.375, 1e-9);
  EXPECT_NEAR(tr.nv_hh[1], 0.375, 1e-9);
  EXPECT_NEAR(tr.p1_probe[1], 0.375, 1e-9);
}

TEST(Protocol, MissingSpeciesIsConfigError) {
  auto net = pair_network(3.0);
  net.sites[0].species = Species::P1;
  net.sites[0].subgroup = kP1AddressedSubgroup;
  EXPECT_THROW(simulate_protocol(net, CycleConfig{}), ConfigError);
  net.sites.resize(1);
  net.sites[0].species = Species::NV;
  EXPECT_THROW(simulate_protocol(net, CycleConfig{}), ConfigError);
}

TEST(Protocol, HhPhaseConservesWithoutRelaxation) {
  ProtocolConfig cfg = small_protocol(1);
  const auto net = generate_network(protocol_ensemble(cfg, 9));
  const SpectralPropagator sp(build_rates(net, {cfg.cycle.omega, cfg.cycle.gamma, kRateFloor}), {});
  Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.sites.size()));
  for (auto i : net.indices_of(Species::NV)) p[static_cast<Eigen::Index>(i)] = 0.75;
  const double before = p.sum();
  EXPECT_NEAR(sp.apply(p, cfg.cycle.t_hh).sum(), before, 1e-6 * before);
}

TEST(Protocol, TrajectoriesBoundedAndMonotone) {
  const auto r = run_iterative_protocol(small_protocol(8));
  ASSERT_EQ(r.p1_mean.size(), 17u);
  for (std::size_t k = 0; k < r.p1_mean.size(); ++k) {
    EXPECT_GE(r.p1_mean[k], 0.0);
    EXPECT_LE(r.p1_mean[k], 1.0);
    EXPECT_GE(r.nv_mean[k], 0.0);
    EXPECT_LE(r.nv_mean[k], 1.0);
    if (k > 0) EXPECT_GE(r.p1_mean[k] + r.p1_sem[k], r.p1_mean[k - 1] - r.p1_sem[k - 1]);
  }
  std::ostringstream os;
  r.write_csv(os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "cycle,P_nv,P_nv_sem,P_p1,P_p1_sem,P_p1_after_hh");
}

TEST(Protocol, LessDissipationSaturatesHigherAndLater) {
  auto a = small_protocol(8);
  auto b = a;
  b.cycle.t1rho_laser = kInf;
  b.cycle.n_cycles = 32;
  a.cycle.n_cycles = 32;
  const auto ra = run_iterative_protocol(a), rb = run_iterative_protocol(b);
  EXPECT_GT(rb.P_sat, ra.P_sat);
  EXPECT_GT(rb.N_sat, ra.N_sat);
}

TEST(Protocol, Deterministic) {
  const auto a = run_iterative_protocol(small_protocol(3));
  const auto b = run_iterative_protocol(small_protocol(3));
  EXPECT_EQ(a.p1_mean, b.p1_mean);
}

TEST(Protocol, RedrawnDetuningsChangeTrajectory) {
  auto cfg = small_protocol(2);
  const auto a = run_iterative_protocol(cfg);
  cfg.cycle.redraw_detunings = true;
  const auto b = run_iterative_protocol(cfg);
  EXPECT_EQ(a.p1_mean[1], b.p1_mean[1]);
  EXPECT_NE(a.p1_mean.back(), b.p1_mean.back());
}

TEST(Readout, ZeroPreparedGivesZero) {
  ReadoutConfig cfg;
  cfg.network = small_protocol(3);
  cfg.p1_prepared = 0.0;
  const auto r = readout_equilibration(cfg);
  for (double v : r.dC) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Readout, SignFlipIsExactlyAntisymmetric) {
  ReadoutConfig cfg;
  cfg.network = small_protocol(3);
  const auto a = readout_equilibration(cfg);
  cfg.p1_prepared = -cfg.p1_prepared;
  const auto b = readout_equilibration(cfg);
  for (std::size_t k = 0; k < a.dC.size(); ++k) EXPECT_NEAR(a.dC[k], -b.dC[k], 1e-14);
  EXPECT_NEAR(a.C_parallel[0], 1.0, 1e-12);
}

TEST(Readout, EquilibrationFarBelowRelaxation) {
  ReadoutConfig cfg;
  cfg.network = small_protocol(10);
  const auto r = readout_equilibration(cfg);
  EXPECT_GT(r.A, 0.0);
  EXPECT_LT(r.tau_eq * 10.0, cfg.network.cycle.t1rho_dark);
  EXPECT_EQ(cfg.times.back(), 30.0);
  EXPECT_THROW(readout_times(0.0), ConfigError);
}

TEST(Readout, ConsistencyRecoversPreparedPolarization) {
  ReadoutConfig cfg;
  cfg.network = small_protocol(6);
  const auto c = polarization_consistency(cfg);
  EXPECT_LT(c.relative_error, 0.05);
}
