#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "spinnet/network.hpp"
#include "spinnet/stats.hpp"

using namespace spinnet;

namespace {

EnsembleSpec p1_box(double L, double ppm, std::uint64_t seed) {
  EnsembleSpec s;
  s.box_length = L;
  s.populations.push_back({Species::P1, 1, ppm, {1, 1, 1, 1}});
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Density, PpmConversion) {
  EXPECT_DOUBLE_EQ(ppm_to_density(1.0), 1.76e-4);
  EXPECT_EQ(ppm_to_density(0.0), 0.0);
  EXPECT_THROW(ppm_to_density(-0.1), DomainError);
}

TEST(Density, MeanSpacingAtAddressedSubgroup) {
  EXPECT_NEAR(mean_spacing(1.575), 15.3, 0.05);
  EXPECT_NEAR(std::pow(mean_spacing(2.0), -3.0), ppm_to_density(2.0), 1e-18);
}

TEST(Density, BoxLengthForCount) {
  // L = (N / n)^{1/3}
  const double n = 1.575 * 1.76e-4;
  const std::array<std::size_t, 4> N{100, 200, 400, 800};
  for (auto k : N) EXPECT_NEAR(box_length_for(k, 1.575), std::cbrt(double(k) / n), 1e-9);
  EXPECT_NEAR(box_length_for(100, 1.575), 71.19, 0.01);
  EXPECT_NEAR(box_length_for(800, 1.575), 142.37, 0.01);
}

TEST(Generate, SiteCountMatchesRoundedDensity) {
  const auto net = generate_network(p1_box(100.0, 1.575, 7));
  const auto expected = static_cast<std::size_t>(std::llround(1.575 * 1.76e-4 * 1e6));
  EXPECT_EQ(expected, 277u);
  EXPECT_EQ(net.sites.size(), expected);
  EXPECT_GE(net.min_pair_distance(), 1.0);
  for (const auto& s : net.sites) {
    EXPECT_TRUE((s.position.array() >= 0.0).all() && (s.position.array() <= 100.0).all());
    EXPECT_TRUE(std::isfinite(s.detuning));
  }
}

TEST(Generate, ZeroDensityIsEmpty) {
  EXPECT_TRUE(generate_network(p1_box(50.0, 0.0, 1)).sites.empty());
}

TEST(Generate, Deterministic) {
  auto spec = p1_box(60.0, 3.0, 99);
  spec.disorder_sigma = 1.36;
  const auto a = generate_network(spec), b = generate_network(spec);
  ASSERT_EQ(a.sites.size(), b.sites.size());
  for (std::size_t i = 0; i < a.sites.size(); ++i) {
    EXPECT_EQ(a.sites[i].position, b.sites[i].position);
    EXPECT_EQ(a.sites[i].detuning, b.sites[i].detuning);
    EXPECT_EQ(a.sites[i].axis, b.sites[i].axis);
  }
  spec.seed = 100;
  EXPECT_NE(generate_network(spec).sites[0].position, a.sites[0].position);
}

TEST(Generate, DiamondLatticeSitesAreLatticePoints) {
  auto spec = p1_box(20.0, 200.0, 3);
  spec.placement = Placement::DiamondLattice;
  const auto net = generate_network(spec);
  ASSERT_FALSE(net.sites.empty());
  EXPECT_GE(net.min_pair_distance(), 1.0);
  const double a4 = constants::kDiamondLattice / 4.0;
  for (const auto& s : net.sites)
    for (int k = 0; k < 3; ++k) {
      const double q = s.position[k] / a4;
      EXPECT_NEAR(q, std::round(q), 1e-9);
    }
}

TEST(Generate, ExclusionBudgetExhaustionNamesBudget) {
  // 1 nm exclusion in a 5 nm box cannot hold 440 spins.
  auto spec = p1_box(5.0, 20000.0, 1);
  try {
    generate_network(spec);
    FAIL() << "expected a generation failure";
  } catch (const GenerationError& e) {
    EXPECT_NE(std::string(e.what()).find("retry budget"), std::string::npos);
  }
}

TEST(Generate, CentralPopulationPinned) {
  EnsembleSpec s;
  s.box_length = 50.0;
  s.populations.push_back({Species::NV, 0, 0.0, {1, 0, 0, 0}});
  s.populations.push_back({Species::P1, 1, 2.0, {1, 0, 0, 0}});
  s.central_population = 0;
  const auto net = generate_network(s);
  ASSERT_EQ(net.count(Species::NV), 1u);
  EXPECT_NEAR((net.sites[0].position - net.center()).norm(), 0.0, 1e-12);
}

TEST(Generate, PinnedAxisDistribution) {
  auto spec = p1_box(80.0, 5.0, 4);
  spec.populations[0].axis_weights = {0, 0, 1, 0};
  for (const auto& s : generate_network(spec).sites) EXPECT_EQ(s.axis, 2);
}

TEST(Generate, AxesUniformByDefault) {
  const auto net = generate_network(p1_box(150.0, 5.0, 12));
  std::array<double, 4> c{};
  for (const auto& s : net.sites) c[s.axis] += 1.0;
  const double n = double(net.sites.size());
  for (double v : c) EXPECT_NEAR(v / n, 0.25, 4.0 * std::sqrt(0.25 * 0.75 / n));
}

TEST(Detunings, ZeroWidthGivesZero) {
  auto net = generate_network(p1_box(50.0, 5.0, 2));
  net = assign_detunings(net, 0.0, 1);
  for (const auto& s : net.sites) EXPECT_EQ(s.detuning, 0.0);
  EXPECT_THROW(assign_detunings(net, -1.0, 1), DomainError);
}

TEST(Detunings, SampleWidth) {
  SpinNetwork net;
  net.sites.resize(10000);
  net = assign_detunings(net, 1.36, 42);
  std::vector<double> d;
  for (const auto& s : net.sites) d.push_back(s.detuning);
  const auto ms = mean_sem(d);
  // Estimator sd of the sample standard deviation is ~ W / sqrt(2n) = 0.7%.
  EXPECT_NEAR(ms.stddev, 1.36, 0.03 * 1.36);
  EXPECT_NEAR(ms.mean, 0.0, 4.0 * ms.sem);
  const auto again = assign_detunings(net, 1.36, 42);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(again.sites[i].detuning, d[i]);
}

TEST(NeighborStats, ClosedForm) {
  const auto s = nearest_neighbor_stats(0.6, 12.4);
  EXPECT_NEAR(s.d_nn, 11.7, 0.05);
  EXPECT_NEAR(s.fraction_within, 0.57, 0.01);
  // d_NN = Gamma(4/3) (3/(4 pi n))^{1/3}
  const double n = 0.6 * 1.76e-4;
  EXPECT_NEAR(s.d_nn, 0.55396 * std::cbrt(1.0 / n), 1e-3);
  EXPECT_EQ(nearest_neighbor_stats(0.6, 0.0).fraction_within, 0.0);
  EXPECT_THROW(nearest_neighbor_stats(0.0, 1.0), DomainError);
}

TEST(NeighborStats, EmpiricalMatchesClosedForm) {
  std::vector<SpinNetwork> nets;
  for (std::uint64_t k = 0; k < 100; ++k) {
    EnsembleSpec s;
    s.box_length = 120.0;
    s.populations.push_back({Species::NV, 0, 0.6, {1, 0, 0, 0}});
    s.exclusion_radius = 0.0;
    s.seed = derive_seed(17, k);
    nets.push_back(generate_network(s));
  }
  const auto emp = empirical_neighbor_stats(nets, Species::NV, 12.4, 30.0);
  const auto cf = nearest_neighbor_stats(0.6, 12.4);
  ASSERT_GT(emp.samples, 1000u);
  EXPECT_NEAR(emp.d_nn, cf.d_nn, 0.05 * cf.d_nn);
  EXPECT_NEAR(emp.fraction_within, cf.fraction_within, 0.03);
}

TEST(Json, NetworkRoundTripIsLossless) {
  auto spec = p1_box(40.0, 20.0, 5);
  spec.disorder_sigma = 0.7;
  spec.populations.push_back({Species::NV, 0, 4.0, {0, 1, 0, 0}});
  const auto net = generate_network(spec);
  const nlohmann::json j = net;
  const auto back = j.dump();
  const SpinNetwork net2 = nlohmann::json::parse(back).get<SpinNetwork>();
  ASSERT_EQ(net2.sites.size(), net.sites.size());
  for (std::size_t i = 0; i < net.sites.size(); ++i) {
    EXPECT_EQ(net2.sites[i].position, net.sites[i].position);
    EXPECT_EQ(net2.sites[i].detuning, net.sites[i].detuning);
    EXPECT_EQ(net2.sites[i].species, net.sites[i].species);
    EXPECT_EQ(net2.sites[i].subgroup, net.sites[i].subgroup);
    EXPECT_EQ(net2.sites[i].axis, net.sites[i].axis);
  }
  EXPECT_EQ(net2.spec.seed, net.spec.seed);
  EXPECT_EQ(net2.spec.box_length, net.spec.box_length);
  EXPECT_EQ(nlohmann::json(net2).dump(), back);
}

TEST(Spec, ValidationRejectsBadInput) {
  auto s = p1_box(-1.0, 1.0, 0);
  EXPECT_THROW(s.validate(), DomainError);
  s = p1_box(10.0, -1.0, 0);
  EXPECT_THROW(s.validate(), DomainError);
  s = p1_box(10.0, 1.0, 0);
  s.exclusion_radius = -1.0;
  EXPECT_THROW(s.validate(), DomainError);
}

TEST(Subgroups, FractionsSumToOne) {
  double s = 0.0;
  for (double f : kP1SubgroupFractions) s += f;
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(kP1SubgroupFractions[kP1AddressedSubgroup], 3.0 / 12.0);
}
