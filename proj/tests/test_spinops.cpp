#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>

#include "spinnet/spinops.hpp"

using namespace spinnet;

namespace {

SpinSite site(Species sp, int sub, int axis, Vec3 r) {
  SpinSite s;
  s.species = sp;
  s.subgroup = sub;
  s.axis = axis;
  s.position = r;
  return s;
}

// exp(-i 2 pi H t) psi through an independent Hermitian eigendecomposition.
CVector evolve(const CMatrix& H, const CVector& psi, double t) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(H);
  const Eigen::VectorXd E = es.eigenvalues();
  CVector phase(E.size());
  for (Eigen::Index k = 0; k < E.size(); ++k)
    phase[k] = std::exp(cplx(0.0, -2.0 * std::numbers::pi * E[k] * t));
  return es.eigenvectors() * phase.asDiagonal() * (es.eigenvectors().adjoint() * psi);
}

CVector x_product(std::initializer_list<int> signs) {
  CVector psi = CVector::Ones(1);
  for (int s : signs) {
    Eigen::Vector2cd v(1.0 / std::sqrt(2.0), s * 1.0 / std::sqrt(2.0));
    CVector next(psi.size() * 2);
    for (Eigen::Index a = 0; a < psi.size(); ++a) {
      next[2 * a] = psi[a] * v[0];
      next[2 * a + 1] = psi[a] * v[1];
    }
    psi = next;
  }
  return psi;
}

double expect(const CMatrix& op, const CVector& psi) { return psi.dot(op * psi).real(); }

}  // namespace

TEST(Dipolar, PerpendicularAndParallel) {
  const Vec3 z(0, 0, 1);
  EXPECT_NEAR(dipolar_coupling(Vec3(10, 0, 0), z), 0.052, 1e-12);
  EXPECT_NEAR(dipolar_coupling(Vec3(0, 0, 10), z), -0.104, 1e-12);
  EXPECT_NEAR(dipolar_coupling(Vec3(0, 0, 10), 3.0 * z), -0.104, 1e-12);
}

TEST(Dipolar, MagicAngleVanishes) {
  const double th = std::acos(1.0 / std::sqrt(3.0));
  EXPECT_NEAR(dipolar_coupling(Vec3(std::sin(th), 0, std::cos(th)) * 7.0, Vec3(0, 0, 1)), 0.0, 1e-14);
}

TEST(Dipolar, ZeroSeparationThrows) {
  EXPECT_THROW(dipolar_coupling(Vec3::Zero(), Vec3(0, 0, 1)), DomainError);
}

TEST(NvScaling, FactorPerParticipant) {
  EXPECT_DOUBLE_EQ(nv_scaling(1.0, Species::P1, Species::P1), 1.0);
  EXPECT_NEAR(nv_scaling(1.0, Species::NV, Species::P1), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(nv_scaling(1.0, Species::NV, Species::NV), 2.0, 1e-15);
}

TEST(NvScaling, SpinOneSubspaceFlipFlop) {
  // Spin-1 S+ restricted to {|0>, |-1>} has matrix element sqrt(2).
  Eigen::Matrix3d Sp = Eigen::Matrix3d::Zero();
  Sp(0, 1) = std::sqrt(2.0);
  Sp(1, 2) = std::sqrt(2.0);
  const double e = Sp(1, 2);
  // Flip-flop amplitude between |0,-1> and |-1,0> for two NV, relative to spin-1/2.
  const double spin1 = e * e;
  std::vector<SpinSite> s{site(Species::NV, 0, 0, Vec3::Zero()),
                          site(Species::NV, 0, 0, Vec3(10, 0, 0))};
  const std::vector<Coupling> c{{0, 1, 1.0}};
  const auto H = build_secular_intra(s, c);
  EXPECT_NEAR(std::abs(H.matrix(1, 2)) / 0.25, spin1, 1e-12);
}

TEST(Builders, SecularIntraMatrixElements) {
  std::vector<SpinSite> s{site(Species::P1, 1, 0, Vec3::Zero()),
                          site(Species::P1, 1, 0, Vec3(0, 0, 10))};
  const auto c = pair_couplings(s, Vec3(0, 0, 1));
  ASSERT_EQ(c.size(), 1u);
  const double J = c[0].J;
  const auto H = build_secular_intra(s, c);
  EXPECT_NEAR(H.matrix(1, 2).real(), -J / 4.0, 1e-15);
  EXPECT_NEAR(H.matrix(2, 1).real(), -J / 4.0, 1e-15);
  EXPECT_NEAR(H.matrix(0, 0).real(), J / 4.0, 1e-15);
  EXPECT_NEAR(H.matrix(1, 1).real(), -J / 4.0, 1e-15);
  EXPECT_NEAR(H.matrix(0, 3).real(), 0.0, 1e-15);
  EXPECT_TRUE(H.is_hermitian());
}

TEST(Builders, InterHasOnlyIsing) {
  std::vector<SpinSite> s{site(Species::NV, 0, 0, Vec3::Zero()),
                          site(Species::P1, 1, 0, Vec3(10, 0, 0))};
  const std::vector<Coupling> c{{0, 1, 0.05}};
  const auto H = build_ising_inter(s, c);
  const double J = 0.05 * std::sqrt(2.0);
  EXPECT_NEAR(H.matrix(0, 0).real(), J / 4.0, 1e-15);
  EXPECT_NEAR(H.matrix(1, 1).real(), -J / 4.0, 1e-15);
  EXPECT_EQ(H.matrix(1, 2), cplx(0.0));
  EXPECT_THROW(build_secular_intra(s, c), MisuseError);
  EXPECT_THROW(build_dressed_intra(s, c), MisuseError);
}

TEST(Builders, SameGroupNeedsSameAxis) {
  std::vector<SpinSite> s{site(Species::P1, 1, 0, Vec3::Zero()),
                          site(Species::P1, 1, 2, Vec3(10, 0, 0))};
  const std::vector<Coupling> c{{0, 1, 0.05}};
  EXPECT_THROW(build_secular_intra(s, c), MisuseError);
  EXPECT_NO_THROW(build_ising_inter(s, c));
}

TEST(Builders, RandomClustersAreHermitianAndDressedConservesSx) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  std::uniform_int_distribution<int> ax(0, 1);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<SpinSite> s;
    s.push_back(site(Species::NV, 0, 0, Vec3(u(rng), u(rng), u(rng))));
    for (int k = 0; k < 5; ++k)
      s.push_back(site(Species::P1, 1, ax(rng), Vec3(u(rng), u(rng), u(rng))));
    const auto c = pair_couplings(s, crystal_axes()[0]);
    const auto lab = build_lab_secular(s, c);
    const auto dr = build_dressed(s, c);
    EXPECT_LT(lab.hermiticity_defect(), 1e-14);
    EXPECT_LT(dr.hermiticity_defect(), 1e-14);
    SpinOperatorSet ops(s.size());
    const CMatrix Sx = ops.total(pauli::sx());
    const CMatrix Sz = ops.total(pauli::sz());
    EXPECT_LT((dr.matrix * Sx - Sx * dr.matrix).norm(), 1e-12);
    EXPECT_LT((lab.matrix * Sz - Sz * lab.matrix).norm(), 1e-12);
  }
}

TEST(Builders, FrameMismatchOnAdd) {
  std::vector<SpinSite> s{site(Species::P1, 1, 0, Vec3::Zero()),
                          site(Species::P1, 1, 0, Vec3(10, 0, 0))};
  const std::vector<Coupling> c{{0, 1, 0.05}};
  auto lab = build_secular_intra(s, c);
  EXPECT_THROW(lab += build_dressed_intra(s, c), MisuseError);
}

TEST(Builders, DriveAndDetunings) {
  std::vector<SpinSite> s{site(Species::P1, 1, 0, Vec3::Zero()),
                          site(Species::P1, 1, 0, Vec3(10, 0, 0))};
  s[1].detuning = 0.3;
  const std::vector<double> om{2.0, 0.0};
  const auto D = build_drive(s, om);
  EXPECT_NEAR(D.matrix(0, 2).real(), 1.0, 1e-15);
  EXPECT_NEAR(D.matrix(0, 1).real(), 0.0, 1e-15);
  const auto Z = build_detunings(s);
  EXPECT_NEAR(Z.matrix(0, 0).real(), 0.15, 1e-15);
  EXPECT_NEAR(Z.matrix(1, 1).real(), -0.15, 1e-15);
  const std::vector<double> bad{1.0};
  EXPECT_THROW(build_drive(s, bad), MisuseError);
}

TEST(OperatorSet, SizeLimits) {
  EXPECT_THROW(SpinOperatorSet(0), MisuseError);
  EXPECT_THROW(SpinOperatorSet(kMaxClusterSites + 1), MisuseError);
  SpinOperatorSet ops(3);
  EXPECT_EQ(ops.dim(), 8u);
  CMatrix m = CMatrix::Zero(8, 8);
  EXPECT_THROW(ops.add_bilinear(m, 1, pauli::sx(), 1, pauli::sx(), 1.0), MisuseError);
  EXPECT_THROW(ops.sz(3), MisuseError);
}

TEST(OperatorSet, ApplyLocalMatchesEmbed) {
  SpinOperatorSet ops(3);
  CVector psi = CVector::Random(8);
  psi.normalize();
  for (std::size_t i = 0; i < 3; ++i) {
    CVector a = psi;
    ops.apply_local(a, i, pauli::sy());
    EXPECT_LT((a - ops.sy(i) * psi).norm(), 1e-14);
    EXPECT_NEAR(std::abs(ops.expect_local(psi, i, pauli::sz()) - psi.dot(ops.sz(i) * psi)), 0.0, 1e-14);
  }
}

TEST(Dressed, MatchesDrivenLabFrameAtStrongDrive) {
  // Two same-group spins under a strong resonant drive along x.
  std::vector<SpinSite> s{site(Species::P1, 1, 0, Vec3::Zero()),
                          site(Species::P1, 1, 0, Vec3(0, 0, 1))};
  const double J = 1.0;
  const double omega = 50.0 * J;
  const std::vector<Coupling> c{{0, 1, J}};
  SpinOperatorSet ops(2);
  const std::vector<double> om{omega, omega};
  const CMatrix lab = build_secular_intra(s, c).matrix + build_drive(s, om).matrix;
  const CMatrix dressed = build_dressed_intra(s, c).matrix;
  const CMatrix Sx0 = ops.sx(0);
  // Total Sx commutes with the drive, so <Sx_0> is frame independent.
  const CVector psi = x_product({1, -1});
  double worst = 0.0;
  for (int k = 1; k <= 40; ++k) {
    const double t = 0.1 * k / J;
    worst = std::max(worst, std::abs(expect(Sx0, evolve(lab, psi, t)) -
                                     expect(Sx0, evolve(dressed, psi, t))));
  }
  EXPECT_LT(worst, 0.02 * 0.5);
  EXPECT_NEAR(expect(Sx0, evolve(dressed, psi, 2.0 / J)), -0.5, 1e-10);
}

TEST(Dressed, InterPairFullTransferAtInverseCoupling) {
  std::vector<SpinSite> s{site(Species::P1, 1, 0, Vec3::Zero()),
                          site(Species::P1, 2, 0, Vec3(0, 0, 1))};
  const double J = 0.08;
  const std::vector<Coupling> c{{0, 1, J}};
  const auto H = build_dressed_inter(s, c);
  SpinOperatorSet ops(2);
  const CVector psi = x_product({1, -1});
  EXPECT_NEAR(expect(ops.sx(0), evolve(H.matrix, psi, 1.0 / J)), -0.5, 1e-10);
  EXPECT_NEAR(expect(ops.sx(0), evolve(H.matrix, psi, 0.5 / J)), 0.0, 1e-10);
}

TEST(Dressed, EffectiveDisorder) {
  EXPECT_NEAR(effective_disorder(1.36, 6.4), 0.1445, 5e-5);
  EXPECT_THROW(effective_disorder(1.0, 0.0), DomainError);
  EXPECT_NEAR(effective_rabi(3.0, 4.0), 5.0, 1e-15);
  EXPECT_NEAR(tilt_projection(3.0, 4.0), 0.6, 1e-15);
}

TEST(Json, HamiltonianSerializes) {
  std::vector<SpinSite> s{site(Species::P1, 1, 0, Vec3::Zero()),
                          site(Species::P1, 1, 0, Vec3(10, 0, 0))};
  const std::vector<Coupling> c{{0, 1, 0.05}};
  const nlohmann::json j = build_secular_intra(s, c);
  EXPECT_EQ(j.at("frame").get<std::string>(), "lab_secular");
}
