#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "spinnet/fitkit.hpp"

using namespace spinnet;
using namespace spinnet::fitkit;

namespace {

std::vector<double> grid(double a, double b, std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = a + (b - a) * double(i) / double(n - 1);
  return x;
}

std::vector<double> sample(const Model& m, std::span<const double> x, std::vector<double> p) {
  std::vector<double> y;
  for (double v : x) y.push_back(m(v, p));
  return y;
}

}  // namespace

TEST(Lorentzian, NoiselessRoundTrip) {
  const auto m = models::lorentzian();
  const auto x = grid(0.0, 10.0, 201);
  const auto y = sample(m, x, {4.2, 0.7, 2.0, 0.3});
  const auto r = fit(m, x, y);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.value("center"), 4.2, 1e-8);
  EXPECT_NEAR(r.value("hwhm"), 0.7, 1e-8);
  EXPECT_NEAR(r.value("amp"), 2.0, 1e-8);
  EXPECT_NEAR(r.value("offset"), 0.3, 1e-8);
  EXPECT_NEAR(r.r_squared, 1.0, 1e-12);
}

TEST(Lorentzian, DipCenter) {
  // Polarization dip against drive strength on a flat background.
  const auto m = models::lorentzian();
  const auto x = grid(2.0, 6.0, 41);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.003);
  auto y = sample(m, x, {3.95, 0.25, -0.12, 1.0});
  for (auto& v : y) v += noise(rng);
  const auto r = fit(m, x, y);
  EXPECT_NEAR(r.value("center"), 3.95, 3.0 * r.error("center"));
  EXPECT_NEAR(r.value("center"), 3.95, 0.02);
  EXPECT_LT(r.value("amp"), 0.0);
}

TEST(MultiLorentzian, TwoResolvedPeaks) {
  const auto m = models::multi_lorentzian(2);
  const auto x = grid(0.0, 20.0, 401);
  const auto y = sample(m, x, {5.0, 0.5, 1.0, 14.0, 0.8, 0.6, 0.1});
  const auto r = fit(m, x, y);
  std::vector<double> centers{r.value("center0"), r.value("center1")};
  std::sort(centers.begin(), centers.end());
  EXPECT_NEAR(centers[0], 5.0, 1e-6);
  EXPECT_NEAR(centers[1], 14.0, 1e-6);
  EXPECT_NEAR(r.value("offset"), 0.1, 1e-6);
}

TEST(StretchedExp, NoiselessRoundTrip) {
  const auto m = models::stretched_exp();
  const auto x = grid(0.0, 8.0, 80);
  const auto y = sample(m, x, {0.9, 2.5, 1.4});
  const auto r = fit(m, x, y);
  EXPECT_NEAR(r.value("A"), 0.9, 1e-7);
  EXPECT_NEAR(r.value("T2"), 2.5, 1e-7);
  EXPECT_NEAR(r.value("beta"), 1.4, 1e-7);
}

TEST(StretchedExp, BetaBounded) {
  const auto m = models::stretched_exp();
  EXPECT_EQ(m.lower[2], 0.3);
  EXPECT_EQ(m.upper[2], 3.0);
}

TEST(ExpSaturation, CoverageOfOneSigmaIntervals) {
  const auto m = models::exp_saturation();
  const auto x = grid(1.0, 32.0, 32);
  const double sig = 0.01;
  std::vector<double> sy(x.size(), sig);
  std::size_t hitA = 0, hitT = 0;
  const std::size_t trials = 200;
  for (std::size_t t = 0; t < trials; ++t) {
    std::mt19937_64 rng(1000 + t);
    std::normal_distribution<double> noise(0.0, sig);
    auto y = sample(m, x, {0.2, 2.7});
    for (auto& v : y) v += noise(rng);
    FitOptions o;
    o.sigma_y = sy;
    o.absolute_sigma = true;
    const auto r = fit(m, x, y, o);
    hitA += std::abs(r.value("A") - 0.2) < r.error("A");
    hitT += std::abs(r.value("tau") - 2.7) < r.error("tau");
  }
  // Binomial sd at p = 0.683, n = 200 is 0.033.
  EXPECT_NEAR(double(hitA) / trials, 0.683, 0.1);
  EXPECT_NEAR(double(hitT) / trials, 0.683, 0.1);
}

TEST(ExpDecay, RelativeSigmaRescalesByChi2) {
  const auto m = models::exp_decay();
  const auto x = grid(0.0, 5.0, 30);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> noise(0.0, 0.02);
  auto y = sample(m, x, {1.0, 1.5});
  for (auto& v : y) v += noise(rng);
  FitOptions a;
  a.sigma_y = std::vector<double>(x.size(), 1.0);
  FitOptions b = a;
  b.absolute_sigma = true;
  const auto ra = fit(m, x, y, a), rb = fit(m, x, y, b);
  EXPECT_NEAR(ra.value("tau"), rb.value("tau"), 1e-10);
  EXPECT_NEAR(ra.error("tau") / rb.error("tau"), std::sqrt(ra.chi2 / double(ra.dof)), 1e-6);
}

TEST(DampedCosine, RoundTrip) {
  const auto m = models::damped_cosine();
  const auto x = grid(0.0, 4.0, 200);
  const auto y = sample(m, x, {0.5, 2.3, 0.4, 1.7, 0.05});
  const auto r = fit(m, x, y);
  EXPECT_NEAR(r.value("f"), 2.3, 1e-6);
  EXPECT_NEAR(r.value("tau"), 1.7, 1e-6);
}

TEST(Crossover, RoundTrip) {
  const auto m = models::crossover();
  const std::vector<double> x{0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.4, 8.0, 10.0};
  const auto y = sample(m, x, {0.22, 1.36});
  const auto r = fit(m, x, y);
  EXPECT_NEAR(r.value("A_inf"), 0.22, 1e-8);
  EXPECT_NEAR(r.value("W"), 1.36, 1e-8);
}

TEST(Fit, UnderdeterminedThrows) {
  const std::vector<double> x{1.0}, y{0.5};
  EXPECT_THROW(fit(models::exp_saturation(), x, y), FitError);
  EXPECT_THROW(linear_fit(x, y, std::nullopt, false), FitError);
}

TEST(Fit, ZeroDofFlagsSigma) {
  const std::vector<double> x{1.0, 4.0}, y{0.1, 0.18};
  const auto r = fit(models::exp_saturation(), x, y);
  EXPECT_EQ(r.dof, 0u);
  EXPECT_FALSE(r.sigma_reliable);
  EXPECT_TRUE(std::isnan(r.error("A")));
  const auto l = linear_fit(x, y, std::nullopt, false);
  EXPECT_FALSE(l.sigma_reliable);
}

TEST(Fit, NonFiniteDataRejected) {
  const std::vector<double> x{1, 2, 3}, y{1, NAN, 3};
  EXPECT_THROW(fit(models::linear(false), x, y), FitError);
}

TEST(Fit, UnknownModelName) {
  EXPECT_THROW(models::by_name("gaussian"), ConfigError);
  EXPECT_EQ(models::by_name("crossover").name, "crossover");
}

TEST(LinearFit, HeteroscedasticMatchesNormalEquations) {
  const std::vector<double> x{0.8, 2.4, 6.3, 26.0};
  const std::vector<double> y{0.35, 1.09, 2.80, 11.6};
  const std::vector<double> s{0.01, 0.03, 0.1, 0.8};
  // Independent oracle: solve (X^T W X) b = X^T W y.
  Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
  Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Eigen::Vector2d row(x[i], 1.0);
    const double w = 1.0 / (s[i] * s[i]);
    A += w * row * row.transpose();
    rhs += w * row * y[i];
  }
  const Eigen::Vector2d b = A.ldlt().solve(rhs);
  const Eigen::Matrix2d cov = A.inverse();
  const auto r = linear_fit(x, y, std::span<const double>(s), false);
  EXPECT_NEAR(r.value("slope"), b[0], 1e-12);
  EXPECT_NEAR(r.value("intercept"), b[1], 1e-12);
  EXPECT_NEAR(r.error("slope"), std::sqrt(cov(0, 0)), 1e-12);
  // The unweighted slope is pulled toward the loud high-density point.
  const auto u = linear_fit(x, y, std::nullopt, false);
  EXPECT_NE(u.value("slope"), r.value("slope"));
}

TEST(LinearFit, ThroughOrigin) {
  const std::vector<double> x{1, 2, 3, 4}, y{0.45, 0.9, 1.35, 1.8};
  const auto r = linear_fit(x, y, std::nullopt, true);
  EXPECT_NEAR(r.value("slope"), 0.45, 1e-14);
  EXPECT_EQ(r.names.size(), 1u);
  const auto n = fit(models::linear(true), x, y);
  EXPECT_NEAR(n.value("slope"), 0.45, 1e-10);
}

TEST(MonteCarlo, RatioUncertainty) {
  const std::vector<double> mu{10.0, 10.0}, sd{1.0, 1.0};
  const auto r = mc_propagate([](std::span<const double> v) { return v[0] / v[1]; }, mu, sd, 20000, 4);
  // Linearized relative error sqrt(0.1^2 + 0.1^2) = 14.1%.
  EXPECT_NEAR(r.sigma / r.median, 0.141, 0.01);
  EXPECT_EQ(r.accepted, 20000u);
  EXPECT_LT(r.q16, r.median);
  EXPECT_LT(r.median, r.q84);
}

TEST(MonteCarlo, NonFiniteDrawsRejected) {
  const std::vector<double> mu{0.0}, sd{1.0};
  const auto r = mc_propagate([](std::span<const double> v) { return v[0] > 0 ? v[0] : NAN; }, mu, sd, 4000, 1);
  EXPECT_EQ(r.accepted + r.rejected, 4000u);
  EXPECT_NEAR(double(r.rejected) / 4000.0, 0.5, 0.05);
}

TEST(Spectrum, PeakFrequency) {
  std::vector<double> tr;
  const double dt = 0.01;
  for (int i = 0; i < 1024; ++i) tr.push_back(std::cos(2.0 * std::numbers::pi * 6.4 * i * dt));
  const auto s = fft_spectrum(tr, dt, 8192);
  const auto f = peak(s);
  ASSERT_TRUE(f.has_value());
  EXPECT_NEAR(*f, 6.40, 0.01);
}

TEST(Spectrum, NonPowerOfTwoMatches) {
  std::vector<double> tr;
  for (int i = 0; i < 300; ++i) tr.push_back(std::sin(2.0 * std::numbers::pi * 0.1 * i));
  const auto f = peak(fft_spectrum(tr, 1.0));
  ASSERT_TRUE(f.has_value());
  EXPECT_NEAR(*f, 0.1, 2e-3);
}

TEST(Spectrum, DampedLinewidth) {
  // |FT of exp(-t/tau)| falls to half at 2 pi df tau = sqrt(3).
  const double tau = 2.0, dt = 0.01;
  std::vector<double> tr;
  for (int i = 0; i < 8192; ++i) {
    const double t = i * dt;
    tr.push_back(std::exp(-t / tau) * std::cos(2.0 * std::numbers::pi * 6.4 * t));
  }
  const auto s = fft_spectrum(tr, dt, 32768);
  const auto w = peak_fwhm(s);
  ASSERT_TRUE(w.has_value());
  EXPECT_NEAR(*w, std::sqrt(3.0) / (std::numbers::pi * tau), 0.03 * std::sqrt(3.0) / (std::numbers::pi * tau));
}

TEST(Spectrum, FlatTraceHasNoPeak) {
  const std::vector<double> tr(256, 0.0);
  EXPECT_FALSE(peak(fft_spectrum(tr, 0.1)).has_value());
  EXPECT_THROW(fft_spectrum(tr, 0.0), DomainError);
}

TEST(Json, FitResultFields) {
  const std::vector<double> x{1, 2, 3}, y{2, 4, 6.1};
  const nlohmann::json j = linear_fit(x, y, std::nullopt, true);
  EXPECT_EQ(j.at("model"), "linear_through_origin");
  EXPECT_TRUE(j.at("parameters").contains("slope"));
  EXPECT_EQ(j.at("dof"), 2);
}
