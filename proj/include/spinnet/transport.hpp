#ifndef SPINNET_TRANSPORT_HPP
#define SPINNET_TRANSPORT_HPP

// Semiclassical polarization transport: golden-rule flip-flop rates on a spin network, the
// linear master equation dP_i/dt = sum_j R_ij (P_j - P_i) - P_i / T1rho_i, and diffusion
// analysis of the resulting mean-squared displacement.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spinnet/constants.hpp"
#include "spinnet/errors.hpp"
#include "spinnet/fitkit.hpp"
#include "spinnet/network.hpp"
#include "spinnet/parallel.hpp"
#include "spinnet/random.hpp"
#include "spinnet/spinops.hpp"
#include "spinnet/stats.hpp"

namespace spinnet {

inline constexpr double kRateFloor = 1e-6;  // 1/us, pairs below this bound are dropped

/// 2 |Jt|^2 Gamma / (Gamma^2 + Delta^2): the cyclic-frequency golden-rule expression, MHz.
inline double golden_rule_rate(double j_eff, double gamma, double delta_eff) {
  if (!(gamma > 0.0)) throw DomainError("HH linewidth Gamma must be positive");
  return 2.0 * j_eff * j_eff * gamma / (gamma * gamma + delta_eff * delta_eff);
}

/// Transition rate in 1/us entering the master equation.
inline double transfer_rate(double j_eff, double gamma, double delta_eff) {
  return constants::kTwoPi * golden_rule_rate(j_eff, gamma, delta_eff);
}

struct RateEntry {
  std::size_t i = 0;
  std::size_t j = 0;
  double rate = 0.0;  // 1/us
};

/// Sparse symmetric transfer rates; each pair stored once with i < j.
struct RateMatrix {
  std::size_t size = 0;
  std::vector<RateEntry> entries;
  double cutoff_radius = std::numeric_limits<double>::infinity();  // nm

  std::vector<double> row_sums() const {
    std::vector<double> s(size, 0.0);
    for (const auto& e : entries) {
      s[e.i] += e.rate;
      s[e.j] += e.rate;
    }
    return s;
  }

  const RateEntry* hottest() const {
    const RateEntry* best = nullptr;
    for (const auto& e : entries)
      if (!best || e.rate > best->rate) best = &e;
    return best;
  }

  double at(std::size_t a, std::size_t b) const {
    if (a > b) std::swap(a, b);
    for (const auto& e : entries)
      if (e.i == a && e.j == b) return e.rate;
    return 0.0;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(size),
                                              static_cast<Eigen::Index>(size));
    for (const auto& e : entries) {
      m(static_cast<Eigen::Index>(e.i), static_cast<Eigen::Index>(e.j)) = e.rate;
      m(static_cast<Eigen::Index>(e.j), static_cast<Eigen::Index>(e.i)) = e.rate;
    }
    return m;
  }

  void validate() const {
    for (const auto& e : entries) {
      if (e.i >= size || e.j >= size || e.i == e.j) throw MisuseError("invalid rate entry");
      if (!(e.rate >= 0.0) || !std::isfinite(e.rate))
        throw NumericError("rate entries must be finite and >= 0");
    }
  }
};

struct RateOptions {
  double omega = 6.40;  // MHz, common Rabi frequency (Hartmann-Hahn matched)
  double gamma = 0.15;  // MHz, HWHM of the HH resonance
  double rate_floor = kRateFloor;
};

/// Effective dressed-frame flip-flop coupling of a pair including NV scaling and tilt.
inline double effective_flip_flop(const SpinSite& a, const SpinSite& b, double J, double omega) {
  const double base = a.same_group(b) ? J / 8.0 : J / 4.0;
  return nv_scaling(base, a.species, b.species) * tilt_projection(omega, a.detuning) *
         tilt_projection(omega, b.detuning);
}

/// Radius beyond which no pair can exceed `floor` (|J| <= 2 J0 / r^3, largest prefactor 1/4
/// times sqrt2 per NV participant, sin(theta) <= 1, zero detuning mismatch).
inline double rate_cutoff_radius(const RateOptions& opt, bool has_nv) {
  const double pref = has_nv ? 0.25 * std::sqrt(2.0) : 0.125;
  // R_max(r) = 2pi * 2 (pref 2 J0 / r^3)^2 / Gamma = floor
  const double c = constants::kTwoPi * 2.0 * std::pow(pref * 2.0 * constants::kDipolarJ0, 2) /
                   opt.gamma;
  return std::pow(c / opt.rate_floor, 1.0 / 6.0);
}

inline RateMatrix build_rates(const SpinNetwork& net, const RateOptions& opt = {}) {
  if (!(opt.omega > 0.0)) throw DomainError("Rabi frequency must be positive");
  if (!(opt.gamma > 0.0)) throw DomainError("HH linewidth Gamma must be positive");
  RateMatrix rm;
  rm.size = net.sites.size();
  bool has_nv = false;
  for (const auto& s : net.sites) has_nv |= s.species == Species::NV;
  rm.cutoff_radius = rate_cutoff_radius(opt, has_nv);
  const double rc2 = rm.cutoff_radius * rm.cutoff_radius;
  std::vector<double> oeff(rm.size);
  for (std::size_t i = 0; i < rm.size; ++i) oeff[i] = effective_rabi(opt.omega, net.sites[i].detuning);
  for (std::size_t i = 0; i < rm.size; ++i) {
    for (std::size_t j = i + 1; j < rm.size; ++j) {
      const Vec3 r = net.sites[j].position - net.sites[i].position;
      const double r2 = r.squaredNorm();
      if (r2 > rc2) continue;
      if (r2 < net.spec.exclusion_radius * net.spec.exclusion_radius * (1.0 - 1e-12))
        throw MisuseError("pair (" + std::to_string(i) + ", " + std::to_string(j) +
                          ") lies inside the exclusion radius");
      const double J = dipolar_coupling(r, net.spec.field_axis);
      const double jt = effective_flip_flop(net.sites[i], net.sites[j], J, opt.omega);
      const double R = transfer_rate(jt, opt.gamma, oeff[i] - oeff[j]);
      if (R >= opt.rate_floor) rm.entries.push_back({i, j, R});
    }
  }
  return rm;
}

// ---------------------------------------------------------------------------------------
// Master equation
// ---------------------------------------------------------------------------------------

struct Trajectory {
  std::vector<double> times;               // us
  std::vector<std::vector<double>> states;  // P_i at each time
};

struct IntegratorOptions {
  double rtol = 1e-10;
  double atol = 1e-13;
  double stability_fraction = 0.1;  // h <= fraction / max_i (sum_j R_ij + 1/T1rho_i)
  std::size_t max_steps = 20'000'000;
};

namespace detail {

struct Csr {
  std::vector<std::size_t> start, col;
  std::vector<double> val, diag;
};

inline Csr to_csr(const RateMatrix& r, std::span<const double> t1rho) {
  Csr c;
  std::vector<std::size_t> deg(r.size, 0);
  for (const auto& e : r.entries) {
    ++deg[e.i];
    ++deg[e.j];
  }
  c.start.assign(r.size + 1, 0);
  for (std::size_t i = 0; i < r.size; ++i) c.start[i + 1] = c.start[i] + deg[i];
  c.col.resize(c.start.back());
  c.val.resize(c.start.back());
  std::vector<std::size_t> fill(c.start.begin(), c.start.end() - 1);
  for (const auto& e : r.entries) {
    c.col[fill[e.i]] = e.j;
    c.val[fill[e.i]++] = e.rate;
    c.col[fill[e.j]] = e.i;
    c.val[fill[e.j]++] = e.rate;
  }
  c.diag.assign(r.size, 0.0);
  for (std::size_t i = 0; i < r.size; ++i) {
    for (std::size_t k = c.start[i]; k < c.start[i + 1]; ++k) c.diag[i] += c.val[k];
    if (!t1rho.empty()) c.diag[i] += 1.0 / t1rho[i];
  }
  return c;
}

inline void rhs(const Csr& c, const std::vector<double>& p, std::vector<double>& out) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    double s = -c.diag[i] * p[i];
    for (std::size_t k = c.start[i]; k < c.start[i + 1]; ++k) s += c.val[k] * p[c.col[k]];
    out[i] = s;
  }
}

}  // namespace detail

inline std::vector<double> relaxation_rates(std::span<const double> t1rho, std::size_t n) {
  std::vector<double> g(n, 0.0);
  if (t1rho.empty()) return g;
  if (t1rho.size() != n) throw MisuseError("one T1rho per site required");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(t1rho[i] > 0.0)) throw DomainError("T1rho must be positive or infinite");
    g[i] = 1.0 / t1rho[i];
  }
  return g;
}

/// Adaptive Dormand-Prince integration, step bounded by the explicit stability limit. Returns
/// the state at each requested sample time (ascending, >= 0). An empty `t1rho` means no
/// relaxation; infinite entries disable relaxation per site.
inline Trajectory integrate_master_equation(const RateMatrix& rates, std::span<const double> t1rho,
                                            std::span<const double> p0,
                                            std::span<const double> sample_times,
                                            const IntegratorOptions& opt = {}) {
  rates.validate();
  const std::size_t n = rates.size;
  if (p0.size() != n) throw MisuseError("initial polarization has the wrong length");
  (void)relaxation_rates(t1rho, n);
  for (std::size_t k = 0; k < sample_times.size(); ++k)
    if (!(sample_times[k] >= 0.0) || (k > 0 && sample_times[k] < sample_times[k - 1]))
      throw MisuseError("sample times must be ascending and >= 0");

  const detail::Csr c = detail::to_csr(rates, t1rho);
  double stiff = 0.0;
  for (double d : c.diag) stiff = std::max(stiff, d);
  const double h_max = stiff > 0.0 ? opt.stability_fraction / stiff
                                   : std::numeric_limits<double>::infinity();
  const double t_end = sample_times.empty() ? 0.0 : sample_times.back();
  if (t_end / h_max > static_cast<double>(opt.max_steps)) {
    const RateEntry* hot = rates.hottest();
    std::string msg = "master equation too stiff for the explicit integrator: " +
                      std::to_string(static_cast<double>(t_end / h_max)) +
                      " steps needed (budget " + std::to_string(opt.max_steps) + ")";
    if (hot)
      msg += "; hottest pair (" + std::to_string(hot->i) + ", " + std::to_string(hot->j) +
             ") with rate " + std::to_string(hot->rate) + " /us";
    throw NumericError(msg);
  }

  // Dormand-Prince 5(4) tableau.
  static constexpr double a21 = 1.0 / 5, a31 = 3.0 / 40, a32 = 9.0 / 40, a41 = 44.0 / 45,
                          a42 = -56.0 / 15, a43 = 32.0 / 9, a51 = 19372.0 / 6561,
                          a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729,
                          a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656, b1 = 35.0 / 384,
                          b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                          b6 = 11.0 / 84, e1 = 71.0 / 57600, e3 = -71.0 / 16695,
                          e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                          e7 = -1.0 / 40;

  std::vector<double> p(p0.begin(), p0.end()), k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n),
      tmp(n), next(n);
  Trajectory out;
  double t = 0.0;
  double h = std::min(h_max, t_end > 0.0 ? t_end / 100.0 : 1.0);
  std::size_t steps = 0;
  detail::rhs(c, p, k1);
  for (double target : sample_times) {
    while (t < target) {
      if (++steps > opt.max_steps) throw NumericError("integrator step budget exhausted");
      double step = std::min({h, h_max, target - t});
      const bool hits = step == target - t;
      auto stage = [&](std::vector<double>& dst, auto&& combo) {
        for (std::size_t i = 0; i < n; ++i) tmp[i] = p[i] + step * combo(i);
        detail::rhs(c, tmp, dst);
      };
      stage(k2, [&](std::size_t i) { return a21 * k1[i]; });
      stage(k3, [&](std::size_t i) { return a31 * k1[i] + a32 * k2[i]; });
      stage(k4, [&](std::size_t i) { return a41 * k1[i] + a42 * k2[i] + a43 * k3[i]; });
      stage(k5, [&](std::size_t i) {
        return a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i];
      });
      stage(k6, [&](std::size_t i) {
        return a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i];
      });
      for (std::size_t i = 0; i < n; ++i)
        next[i] = p[i] + step * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
      detail::rhs(c, next, k7);
      double err = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = step * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                                 e7 * k7[i]);
        const double sc = opt.atol + opt.rtol * std::max(std::abs(p[i]), std::abs(next[i]));
        err = std::max(err, std::abs(e) / sc);
      }
      if (err <= 1.0) {
        t = hits ? target : t + step;
        p.swap(next);
        k1.swap(k7);
      }
      const double factor = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
      h = step * factor;
      if (h < 1e-15 * std::max(1.0, t)) throw NumericError("integrator step size underflow");
    }
    out.times.push_back(target);
    out.states.push_back(p);
  }
  return out;
}

/// Exact solution of the linear master equation through the eigendecomposition of its
/// symmetric generator -(L + diag(1/T1rho)), L the rate-graph Laplacian.
class SpectralPropagator {
 public:
  SpectralPropagator(const RateMatrix& rates, std::span<const double> t1rho) : n_(rates.size) {
    rates.validate();
    const std::vector<double> g = relaxation_rates(t1rho, n_);
    Eigen::MatrixXd m = -rates.dense();
    for (std::size_t i = 0; i < n_; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      m(ii, ii) = -m.row(ii).sum() + g[i];
    }
    // m is the positive semidefinite decay matrix; P(t) = exp(-m t) P0.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw NumericError("generator eigendecomposition failed");
    decay_ = es.eigenvalues();
    vectors_ = es.eigenvectors();
  }

  std::size_t size() const { return n_; }
  const Eigen::VectorXd& decay_rates() const { return decay_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& p0, double t) const {
    const Eigen::VectorXd a = vectors_.transpose() * p0;
    return vectors_ * (a.array() * (-decay_.array() * t).exp()).matrix();
  }

  std::vector<double> apply(std::span<const double> p0, double t) const {
    const Eigen::VectorXd v = apply(Eigen::Map<const Eigen::VectorXd>(p0.data(), static_cast<Eigen::Index>(p0.size())), t);
    return {v.data(), v.data() + v.size()};
  }

  /// exp(-m t) as a dense matrix (used for repeated fixed-duration phases).
  Eigen::MatrixXd matrix(double t) const {
    return vectors_ * (-decay_.array() * t).exp().matrix().asDiagonal() * vectors_.transpose();
  }

  /// sum_i w_i P_i(t) for each weight vector and time, without forming P(t).
  std::vector<std::vector<double>> moments(const Eigen::VectorXd& p0,
                                           const std::vector<Eigen::VectorXd>& weights,
                                           std::span<const double> times) const {
    const Eigen::VectorXd a = vectors_.transpose() * p0;
    std::vector<Eigen::VectorXd> proj;
    for (const auto& w : weights) proj.push_back((vectors_.transpose() * w).cwiseProduct(a));
    std::vector<std::vector<double>> out(weights.size(), std::vector<double>(times.size()));
    for (std::size_t k = 0; k < times.size(); ++k) {
      const Eigen::ArrayXd e = (-decay_.array() * times[k]).exp();
      for (std::size_t w = 0; w < proj.size(); ++w) out[w][k] = (proj[w].array() * e).sum();
    }
    return out;
  }

 private:
  std::size_t n_;
  Eigen::VectorXd decay_;
  Eigen::MatrixXd vectors_;
};

// ---------------------------------------------------------------------------------------
// MSD and diffusion
// ---------------------------------------------------------------------------------------

struct MsdCurve {
  std::vector<double> times;  // us
  std::vector<double> msd;    // nm^2
  std::vector<double> total;  // surviving polarization

  void write_csv(std::ostream& os) const {
    os << "time_us,msd_nm2,total_polarization\n";
    os.precision(17);
    for (std::size_t k = 0; k < times.size(); ++k)
      os << times[k] << ',' << msd[k] << ',' << total[k] << '\n';
  }
};

/// Polarization-weighted second moment about the source site.
inline MsdCurve msd(const Trajectory& traj, std::span<const SpinSite> sites, std::size_t source) {
  if (source >= sites.size()) throw MisuseError("source index out of range");
  MsdCurve out;
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    CompensatedSum num, den;
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const double r2 = (sites[i].position - sites[source].position).squaredNorm();
      num.add(traj.states[k][i] * r2);
      den.add(traj.states[k][i]);
    }
    if (den.value() == 0.0) throw NumericError("no polarization left to weight the MSD");
    out.times.push_back(traj.times[k]);
    out.msd.push_back(num.value() / den.value());
    out.total.push_back(den.value());
  }
  return out;
}

struct DiffusionEstimate {
  double D = 0.0;  // nm^2/us
  double sigma = 0.0;
  double msd_start = 0.0;
  double msd_end = 0.0;
  double t_start = 0.0;
  double t_end = 0.0;
  std::size_t points = 0;
};

/// Slope/6 of MSD(t) over the window d_avg^2 < MSD < 0.5 (L/2)^2, free intercept.
inline DiffusionEstimate extract_diffusion(const MsdCurve& curve, double d_avg, double L) {
  DiffusionEstimate out;
  out.msd_start = d_avg * d_avg;
  out.msd_end = 0.5 * (L / 2.0) * (L / 2.0);
  if (!(out.msd_end > out.msd_start))
    throw FitError("analysis window is empty for L = " + std::to_string(L) +
                   " nm: 0.5 (L/2)^2 must exceed d_avg^2; use a larger box");
  std::vector<double> t, m;
  for (std::size_t k = 0; k < curve.times.size(); ++k)
    if (curve.msd[k] > out.msd_start && curve.msd[k] < out.msd_end) {
      t.push_back(curve.times[k]);
      m.push_back(curve.msd[k]);
    }
  if (t.size() < 3)
    throw FitError("only " + std::to_string(t.size()) +
                   " MSD samples fall inside the diffusive window; use a larger box or a "
                   "longer/denser time grid");
  const auto f = fitkit::linear_fit(t, m, std::nullopt, false);
  out.D = f.params[0] / 6.0;
  out.sigma = f.sigma[0] / 6.0;
  out.t_start = *std::min_element(t.begin(), t.end());
  out.t_end = *std::max_element(t.begin(), t.end());
  out.points = t.size();
  return out;
}

struct Extrapolation {
  double D_inf = 0.0;
  double sigma = 0.0;
  double slope = 0.0;  // dD/d(1/L), nm^3/us
  bool sigma_reliable = true;
  fitkit::FitResult fit;
};

/// Linear regression of D_L on 1/L; the intercept is D_inf.
inline Extrapolation finite_size_extrapolate(std::span<const double> L, std::span<const double> D,
                                             std::span<const double> sigma = {}) {
  if (L.size() != D.size()) throw MisuseError("L and D lists differ in length");
  if (L.size() < 2) throw FitError("finite-size extrapolation needs at least two box sizes");
  std::vector<double> inv;
  for (double l : L) {
    if (!(l > 0.0)) throw DomainError("box sizes must be positive");
    inv.push_back(1.0 / l);
  }
  std::optional<std::span<const double>> s;
  if (!sigma.empty()) {
    if (sigma.size() != L.size()) throw MisuseError("sigma list has the wrong length");
    if (std::all_of(sigma.begin(), sigma.end(), [](double v) { return v > 0.0; })) s = sigma;
  }
  Extrapolation out;
  out.fit = fitkit::linear_fit(inv, D, s, false);
  out.slope = out.fit.params[0];
  out.D_inf = out.fit.params[1];
  out.sigma = out.fit.sigma[1];
  out.sigma_reliable = out.fit.sigma_reliable;
  return out;
}

/// L_D = sqrt(6 D tau).
inline double diffusion_length(double D, double tau) {
  if (!(D >= 0.0) || !(tau >= 0.0)) throw DomainError("diffusion length needs D >= 0 and tau >= 0");
  return std::sqrt(6.0 * D * tau);
}

// ---------------------------------------------------------------------------------------
// Finite-size scaling pipeline
// ---------------------------------------------------------------------------------------

struct DiffusionConfig {
  double omega = 6.40;   // MHz
  double W = 1.36;       // MHz
  double gamma = 0.15;   // MHz
  double p1_ppm = 1.575;  // addressed P1 subgroup
  double nv_ppm = 0.6;    // addressed NV subgroup; the source NV is added at the center
  std::vector<std::size_t> sizes{100, 200, 400, 800};
  std::size_t realizations = 100;
  std::size_t time_points = 600;
  double exclusion_radius = 1.0;
  std::uint64_t seed = 0;
};

struct SizeResult {
  std::size_t n_p1 = 0;
  double L = 0.0;
  DiffusionEstimate estimate;
  MsdCurve curve;  // realization-averaged
};

struct DiffusionScaling {
  double omega = 0.0;
  std::vector<SizeResult> sizes;
  Extrapolation extrapolation;
};

inline EnsembleSpec diffusion_ensemble(const DiffusionConfig& cfg, double L, std::uint64_t seed) {
  EnsembleSpec es;
  es.box_length = L;
  es.placement = Placement::UniformContinuum;
  es.exclusion_radius = cfg.exclusion_radius;
  es.disorder_sigma = cfg.W;
  es.seed = seed;
  es.populations.push_back({Species::NV, 0, cfg.nv_ppm, {1.0, 0.0, 0.0, 0.0}});
  es.populations.push_back({Species::P1, kP1AddressedSubgroup, cfg.p1_ppm, {1.0, 0.0, 0.0, 0.0}});
  es.central_population = 0;
  return es;
}

namespace detail {

// Numerator of the MSD (sum_i P_i r_i^2) and total polarization for one realization.
inline std::pair<std::vector<double>, std::vector<double>> msd_moments(const SpinNetwork& net,
                                                                      const RateOptions& ro,
                                                                      std::span<const double> t) {
  const RateMatrix rm = build_rates(net, ro);
  const SpectralPropagator prop(rm, {});
  const auto n = static_cast<Eigen::Index>(net.sites.size());
  Eigen::VectorXd p0 = Eigen::VectorXd::Zero(n), r2(n), one = Eigen::VectorXd::Ones(n);
  p0[0] = 1.0;
  for (Eigen::Index i = 0; i < n; ++i)
    r2[i] = (net.sites[static_cast<std::size_t>(i)].position - net.sites[0].position).squaredNorm();
  auto m = prop.moments(p0, {r2, one}, t);
  return {m[0], m[1]};
}

}  // namespace detail

/// D_L for every box size (realization-averaged MSD, jackknife sigma over 10 blocks) and the
/// 1/L extrapolation. The time window per size comes from a pilot realization.
inline DiffusionScaling run_diffusion_scaling(const DiffusionConfig& cfg) {
  if (cfg.sizes.empty()) throw ConfigError("no system sizes given");
  if (cfg.realizations < 2) throw ConfigError("diffusion scaling needs at least two realizations");
  const RateOptions ro{cfg.omega, cfg.gamma, kRateFloor};
  const double d_avg = mean_spacing(cfg.p1_ppm);
  DiffusionScaling out;
  out.omega = cfg.omega;
  for (std::size_t si = 0; si < cfg.sizes.size(); ++si) {
    const std::size_t N = cfg.sizes[si];
    const double L = box_length_for(N, cfg.p1_ppm);
    const double target = 0.5 * (L / 2.0) * (L / 2.0);
    const std::uint64_t size_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(N));

    // Pilot: grow t_max until the MSD passes the window end.
    const SpinNetwork pilot = generate_network(diffusion_ensemble(cfg, L, derive_seed(size_seed, "pilot")));
    double t_max = 10.0;
    for (int it = 0; it < 40; ++it) {
      const std::array<double, 1> tt{t_max};
      const auto [num, tot] = detail::msd_moments(pilot, ro, tt);
      if (num[0] / tot[0] > 1.5 * target) break;
      t_max *= 2.0;
    }
    t_max *= 2.0;
    std::vector<double> times(cfg.time_points);
    for (std::size_t k = 0; k < times.size(); ++k)
      times[k] = t_max * static_cast<double>(k) / static_cast<double>(times.size() - 1);

    std::vector<std::vector<double>> num(cfg.realizations), tot(cfg.realizations);
    parallel_for(cfg.realizations, [&](std::size_t r) {
      const SpinNetwork net = generate_network(diffusion_ensemble(cfg, L, derive_seed(size_seed, r)));
      auto m = detail::msd_moments(net, ro, times);
      num[r] = std::move(m.first);
      tot[r] = std::move(m.second);
    });

    auto curve_of = [&](std::size_t skip_lo, std::size_t skip_hi) {
      MsdCurve c;
      c.times = times;
      for (std::size_t k = 0; k < times.size(); ++k) {
        CompensatedSum a, b;
        std::size_t cnt = 0;
        for (std::size_t r = 0; r < cfg.realizations; ++r) {
          if (r >= skip_lo && r < skip_hi) continue;
          a.add(num[r][k]);
          b.add(tot[r][k]);
          ++cnt;
        }
        c.msd.push_back(a.value() / b.value());
        c.total.push_back(b.value() / static_cast<double>(cnt));
      }
      return c;
    };

    SizeResult sr;
    sr.n_p1 = N;
    sr.L = L;
    sr.curve = curve_of(0, 0);
    sr.estimate = extract_diffusion(sr.curve, d_avg, L);
    const std::size_t blocks = std::min<std::size_t>(10, cfg.realizations);
    std::vector<double> jk;
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t lo = b * cfg.realizations / blocks, hi = (b + 1) * cfg.realizations / blocks;
      try {
        jk.push_back(extract_diffusion(curve_of(lo, hi), d_avg, L).D);
      } catch (const FitError&) {
      }
    }
    if (jk.size() >= 2) {
      double mean = 0.0;
      for (double v : jk) mean += v;
      mean /= static_cast<double>(jk.size());
      double var = 0.0;
      for (double v : jk) var += (v - mean) * (v - mean);
      const double g = static_cast<double>(jk.size());
      sr.estimate.sigma = std::sqrt((g - 1.0) / g * var);
    }
    out.sizes.push_back(std::move(sr));
  }
  std::vector<double> Ls, Ds, Ss;
  for (const auto& s : out.sizes) {
    Ls.push_back(s.L);
    Ds.push_back(s.estimate.D);
    Ss.push_back(s.estimate.sigma);
  }
  out.extrapolation = finite_size_extrapolate(Ls, Ds, Ss);
  return out;
}

inline void to_json(nlohmann::json& j, const DiffusionScaling& d) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : d.sizes)
    rows.push_back({{"N_p1", s.n_p1},
                    {"L_nm", s.L},
                    {"D_L", s.estimate.D},
                    {"sigma", s.estimate.sigma},
                    {"window_msd_nm2", {s.estimate.msd_start, s.estimate.msd_end}},
                    {"window_t_us", {s.estimate.t_start, s.estimate.t_end}},
                    {"window_points", s.estimate.points}});
  j = {{"omega_MHz", d.omega},
       {"sizes", rows},
       {"D_inf", d.extrapolation.D_inf},
       {"sigma", d.extrapolation.sigma},
       {"sigma_reliable", d.extrapolation.sigma_reliable}};
}

}  // namespace spinnet

#endif  // SPINNET_TRANSPORT_HPP
