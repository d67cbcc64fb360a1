#ifndef SPINNET_CLUSTERDYN_HPP
#define SPINNET_CLUSTERDYN_HPP

// Exact state-vector dynamics of small clusters under instantaneous pulses and free
// evolution, plus the disorder-averaged echo experiments built on top of them.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <variant>
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

// ---------------------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------------------

/// Selects the sites a pulse acts on. Empty fields match everything; a non-empty index list
/// restricts to those cluster indices.
struct PulseTarget {
  std::optional<Species> species;
  std::optional<int> subgroup;
  std::optional<int> axis;
  std::vector<std::size_t> indices;

  bool matches(std::size_t index, const SpinSite& s) const {
    if (species && s.species != *species) return false;
    if (subgroup && s.subgroup != *subgroup) return false;
    if (axis && s.axis != *axis) return false;
    if (!indices.empty() && std::find(indices.begin(), indices.end(), index) == indices.end())
      return false;
    return true;
  }

  static PulseTarget all() { return {}; }
  static PulseTarget sites(std::vector<std::size_t> idx) {
    PulseTarget t;
    t.indices = std::move(idx);
    return t;
  }
  static PulseTarget group_of(const SpinSite& s) {
    PulseTarget t;
    t.species = s.species;
    t.subgroup = s.subgroup;
    t.axis = s.axis;
    return t;
  }
};

enum class RotationAxis { X, Y, MinusX, MinusY };

struct PulseEvent {
  PulseTarget target;
  RotationAxis axis = RotationAxis::X;
  double angle = 0.0;  // rad
};

struct FreeEvolution {
  double duration = 0.0;  // us
  Frame frame = Frame::LabSecular;
};

using SequenceStep = std::variant<PulseEvent, FreeEvolution>;

struct Sequence {
  std::vector<SequenceStep> steps;
  bool phase_cycle = false;  // final pi/2 applied with +x and -x, signal from the difference

  Sequence& pulse(PulseTarget target, RotationAxis axis, double angle) {
    steps.emplace_back(PulseEvent{std::move(target), axis, angle});
    return *this;
  }
  Sequence& wait(double duration, Frame frame = Frame::LabSecular) {
    steps.emplace_back(FreeEvolution{duration, frame});
    return *this;
  }

  void validate() const {
    for (const auto& s : steps) {
      if (const auto* p = std::get_if<PulseEvent>(&s)) {
        if (!std::isfinite(p->angle)) throw MisuseError("pulse angle must be finite");
      } else {
        const double d = std::get<FreeEvolution>(s).duration;
        if (!(d >= 0.0) || !std::isfinite(d))
          throw MisuseError("free evolution duration must be finite and >= 0");
      }
    }
  }
};

/// exp(-i angle n.S) for a spin-1/2.
inline Mat2 rotation(RotationAxis axis, double angle) {
  Mat2 n;
  switch (axis) {
    case RotationAxis::X: n = pauli::sx(); break;
    case RotationAxis::Y: n = pauli::sy(); break;
    case RotationAxis::MinusX: n = -pauli::sx(); break;
    case RotationAxis::MinusY: n = -pauli::sy(); break;
  }
  return std::cos(angle / 2.0) * pauli::identity() - cplx(0.0, 2.0 * std::sin(angle / 2.0)) * n;
}

// ---------------------------------------------------------------------------------------
// Propagation
// ---------------------------------------------------------------------------------------

/// Cached eigendecomposition of a Hermitian cluster Hamiltonian; applies exp(-i 2pi H t).
class Propagator {
 public:
  explicit Propagator(const ClusterHamiltonian& h) : frame_(h.frame) {
    if (!h.is_hermitian(1e-12))
      throw MisuseError("Hamiltonian is not Hermitian (defect " +
                        std::to_string(h.hermiticity_defect()) + ")");
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h.matrix);
    if (es.info() != Eigen::Success) throw NumericError("Hermitian eigendecomposition failed");
    energies_ = es.eigenvalues();
    vectors_ = es.eigenvectors();
  }

  Frame frame() const { return frame_; }
  const Eigen::VectorXd& energies() const { return energies_; }
  const CMatrix& eigenvectors() const { return vectors_; }

  template <class Derived>
  auto apply(const Eigen::MatrixBase<Derived>& states, double t) const {
    const CVector phase = phases(t);
    return (vectors_ * (phase.asDiagonal() * (vectors_.adjoint() * states))).eval();
  }

  CMatrix unitary(double t) const {
    return vectors_ * phases(t).asDiagonal() * vectors_.adjoint();
  }

 private:
  CVector phases(double t) const {
    CVector p(energies_.size());
    for (Eigen::Index k = 0; k < energies_.size(); ++k)
      p[k] = std::polar(1.0, -constants::kTwoPi * energies_[k] * t);
    return p;
  }

  Frame frame_;
  Eigen::VectorXd energies_;
  CMatrix vectors_;
};

namespace detail {

/// Applies a single-site operator to every column of a state matrix.
inline void apply_local_columns(CMatrix& states, std::size_t num_sites, std::size_t site,
                                const Mat2& op) {
  const std::size_t bit = std::size_t{1} << (num_sites - 1 - site);
  const auto dim = static_cast<std::size_t>(states.rows());
  for (Eigen::Index c = 0; c < states.cols(); ++c)
    for (std::size_t k = 0; k < dim; ++k) {
      if (k & bit) continue;
      const cplx up = states(k, c), dn = states(k | bit, c);
      states(k, c) = op(0, 0) * up + op(0, 1) * dn;
      states(k | bit, c) = op(1, 0) * up + op(1, 1) * dn;
    }
}

inline void apply_pulse(CMatrix& states, std::span<const SpinSite> sites, const PulseEvent& p) {
  const Mat2 u = rotation(p.axis, p.angle);
  for (std::size_t i = 0; i < sites.size(); ++i)
    if (p.target.matches(i, sites[i])) apply_local_columns(states, sites.size(), i, u);
}

// <sigma_z> of one site for each column.
inline Eigen::VectorXd sigma_z_columns(const CMatrix& states, std::size_t num_sites,
                                       std::size_t site) {
  const std::size_t bit = std::size_t{1} << (num_sites - 1 - site);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(states.cols());
  for (Eigen::Index c = 0; c < states.cols(); ++c)
    for (Eigen::Index k = 0; k < states.rows(); ++k)
      out[c] += ((static_cast<std::size_t>(k) & bit) ? -1.0 : 1.0) * std::norm(states(k, c));
  return out;
}

}  // namespace detail

/// Piecewise evolution. Returns the state after every step (the first entry is the input).
inline std::vector<CVector> evolve(const CVector& state, const ClusterHamiltonian& h,
                                   const Sequence& seq) {
  seq.validate();
  if (static_cast<std::size_t>(state.size()) != h.dim())
    throw MisuseError("state dimension does not match the Hamiltonian");
  const Propagator prop(h);
  std::vector<CVector> out{state};
  CMatrix cur = state;
  for (const auto& step : seq.steps) {
    if (const auto* p = std::get_if<PulseEvent>(&step)) {
      detail::apply_pulse(cur, h.sites, *p);
    } else {
      const auto& f = std::get<FreeEvolution>(step);
      if (f.frame != h.frame)
        throw MisuseError("free evolution frame does not match the Hamiltonian frame");
      cur = prop.apply(cur, f.duration);
    }
    out.emplace_back(cur.col(0));
  }
  return out;
}

/// Computational-basis product state; bit set in `down_mask` (site 0 = most significant) is |down>.
inline CVector basis_state(std::size_t num_sites, std::size_t down_mask) {
  const std::size_t dim = std::size_t{1} << num_sites;
  if (down_mask >= dim) throw MisuseError("basis index out of range");
  CVector v = CVector::Zero(static_cast<Eigen::Index>(dim));
  v[static_cast<Eigen::Index>(down_mask)] = 1.0;
  return v;
}

/// Maps a dressed-frame state back to the rotating frame of a drive sum Omega_i S^x_i.
inline CVector from_drive_frame(const CVector& state, std::span<const double> omega, double t) {
  const auto n = omega.size();
  CMatrix m = state;
  for (std::size_t i = 0; i < n; ++i)
    detail::apply_local_columns(m, n, i, rotation(RotationAxis::X, constants::kTwoPi * omega[i] * t));
  return m.col(0);
}

// ---------------------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------------------

struct TraceResult {
  std::vector<double> abscissa;  // us
  std::vector<double> signal;
  std::vector<double> sem;
  std::size_t realizations = 0;

  void write_csv(std::ostream& os) const {
    os << "abscissa_us,signal,sem\n";
    os.precision(17);
    for (std::size_t k = 0; k < abscissa.size(); ++k)
      os << abscissa[k] << ',' << signal[k] << ',' << sem[k] << '\n';
  }
};

inline TraceResult reduce_traces(std::span<const double> abscissa,
                                 const std::vector<std::vector<double>>& rows) {
  const SeriesStats st = column_stats(rows);
  TraceResult out;
  out.abscissa.assign(abscissa.begin(), abscissa.end());
  out.signal = st.mean;
  out.sem = st.sem;
  out.realizations = rows.size();
  return out;
}

inline void to_json(nlohmann::json& j, const TraceResult& t) {
  j = {{"abscissa_us", t.abscissa}, {"signal", t.signal}, {"sem", t.sem},
       {"realizations", t.realizations}};
}

// ---------------------------------------------------------------------------------------
// Cluster sampling
// ---------------------------------------------------------------------------------------

/// One bath group of a sensor cluster: `count` nearest spins of a population, optionally
/// flipped by the bath pi pulse.
struct BathGroup {
  Population population;
  std::size_t count = 0;
  bool flipped = true;
};

struct ClusterSpec {
  Population sensor{Species::NV, 0, 0.0, {1.0, 0.0, 0.0, 0.0}};
  std::vector<BathGroup> bath;
  Placement placement = Placement::DiamondLattice;
  double exclusion_radius = 1.0;
  Vec3 field_axis = Vec3(1.0, 1.0, 1.0).normalized();
  std::size_t min_candidates = 24;  // expected population members in the sampling box

  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& g : bath) n += g.count;
    return n;
  }
};

/// 1 NV sensor + `bath_size` P1 spins of one resonance group at `ppm`.
inline ClusterSpec nv_p1_cluster(double ppm, std::size_t bath_size = 5) {
  ClusterSpec c;
  c.bath.push_back({Population{Species::P1, kP1AddressedSubgroup, ppm, {1.0, 0.0, 0.0, 0.0}},
                    bath_size, true});
  return c;
}

/// NV-NV cluster: `per_axis[a]` NVs on axis a (the sensor counts towards axis 0). Groups listed
/// in `flipped_axes` receive the bath pi pulse. `ppm_per_axis` is the density of each axis group.
inline ClusterSpec nv_nv_cluster(double ppm_per_axis, std::array<std::size_t, 4> per_axis,
                                 std::vector<int> flipped_axes) {
  if (per_axis[0] == 0) throw MisuseError("the sensor axis group needs at least one NV");
  ClusterSpec c;
  c.field_axis = Vec3(1.0, 1.0, 1.5).normalized();
  for (int a = 0; a < 4; ++a) {
    const std::size_t n = per_axis[a] - (a == 0 ? 1 : 0);
    if (n == 0) continue;
    Population p{Species::NV, 0, ppm_per_axis, {0.0, 0.0, 0.0, 0.0}};
    p.axis_weights[a] = 1.0;
    const bool flip =
        std::find(flipped_axes.begin(), flipped_axes.end(), a) != flipped_axes.end();
    c.bath.push_back({p, n, flip});
  }
  return c;
}

struct SampledCluster {
  std::vector<SpinSite> sites;  // site 0 is the sensor
  std::vector<bool> flipped;    // bath pi target per site
};

namespace detail {

inline bool member_of(const SpinSite& s, const Population& p) {
  return s.species == p.species && s.subgroup == p.subgroup && p.axis_weights[s.axis] > 0.0;
}

}  // namespace detail

/// Draws a network around a central sensor and keeps the nearest members of every bath group.
inline SampledCluster sample_cluster(const ClusterSpec& spec, std::uint64_t seed) {
  if (spec.size() > kMaxClusterSites)
    throw MisuseError("cluster of " + std::to_string(spec.size()) + " sites exceeds the cap of " +
                      std::to_string(kMaxClusterSites));
  EnsembleSpec es;
  es.placement = spec.placement;
  es.exclusion_radius = spec.exclusion_radius;
  es.field_axis = spec.field_axis;
  es.seed = seed;
  Population sensor = spec.sensor;
  sensor.ppm = 0.0;
  es.populations.push_back(sensor);
  es.central_population = 0;
  double volume = 0.0;
  for (const auto& g : spec.bath) {
    if (!(g.population.ppm > 0.0)) throw DomainError("bath group density must be positive");
    const double want = static_cast<double>(std::max(spec.min_candidates, 3 * g.count));
    volume = std::max(volume, want / ppm_to_density(g.population.ppm));
    es.populations.push_back(g.population);
  }
  es.box_length = volume > 0.0 ? std::cbrt(volume) : 10.0 * spec.exclusion_radius;
  const SpinNetwork net = generate_network(es);

  SampledCluster out;
  out.sites.push_back(net.sites.front());
  out.flipped.push_back(false);
  const Vec3 c = net.sites.front().position;
  std::vector<bool> used(net.sites.size(), false);
  used[0] = true;
  for (const auto& g : spec.bath) {
    std::vector<std::size_t> cand;
    for (std::size_t i = 1; i < net.sites.size(); ++i)
      if (!used[i] && detail::member_of(net.sites[i], g.population)) cand.push_back(i);
    std::sort(cand.begin(), cand.end(), [&](auto a, auto b) {
      return (net.sites[a].position - c).squaredNorm() < (net.sites[b].position - c).squaredNorm();
    });
    if (cand.size() < g.count) throw GenerationError("sampling box holds too few bath spins");
    for (std::size_t k = 0; k < g.count; ++k) {
      used[cand[k]] = true;
      out.sites.push_back(net.sites[cand[k]]);
      out.flipped.push_back(g.flipped);
    }
  }
  for (std::size_t i = 0; i < out.sites.size(); ++i) out.sites[i].id = static_cast<int>(i);
  return out;
}

// ---------------------------------------------------------------------------------------
// Echo experiments
// ---------------------------------------------------------------------------------------

/// Phase-cycled echo signal of sensor site 0 for one cluster realization, averaged over all
/// z-basis states of the spins outside the sensor group. Sensor-group pulses: pi/2 - tau - pi
/// - tau - pi/2(+-x); with `bath_pi` the flipped sites also get a pi at the midpoint.
inline std::vector<double> echo_signal(const SampledCluster& cl, const ClusterHamiltonian& h,
                                       std::span<const double> tau, bool bath_pi) {
  const std::size_t n = cl.sites.size();
  const Propagator prop(h);
  const PulseTarget sensor = PulseTarget::group_of(cl.sites[0]);
  std::vector<std::size_t> bath_idx, flipped_idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (sensor.matches(i, cl.sites[i])) continue;
    bath_idx.push_back(i);
    if (cl.flipped[i]) flipped_idx.push_back(i);
  }
  const std::size_t nb = std::size_t{1} << bath_idx.size();
  CMatrix init = CMatrix::Zero(static_cast<Eigen::Index>(h.dim()), static_cast<Eigen::Index>(nb));
  for (std::size_t b = 0; b < nb; ++b) {
    std::size_t mask = 0;
    for (std::size_t k = 0; k < bath_idx.size(); ++k)
      if ((b >> k) & 1U) mask |= std::size_t{1} << (n - 1 - bath_idx[k]);
    init(static_cast<Eigen::Index>(mask), static_cast<Eigen::Index>(b)) = 1.0;
  }
  const double half_pi = std::numbers::pi / 2.0, pi = std::numbers::pi;
  detail::apply_pulse(init, cl.sites, {sensor, RotationAxis::X, half_pi});

  std::vector<double> out;
  out.reserve(tau.size());
  for (double t : tau) {
    CMatrix s = prop.apply(init, t);
    detail::apply_pulse(s, cl.sites, {sensor, RotationAxis::X, pi});
    if (bath_pi && !flipped_idx.empty())
      detail::apply_pulse(s, cl.sites, {PulseTarget::sites(flipped_idx), RotationAxis::X, pi});
    s = prop.apply(s, t);
    CMatrix plus = s, minus = s;
    detail::apply_pulse(plus, cl.sites, {sensor, RotationAxis::X, half_pi});
    detail::apply_pulse(minus, cl.sites, {sensor, RotationAxis::MinusX, half_pi});
    const Eigen::VectorXd zp = detail::sigma_z_columns(plus, n, 0);
    const Eigen::VectorXd zm = detail::sigma_z_columns(minus, n, 0);
    out.push_back(0.5 * (zp - zm).mean());
  }
  return out;
}

struct EchoConfig {
  ClusterSpec cluster = nv_p1_cluster(1.0);
  std::vector<double> tau;  // us, half echo time
  std::size_t realizations = 200;
  std::uint64_t seed = 0;
  bool bath_pi = true;  // false: plain Hahn echo
};

/// Disorder-averaged echo trace; realization r uses stream derive_seed(seed, r).
inline TraceResult run_echo(const EchoConfig& cfg) {
  if (cfg.tau.empty()) throw MisuseError("empty tau grid");
  for (double t : cfg.tau)
    if (!(t >= 0.0)) throw MisuseError("tau values must be >= 0");
  if (cfg.realizations == 0) throw MisuseError("at least one realization required");
  std::vector<std::vector<double>> rows(cfg.realizations);
  parallel_for(cfg.realizations, [&](std::size_t r) {
    const SampledCluster cl = sample_cluster(cfg.cluster, derive_seed(cfg.seed, r));
    const auto h = build_lab_secular(cl.sites, pair_couplings(cl.sites, cfg.cluster.field_axis));
    rows[r] = echo_signal(cl, h, cfg.tau, cfg.bath_pi);
  });
  return reduce_traces(cfg.tau, rows);
}

inline TraceResult run_deer(EchoConfig cfg) {
  cfg.bath_pi = true;
  return run_echo(cfg);
}

inline TraceResult run_hahn(EchoConfig cfg) {
  cfg.bath_pi = false;
  return run_echo(cfg);
}

/// tau grid 0..tau_scale/ppm: evolution windows shrink inversely with density.
inline std::vector<double> scaled_tau_grid(double ppm, std::size_t points = 40,
                                           double tau_scale = 6.0) {
  if (!(ppm > 0.0)) throw DomainError("density must be positive");
  if (points < 2) throw MisuseError("tau grid needs at least two points");
  std::vector<double> t(points);
  const double tmax = tau_scale / ppm;
  for (std::size_t k = 0; k < points; ++k)
    t[k] = tmax * static_cast<double>(k) / static_cast<double>(points - 1);
  return t;
}

// ---------------------------------------------------------------------------------------
// Rabi
// ---------------------------------------------------------------------------------------

/// Drives the targeted sites at Omega (rotating frame, on-site detunings included) from the
/// all-up state and records their mean <sigma_z>. Interactions are included when requested.
inline TraceResult run_rabi(std::span<const SpinSite> sites, double omega, std::span<const double> t,
                            const PulseTarget& target = PulseTarget::all(),
                            bool interactions = false,
                            const Vec3& field_axis = Vec3(1.0, 1.0, 1.0).normalized()) {
  if (sites.empty()) throw MisuseError("empty cluster");
  std::vector<double> om(sites.size(), 0.0);
  std::vector<std::size_t> driven;
  for (std::size_t i = 0; i < sites.size(); ++i)
    if (target.matches(i, sites[i])) {
      om[i] = omega;
      driven.push_back(i);
    }
  if (driven.empty()) throw MisuseError("Rabi target matches no sites");
  ClusterHamiltonian h = build_drive(sites, om) + build_detunings(sites);
  if (interactions && sites.size() > 1)
    h += build_lab_secular(sites, pair_couplings(sites, field_axis));
  const Propagator prop(h);
  const CVector psi0 = basis_state(sites.size(), 0);
  TraceResult out;
  out.realizations = 1;
  for (double ti : t) {
    const CMatrix s = prop.apply(psi0, ti);
    double z = 0.0;
    for (std::size_t i : driven) z += detail::sigma_z_columns(s, sites.size(), i)[0];
    out.abscissa.push_back(ti);
    out.signal.push_back(z / static_cast<double>(driven.size()));
    out.sem.push_back(0.0);
  }
  return out;
}

/// Dominant oscillation frequency of a uniformly sampled trace (mean removed, zero padded).
inline std::optional<double> fft_peak(const TraceResult& trace, std::size_t pad_to = 4096) {
  if (trace.abscissa.size() < 4) throw MisuseError("trace too short for a spectrum");
  const double dt = trace.abscissa[1] - trace.abscissa[0];
  double mean = 0.0;
  for (double v : trace.signal) mean += v;
  mean /= static_cast<double>(trace.signal.size());
  std::vector<double> centred;
  for (double v : trace.signal) centred.push_back(v - mean);
  return fitkit::peak(fitkit::fft_spectrum(centred, dt, std::max(pad_to, centred.size())));
}

// ---------------------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------------------

struct DephasingFit {
  double rate = 0.0;        // 1/T2, MHz
  double rate_sigma = 0.0;
  double T2 = 0.0;
  double beta = 0.0;
  double beta_sigma = 0.0;
  fitkit::FitResult fit;
};

/// Stretched-exponential fit of an echo trace. Uses the sem column as absolute errors when
/// every entry is positive.
inline DephasingFit extract_dephasing_rate(const TraceResult& trace, bool use_sem = true) {
  const auto [lo, hi] = std::minmax_element(trace.signal.begin(), trace.signal.end());
  if (trace.signal.size() < 4 || !(*hi - *lo > 1e-9 * std::max(1.0, std::abs(*hi))))
    throw FitError("flat trace: no decay to fit");
  fitkit::FitOptions opt;
  const bool weights =
      use_sem && std::all_of(trace.sem.begin(), trace.sem.end(), [](double s) { return s > 0.0; });
  if (weights) {
    opt.sigma_y = trace.sem;
    opt.absolute_sigma = true;
  }
  DephasingFit out;
  out.fit = fitkit::fit(fitkit::models::stretched_exp(), trace.abscissa, trace.signal, opt);
  if (!out.fit.converged) throw FitError("stretched exponential fit did not converge");
  out.T2 = out.fit.value("T2");
  const double span = trace.abscissa.back() - trace.abscissa.front();
  if (out.T2 > 100.0 * span) throw FitError("no decay resolved within the sampled window");
  out.rate = 1.0 / out.T2;
  out.rate_sigma = out.fit.error("T2") / (out.T2 * out.T2);
  out.beta = out.fit.value("beta");
  out.beta_sigma = out.fit.error("beta");
  return out;
}

struct AlphaCalibration {
  double alpha = 0.0;  // MHz/ppm
  double alpha_sigma = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<double> densities;
  std::vector<double> rates;
  std::vector<double> rate_sigmas;
  fitkit::FitResult fit;
};

/// Weighted linear fit of dephasing rate against bath density (through the origin by default).
inline AlphaCalibration calibrate_alpha(std::span<const double> densities,
                                        std::span<const double> rates,
                                        std::span<const double> rate_sigmas,
                                        bool through_origin = true) {
  if (densities.size() != rates.size() || rates.size() != rate_sigmas.size())
    throw MisuseError("density and rate lists differ in length");
  if (densities.size() < 2)
    throw FitError("dephasing coefficient is underdetermined with fewer than two densities");
  AlphaCalibration out;
  out.densities.assign(densities.begin(), densities.end());
  out.rates.assign(rates.begin(), rates.end());
  out.rate_sigmas.assign(rate_sigmas.begin(), rate_sigmas.end());
  const bool weighted =
      std::all_of(rate_sigmas.begin(), rate_sigmas.end(), [](double s) { return s > 0.0; });
  out.fit = fitkit::linear_fit(densities, rates,
                               weighted ? std::optional<std::span<const double>>(rate_sigmas)
                                        : std::nullopt,
                               through_origin);
  out.alpha = out.fit.params[0];
  out.alpha_sigma = out.fit.sigma[0];
  out.intercept = through_origin ? 0.0 : out.fit.params[1];
  out.r_squared = out.fit.r_squared;
  return out;
}

inline AlphaCalibration calibrate_alpha(std::span<const double> densities,
                                        const std::vector<TraceResult>& traces,
                                        bool through_origin = true) {
  if (traces.size() != densities.size()) throw MisuseError("one trace per density required");
  if (densities.size() < 2)
    throw FitError("dephasing coefficient is underdetermined with fewer than two densities");
  std::vector<double> r, s;
  for (const auto& t : traces) {
    const auto d = extract_dephasing_rate(t, false);
    r.push_back(d.rate);
    s.push_back(d.rate_sigma);
  }
  return calibrate_alpha(densities, r, s, through_origin);
}

/// A sensor-bath configuration: `groups` addressed bath groups together holding
/// `density_fraction` of the total density, with dephasing coefficient alpha (MHz/ppm).
struct GroupConfig {
  double groups = 1.0;
  double density_fraction = 1.0;
  double alpha = 0.0;
  double alpha_sigma = 0.0;
};

struct KEstimate {
  double K = 0.0;  // MHz/(group ppm)
  double sigma = 0.0;
};

/// Simulated DEER slope: dephasing rate of each configuration at 1 ppm total density,
/// regressed through the origin against the number of addressed groups.
inline KEstimate compute_K(std::span<const GroupConfig> configs) {
  std::vector<double> g, rate, sig;
  for (const auto& c : configs) {
    if (c.groups < 0.0 || c.density_fraction < 0.0 || c.density_fraction > 1.0)
      throw DomainError("group counts and density fractions must be non-negative fractions");
    if (c.groups == 0.0) continue;
    g.push_back(c.groups);
    rate.push_back(c.alpha * c.density_fraction);
    sig.push_back(c.alpha_sigma * c.density_fraction);
  }
  if (g.empty()) throw FitError("no configuration addresses a bath group");
  const bool weighted = std::all_of(sig.begin(), sig.end(), [](double s) { return s > 0.0; });
  const auto f = fitkit::linear_fit(
      g, rate, weighted ? std::optional<std::span<const double>>(sig) : std::nullopt, true);
  KEstimate out{f.params[0], f.sigma[0]};
  if (!weighted) {
    // Unweighted: exact data gives zero residual spread; propagate the input sigmas instead.
    double sxx = 0.0, var = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) sxx += g[k] * g[k];
    for (std::size_t k = 0; k < g.size(); ++k) var += std::pow(g[k] * sig[k] / sxx, 2);
    out.sigma = std::sqrt(var);
  }
  return out;
}

struct ConcentrationEstimate {
  double mean = 0.0;  // ppm
  double sigma = 0.0;
  double median = 0.0;
  double q16 = 0.0, q84 = 0.0, q025 = 0.0, q975 = 0.0;
  std::size_t rejected = 0;
  std::size_t samples = 0;
  std::optional<std::string> warning;
  std::vector<double> posterior;
};

/// n_total = gamma_exp / K with both inputs sampled as Gaussians. K draws <= 0 are rejected.
inline ConcentrationEstimate estimate_concentration(double gamma_exp, double gamma_sigma, double K,
                                                    double K_sigma, std::size_t n_mc = 10000,
                                                    std::uint64_t seed = 0) {
  if (!(K > 0.0)) throw DomainError("DEER slope K must be positive");
  if (!(gamma_sigma >= 0.0) || !(K_sigma >= 0.0)) throw DomainError("sigmas must be >= 0");
  const std::array<double, 2> means{gamma_exp, K}, sigmas{gamma_sigma, K_sigma};
  const auto mc = fitkit::mc_propagate(
      [](std::span<const double> v) {
        return v[1] > 0.0 ? v[0] / v[1] : std::numeric_limits<double>::quiet_NaN();
      },
      means, sigmas, n_mc, seed);
  ConcentrationEstimate out;
  out.mean = mc.mean;
  out.sigma = mc.sigma;
  out.median = mc.median;
  out.q16 = mc.q16;
  out.q84 = mc.q84;
  out.q025 = mc.q025;
  out.q975 = mc.q975;
  out.rejected = mc.rejected;
  out.samples = n_mc;
  out.posterior = mc.samples;
  if (static_cast<double>(mc.rejected) > 0.01 * static_cast<double>(n_mc))
    out.warning = std::to_string(mc.rejected) + " of " + std::to_string(n_mc) +
                  " K samples were <= 0 and rejected";
  return out;
}

inline void to_json(nlohmann::json& j, const ConcentrationEstimate& c) {
  j = {{"mean_ppm", c.mean},     {"sigma_ppm", c.sigma}, {"median_ppm", c.median},
       {"q16", c.q16},           {"q84", c.q84},         {"q025", c.q025},
       {"q975", c.q975},         {"rejected", c.rejected}, {"samples", c.samples},
       {"warning", c.warning ? nlohmann::json(*c.warning) : nlohmann::json(nullptr)}};
}

}  // namespace spinnet

#endif  // SPINNET_CLUSTERDYN_HPP
