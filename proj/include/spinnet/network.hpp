#ifndef SPINNET_NETWORK_HPP
#define SPINNET_NETWORK_HPP

// Disordered defect ensembles: random placement of NV and P1 sites in a cubic box,
// crystal-axis assignment, quenched detunings, and Poisson neighbor statistics.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "spinnet/constants.hpp"
#include "spinnet/errors.hpp"
#include "spinnet/random.hpp"

namespace spinnet {

using Vec3 = Eigen::Vector3d;

enum class Species { NV, P1 };

inline std::string_view to_string(Species s) { return s == Species::NV ? "NV" : "P1"; }

inline Species species_from_string(std::string_view s) {
  if (s == "NV" || s == "nv") return Species::NV;
  if (s == "P1" || s == "p1") return Species::P1;
  throw ConfigError("unknown species '" + std::string(s) + "' (expected NV or P1)");
}

/// P1 hyperfine / Jahn-Teller subgroup population fractions, subgroup index 0..4.
inline constexpr std::array<double, 5> kP1SubgroupFractions{1.0 / 12, 3.0 / 12, 4.0 / 12,
                                                            3.0 / 12, 1.0 / 12};
/// The 3/12 subgroup used for polarization transfer.
inline constexpr int kP1AddressedSubgroup = 1;

/// The four <111> bond directions of diamond, unit length.
inline const std::array<Vec3, 4>& crystal_axes() {
  static const std::array<Vec3, 4> axes = [] {
    const double s = 1.0 / std::sqrt(3.0);
    return std::array<Vec3, 4>{Vec3(s, s, s), Vec3(s, -s, -s), Vec3(-s, s, -s), Vec3(-s, -s, s)};
  }();
  return axes;
}

struct SpinSite {
  int id = 0;
  Vec3 position = Vec3::Zero();  // nm
  Species species = Species::P1;
  int subgroup = 0;
  int axis = 0;           // index into crystal_axes()
  double detuning = 0.0;  // MHz, quenched

  /// Sites in the same resonance group interact through the full secular Hamiltonian.
  bool same_group(const SpinSite& o) const {
    return species == o.species && subgroup == o.subgroup && axis == o.axis;
  }
};

enum class Placement { DiamondLattice, UniformContinuum };

/// One defect population: species/subgroup at a concentration with an axis distribution.
struct Population {
  Species species = Species::P1;
  int subgroup = 0;
  double ppm = 0.0;
  std::array<double, 4> axis_weights{1.0, 1.0, 1.0, 1.0};
};

struct EnsembleSpec {
  double box_length = 100.0;  // nm
  std::vector<Population> populations;
  Placement placement = Placement::UniformContinuum;
  double lattice_constant = constants::kDiamondLattice;
  double exclusion_radius = 1.0;  // nm
  double disorder_sigma = 0.0;    // W, MHz
  Vec3 field_axis = Vec3(1.0, 1.0, 1.0).normalized();
  std::uint64_t seed = 0;
  /// When set, the first site of this population is pinned at the box center (source spin).
  std::optional<std::size_t> central_population;

  double volume() const { return box_length * box_length * box_length; }

  void validate() const {
    if (!(box_length > 0.0) || !std::isfinite(box_length))
      throw DomainError("box_length must be positive");
    if (!(exclusion_radius >= 0.0)) throw DomainError("exclusion_radius must be >= 0");
    if (!(disorder_sigma >= 0.0)) throw DomainError("disorder_sigma must be >= 0");
    if (!(lattice_constant > 0.0)) throw DomainError("lattice_constant must be positive");
    if (field_axis.norm() == 0.0 || !field_axis.allFinite())
      throw DomainError("field_axis must be a nonzero finite vector");
    for (const auto& p : populations) {
      if (!(p.ppm >= 0.0) || !std::isfinite(p.ppm))
        throw DomainError("population density must be >= 0 ppm");
      double wsum = 0.0;
      for (double w : p.axis_weights) {
        if (w < 0.0) throw DomainError("axis weights must be >= 0");
        wsum += w;
      }
      if (wsum <= 0.0) throw DomainError("axis weights must not all be zero");
    }
    if (central_population && *central_population >= populations.size())
      throw DomainError("central_population index out of range");
  }
};

/// ppm -> number density in nm^-3.
inline double ppm_to_density(double ppm) {
  if (!(ppm >= 0.0)) throw DomainError("concentration must be >= 0 ppm");
  return ppm * constants::kDensityPerPpm;
}

/// Mean inter-spin spacing n^{-1/3}, nm.
inline double mean_spacing(double ppm) {
  const double n = ppm_to_density(ppm);
  if (n == 0.0) throw DomainError("mean spacing undefined at zero density");
  return std::cbrt(1.0 / n);
}

/// Box edge that holds `count` spins at the given concentration.
inline double box_length_for(std::size_t count, double ppm) {
  const double n = ppm_to_density(ppm);
  if (n == 0.0) throw DomainError("box length undefined at zero density");
  return std::cbrt(static_cast<double>(count) / n);
}

inline std::size_t expected_count(const Population& p, double volume) {
  return static_cast<std::size_t>(std::llround(ppm_to_density(p.ppm) * volume));
}

struct SpinNetwork {
  std::vector<SpinSite> sites;
  EnsembleSpec spec;

  Vec3 center() const { return Vec3::Constant(spec.box_length / 2.0); }

  std::size_t count(Species s) const {
    std::size_t n = 0;
    for (const auto& site : sites) n += site.species == s;
    return n;
  }
  std::vector<std::size_t> indices_of(Species s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < sites.size(); ++i)
      if (sites[i].species == s) out.push_back(i);
    return out;
  }
  double min_pair_distance() const {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sites.size(); ++i)
      for (std::size_t j = i + 1; j < sites.size(); ++j)
        best = std::min(best, (sites[i].position - sites[j].position).norm());
    return best;
  }
};

namespace detail {

// Uniform hash grid for exclusion-radius queries.
class ExclusionGrid {
 public:
  ExclusionGrid(double radius, double box) : radius_(radius) {
    cell_ = radius > 0.0 ? radius : box;
  }
  bool admissible(const Vec3& p, const std::vector<SpinSite>& sites) const {
    if (radius_ <= 0.0) return true;
    const auto c = cell_of(p);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find(key(c[0] + dx, c[1] + dy, c[2] + dz));
          if (it == cells_.end()) continue;
          for (std::size_t idx : it->second)
            if ((sites[idx].position - p).norm() < radius_) return false;
        }
    return true;
  }
  void insert(const Vec3& p, std::size_t idx) {
    const auto c = cell_of(p);
    cells_[key(c[0], c[1], c[2])].push_back(idx);
  }

 private:
  std::array<std::int64_t, 3> cell_of(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)),
            static_cast<std::int64_t>(std::floor(p.y() / cell_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }
  static std::uint64_t key(std::int64_t x, std::int64_t y, std::int64_t z) {
    return mix64(static_cast<std::uint64_t>(x) * 0x9e3779b1ULL ^
                 static_cast<std::uint64_t>(y) * 0x85ebca77ULL ^
                 static_cast<std::uint64_t>(z) * 0xc2b2ae3dULL);
  }
  double radius_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

// fcc basis plus the (1/4,1/4,1/4) offset, in units of the lattice constant.
inline const std::array<Vec3, 8>& diamond_basis() {
  static const std::array<Vec3, 8> basis{
      Vec3(0, 0, 0),          Vec3(0, 0.5, 0.5),      Vec3(0.5, 0, 0.5),
      Vec3(0.5, 0.5, 0),      Vec3(0.25, 0.25, 0.25), Vec3(0.25, 0.75, 0.75),
      Vec3(0.75, 0.25, 0.75), Vec3(0.75, 0.75, 0.25)};
  return basis;
}

}  // namespace detail

/// Resamples each site's detuning from Normal(0, W^2). Detunings are quenched: they are drawn
/// once per realization and never change afterwards.
inline SpinNetwork assign_detunings(SpinNetwork net, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw DomainError("disorder sigma W must be >= 0");
  net.spec.disorder_sigma = sigma;
  if (sigma == 0.0) {
    for (auto& s : net.sites) s.detuning = 0.0;
    return net;
  }
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (auto& s : net.sites) s.detuning = normal(rng);
  return net;
}

/// Places every population of `spec` in the box. Sites closer than the exclusion radius to an
/// existing site are redrawn; the total number of redraws is capped at 100x the site count.
inline SpinNetwork generate_network(const EnsembleSpec& spec) {
  spec.validate();
  SpinNetwork net;
  net.spec = spec;
  Rng rng = make_rng(derive_seed(spec.seed, "positions"));

  const double L = spec.box_length;
  std::size_t total = 0;
  std::vector<std::size_t> counts;
  for (std::size_t k = 0; k < spec.populations.size(); ++k) {
    std::size_t c = expected_count(spec.populations[k], spec.volume());
    if (spec.central_population == k && c == 0) c = 1;
    counts.push_back(c);
    total += c;
  }
  net.sites.reserve(total);

  const std::size_t budget = 100 * std::max<std::size_t>(total, 1);
  std::size_t retries = 0;
  detail::ExclusionGrid grid(spec.exclusion_radius, L);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto cells_per_side =
      static_cast<std::int64_t>(std::floor(L / spec.lattice_constant));
  if (spec.placement == Placement::DiamondLattice && cells_per_side < 1)
    throw DomainError("box smaller than one diamond unit cell");
  std::uniform_int_distribution<std::int64_t> cell_pick(0, std::max<std::int64_t>(cells_per_side - 1, 0));
  std::uniform_int_distribution<int> basis_pick(0, 7);
  std::unordered_set<std::uint64_t> occupied;

  auto draw_position = [&]() -> std::pair<Vec3, std::uint64_t> {
    if (spec.placement == Placement::UniformContinuum)
      return {Vec3(unit(rng) * L, unit(rng) * L, unit(rng) * L), 0};
    const std::int64_t ix = cell_pick(rng), iy = cell_pick(rng), iz = cell_pick(rng);
    const int b = basis_pick(rng);
    const Vec3 p = spec.lattice_constant *
                   (Vec3(double(ix), double(iy), double(iz)) + detail::diamond_basis()[b]);
    const std::uint64_t key =
        ((static_cast<std::uint64_t>(ix) * static_cast<std::uint64_t>(cells_per_side) +
          static_cast<std::uint64_t>(iy)) *
             static_cast<std::uint64_t>(cells_per_side) +
         static_cast<std::uint64_t>(iz)) * 8 + static_cast<std::uint64_t>(b);
    return {p, key};
  };

  auto place = [&](const Vec3& p, const Population& pop, int axis) {
    SpinSite s;
    s.id = static_cast<int>(net.sites.size());
    s.position = p;
    s.species = pop.species;
    s.subgroup = pop.subgroup;
    s.axis = axis;
    grid.insert(p, net.sites.size());
    net.sites.push_back(s);
  };

  for (std::size_t k = 0; k < spec.populations.size(); ++k) {
    const Population& pop = spec.populations[k];
    std::discrete_distribution<int> axis_pick(pop.axis_weights.begin(), pop.axis_weights.end());
    std::size_t remaining = counts[k];
    if (spec.central_population == k && remaining > 0) {
      Vec3 c = Vec3::Constant(L / 2.0);
      if (spec.placement == Placement::DiamondLattice)
        c = spec.lattice_constant * (c / spec.lattice_constant).array().floor().matrix();
      if (!grid.admissible(c, net.sites))
        throw GenerationError("central site violates the exclusion radius");
      place(c, pop, axis_pick(rng));
      --remaining;
    }
    while (remaining > 0) {
      auto [p, key] = draw_position();
      const bool taken = spec.placement == Placement::DiamondLattice && occupied.contains(key);
      if (taken || !grid.admissible(p, net.sites)) {
        if (++retries > budget)
          throw GenerationError("could not satisfy exclusion radius " +
                                std::to_string(spec.exclusion_radius) +
                                " nm: retry budget of " + std::to_string(budget) +
                                " redraws exhausted");
        continue;
      }
      if (spec.placement == Placement::DiamondLattice) occupied.insert(key);
      place(p, pop, axis_pick(rng));
      --remaining;
    }
  }

  if (spec.disorder_sigma > 0.0)
    net = assign_detunings(std::move(net), spec.disorder_sigma,
                           derive_seed(spec.seed, "detunings"));
  return net;
}

struct NeighborStats {
  double d_nn = 0.0;            // nm
  double fraction_within = 0.0; // probability of >= 1 neighbor inside the radius
};

/// Closed-form Poisson nearest-neighbor statistics for a uniform density.
inline NeighborStats nearest_neighbor_stats(double ppm, double radius) {
  if (!(radius >= 0.0)) throw DomainError("radius must be >= 0");
  const double n = ppm_to_density(ppm);
  if (n == 0.0) throw DomainError("nearest-neighbor distance undefined at zero density");
  NeighborStats out;
  // Gamma(4/3) (3 / 4 pi)^{1/3} = 0.55396...
  out.d_nn = std::tgamma(4.0 / 3.0) * std::cbrt(3.0 / (4.0 * std::numbers::pi * n));
  out.fraction_within = -std::expm1(-(4.0 / 3.0) * std::numbers::pi * radius * radius * radius * n);
  return out;
}

struct EmpiricalNeighborStats {
  double d_nn = 0.0;
  double fraction_within = 0.0;
  std::size_t samples = 0;
};

/// Nearest-neighbor statistics measured on generated networks. Only sites at least `margin`
/// from every wall are used as probes, which removes the open-boundary bias.
inline EmpiricalNeighborStats empirical_neighbor_stats(const std::vector<SpinNetwork>& nets,
                                                       Species species, double radius,
                                                       double margin) {
  EmpiricalNeighborStats out;
  double dsum = 0.0;
  std::size_t within = 0;
  for (const auto& net : nets) {
    const auto idx = net.indices_of(species);
    const double L = net.spec.box_length;
    for (std::size_t a : idx) {
      const Vec3& p = net.sites[a].position;
      if ((p.array() < margin).any() || (p.array() > L - margin).any()) continue;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t b : idx)
        if (b != a) best = std::min(best, (net.sites[b].position - p).norm());
      if (!std::isfinite(best)) continue;
      dsum += best;
      within += best <= radius;
      ++out.samples;
    }
  }
  if (out.samples > 0) {
    out.d_nn = dsum / static_cast<double>(out.samples);
    out.fraction_within = static_cast<double>(within) / static_cast<double>(out.samples);
  }
  return out;
}

// ---------------------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const Population& p) {
  j = {{"species", to_string(p.species)},
       {"subgroup", p.subgroup},
       {"ppm", p.ppm},
       {"axis_weights", p.axis_weights}};
}

inline void from_json(const nlohmann::json& j, Population& p) {
  p.species = species_from_string(j.at("species").get<std::string>());
  p.subgroup = j.value("subgroup", 0);
  p.ppm = j.at("ppm").get<double>();
  if (j.contains("axis_weights")) p.axis_weights = j.at("axis_weights").get<std::array<double, 4>>();
}

inline void to_json(nlohmann::json& j, const EnsembleSpec& s) {
  j = {{"box_length_nm", s.box_length},
       {"populations", s.populations},
       {"placement", s.placement == Placement::DiamondLattice ? "diamond_lattice" : "uniform"},
       {"lattice_constant_nm", s.lattice_constant},
       {"exclusion_radius_nm", s.exclusion_radius},
       {"disorder_sigma_MHz", s.disorder_sigma},
       {"field_axis", {s.field_axis.x(), s.field_axis.y(), s.field_axis.z()}},
       {"seed", s.seed}};
  if (s.central_population) j["central_population"] = *s.central_population;
}

inline void from_json(const nlohmann::json& j, EnsembleSpec& s) {
  s.box_length = j.at("box_length_nm").get<double>();
  s.populations = j.at("populations").get<std::vector<Population>>();
  const std::string placement = j.value("placement", std::string("uniform"));
  if (placement == "diamond_lattice") {
    s.placement = Placement::DiamondLattice;
  } else if (placement == "uniform") {
    s.placement = Placement::UniformContinuum;
  } else {
    throw ConfigError("unknown placement '" + placement + "'");
  }
  s.lattice_constant = j.value("lattice_constant_nm", constants::kDiamondLattice);
  s.exclusion_radius = j.value("exclusion_radius_nm", 1.0);
  s.disorder_sigma = j.value("disorder_sigma_MHz", 0.0);
  if (j.contains("field_axis")) {
    const auto a = j.at("field_axis").get<std::array<double, 3>>();
    s.field_axis = Vec3(a[0], a[1], a[2]);
  }
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("central_population"))
    s.central_population = j.at("central_population").get<std::size_t>();
  else
    s.central_population.reset();
}

inline void to_json(nlohmann::json& j, const SpinSite& s) {
  j = {{"id", s.id},
       {"xyz_nm", {s.position.x(), s.position.y(), s.position.z()}},
       {"species", to_string(s.species)},
       {"subgroup", s.subgroup},
       {"axis", s.axis},
       {"detuning_MHz", s.detuning}};
}

inline void from_json(const nlohmann::json& j, SpinSite& s) {
  s.id = j.at("id").get<int>();
  const auto p = j.at("xyz_nm").get<std::array<double, 3>>();
  s.position = Vec3(p[0], p[1], p[2]);
  s.species = species_from_string(j.at("species").get<std::string>());
  s.subgroup = j.at("subgroup").get<int>();
  s.axis = j.at("axis").get<int>();
  if (s.axis < 0 || s.axis > 3) throw ConfigError("axis index must be in 0..3");
  s.detuning = j.at("detuning_MHz").get<double>();
}

inline void to_json(nlohmann::json& j, const SpinNetwork& n) {
  j = {{"spec", n.spec}, {"sites", n.sites}};
}

inline void from_json(const nlohmann::json& j, SpinNetwork& n) {
  n.spec = j.at("spec").get<EnsembleSpec>();
  n.sites = j.at("sites").get<std::vector<SpinSite>>();
}

}  // namespace spinnet

#endif  // SPINNET_NETWORK_HPP
