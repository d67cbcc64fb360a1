#ifndef SPINNET_SPINOPS_HPP
#define SPINNET_SPINOPS_HPP

// Dipolar couplings and dense cluster Hamiltonians on a tensor product of effective
// spin-1/2 sites. Basis ordering follows the Kronecker product: site 0 is the most
// significant bit, bit value 0 is spin up (m = +1/2).

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "spinnet/constants.hpp"
#include "spinnet/errors.hpp"
#include "spinnet/network.hpp"

namespace spinnet {

using cplx = std::complex<double>;
using Mat2 = Eigen::Matrix2cd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

inline constexpr std::size_t kMaxClusterSites = 12;  // 2^12 = 4096 dimensional cap

namespace pauli {

inline Mat2 sx() { Mat2 m; m << 0, 0.5, 0.5, 0; return m; }
inline Mat2 sy() { Mat2 m; m << 0, cplx(0, -0.5), cplx(0, 0.5), 0; return m; }
inline Mat2 sz() { Mat2 m; m << 0.5, 0, 0, -0.5; return m; }
inline Mat2 sp() { Mat2 m; m << 0, 1, 0, 0; return m; }
inline Mat2 sm() { Mat2 m; m << 0, 0, 1, 0; return m; }
/// Tilted-frame ladder operators S~+- = S^y +- i S^z.
inline Mat2 tilted_p() { return sy() + cplx(0, 1) * sz(); }
inline Mat2 tilted_m() { return sy() - cplx(0, 1) * sz(); }
inline Mat2 identity() { return Mat2::Identity(); }

}  // namespace pauli

/// J0 (1 - 3 cos^2 theta) / r^3 with theta between r and the quantization axis. MHz.
inline double dipolar_coupling(const Vec3& r, const Vec3& quant_axis) {
  const double dist = r.norm();
  if (!(dist > 0.0)) throw DomainError("dipolar coupling is singular at zero separation");
  const double cos_t = r.dot(quant_axis) / (dist * quant_axis.norm());
  return constants::kDipolarJ0 * (1.0 - 3.0 * cos_t * cos_t) / (dist * dist * dist);
}

/// Effective spin-1/2 NV operators carry a sqrt(2) factor per NV participant.
inline double nv_scaling(double J, Species a, Species b) {
  double f = 1.0;
  if (a == Species::NV) f *= std::sqrt(2.0);
  if (b == Species::NV) f *= std::sqrt(2.0);
  return J * f;
}

/// Omega_eff = sqrt(Omega^2 + delta^2).
inline double effective_rabi(double omega, double delta) { return std::hypot(omega, delta); }

/// sin(theta) = Omega / Omega_eff, the transverse projection of a detuned spin-lock axis.
inline double tilt_projection(double omega, double delta) {
  if (!(omega > 0.0)) throw DomainError("tilt projection needs a positive Rabi frequency");
  return omega / effective_rabi(omega, delta);
}

/// Residual disorder in the dressed frame, W^2 / (2 Omega).
inline double effective_disorder(double W, double omega) {
  if (!(omega > 0.0)) throw DomainError("effective disorder needs a positive Rabi frequency");
  return W * W / (2.0 * omega);
}

struct Coupling {
  std::size_t i = 0;
  std::size_t j = 0;
  double J = 0.0;  // raw J_ij in MHz, before NV scaling
};

/// All pairwise raw couplings of a cluster with respect to the field axis.
inline std::vector<Coupling> pair_couplings(std::span<const SpinSite> sites, const Vec3& field_axis) {
  std::vector<Coupling> out;
  for (std::size_t i = 0; i < sites.size(); ++i)
    for (std::size_t j = i + 1; j < sites.size(); ++j)
      out.push_back({i, j, dipolar_coupling(sites[j].position - sites[i].position, field_axis)});
  return out;
}

enum class Frame { LabSecular, Dressed };

inline std::string_view to_string(Frame f) { return f == Frame::LabSecular ? "lab_secular" : "dressed"; }

struct ClusterHamiltonian {
  CMatrix matrix;  // MHz
  Frame frame = Frame::LabSecular;
  std::vector<SpinSite> sites;

  std::size_t num_sites() const { return sites.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(matrix.rows()); }

  ClusterHamiltonian& operator+=(const ClusterHamiltonian& other) {
    if (other.frame != frame) throw MisuseError("cannot add Hamiltonians in different frames");
    if (other.matrix.rows() != matrix.rows()) throw MisuseError("Hamiltonian dimension mismatch");
    matrix += other.matrix;
    return *this;
  }
  friend ClusterHamiltonian operator+(ClusterHamiltonian a, const ClusterHamiltonian& b) {
    a += b;
    return a;
  }

  double hermiticity_defect() const {
    const double scale = std::max(1.0, matrix.norm());
    return (matrix - matrix.adjoint()).norm() / scale;
  }
  bool is_hermitian(double tol = 1e-12) const { return hermiticity_defect() <= tol; }
};

/// Embedding of single-site operators into the 2^N cluster space.
class SpinOperatorSet {
 public:
  explicit SpinOperatorSet(std::size_t num_sites) : n_(num_sites) {
    if (num_sites == 0 || num_sites > kMaxClusterSites)
      throw MisuseError("cluster size must be in 1.." + std::to_string(kMaxClusterSites));
  }

  std::size_t num_sites() const { return n_; }
  std::size_t dim() const { return std::size_t{1} << n_; }

  CMatrix embed(std::size_t site, const Mat2& op) const {
    CMatrix out = CMatrix::Zero(dim(), dim());
    add_local(out, site, op, 1.0);
    return out;
  }
  CMatrix sx(std::size_t i) const { return embed(i, pauli::sx()); }
  CMatrix sy(std::size_t i) const { return embed(i, pauli::sy()); }
  CMatrix sz(std::size_t i) const { return embed(i, pauli::sz()); }
  CMatrix sp(std::size_t i) const { return embed(i, pauli::sp()); }
  CMatrix sm(std::size_t i) const { return embed(i, pauli::sm()); }
  CMatrix tilted_p(std::size_t i) const { return embed(i, pauli::tilted_p()); }
  CMatrix tilted_m(std::size_t i) const { return embed(i, pauli::tilted_m()); }

  CMatrix total(const Mat2& op) const {
    CMatrix out = CMatrix::Zero(dim(), dim());
    for (std::size_t i = 0; i < n_; ++i) add_local(out, i, op, 1.0);
    return out;
  }

  /// out += c * op_site
  void add_local(CMatrix& out, std::size_t site, const Mat2& op, cplx c) const {
    check_site(site);
    const std::size_t shift = n_ - 1 - site;
    for (std::size_t k = 0; k < dim(); ++k) {
      const std::size_t b = (k >> shift) & 1U;
      for (std::size_t o = 0; o < 2; ++o) {
        const cplx a = op(o, b);
        if (a == cplx(0.0)) continue;
        const std::size_t row = (k & ~(std::size_t{1} << shift)) | (o << shift);
        out(row, k) += c * a;
      }
    }
  }

  /// out += c * (A_i B_j), i != j
  void add_bilinear(CMatrix& out, std::size_t i, const Mat2& A, std::size_t j, const Mat2& B,
                    cplx c) const {
    check_site(i);
    check_site(j);
    if (i == j) throw MisuseError("bilinear term needs two distinct sites");
    const std::size_t si = n_ - 1 - i, sj = n_ - 1 - j;
    const std::size_t mask = ~((std::size_t{1} << si) | (std::size_t{1} << sj));
    for (std::size_t k = 0; k < dim(); ++k) {
      const std::size_t bi = (k >> si) & 1U, bj = (k >> sj) & 1U;
      for (std::size_t oi = 0; oi < 2; ++oi) {
        const cplx a = A(oi, bi);
        if (a == cplx(0.0)) continue;
        for (std::size_t oj = 0; oj < 2; ++oj) {
          const cplx b = B(oj, bj);
          if (b == cplx(0.0)) continue;
          const std::size_t row = (k & mask) | (oi << si) | (oj << sj);
          out(row, k) += c * a * b;
        }
      }
    }
  }

  /// Applies a single-site 2x2 operator to a state vector in place.
  void apply_local(CVector& state, std::size_t site, const Mat2& op) const {
    check_site(site);
    const std::size_t shift = n_ - 1 - site;
    const std::size_t bit = std::size_t{1} << shift;
    for (std::size_t k = 0; k < dim(); ++k) {
      if (k & bit) continue;
      const cplx up = state[k], dn = state[k | bit];
      state[k] = op(0, 0) * up + op(0, 1) * dn;
      state[k | bit] = op(1, 0) * up + op(1, 1) * dn;
    }
  }

  /// <psi| op_site |psi>
  cplx expect_local(const CVector& state, std::size_t site, const Mat2& op) const {
    CVector tmp = state;
    apply_local(tmp, site, op);
    return state.dot(tmp);
  }

 private:
  void check_site(std::size_t i) const {
    if (i >= n_) throw MisuseError("site index out of range");
  }
  std::size_t n_;
};

namespace detail {

inline ClusterHamiltonian empty_hamiltonian(std::span<const SpinSite> sites, Frame frame) {
  SpinOperatorSet ops(sites.size());
  ClusterHamiltonian h;
  h.frame = frame;
  h.sites.assign(sites.begin(), sites.end());
  h.matrix = CMatrix::Zero(ops.dim(), ops.dim());
  return h;
}

inline void check_pair(std::span<const SpinSite> sites, const Coupling& c) {
  if (c.i >= sites.size() || c.j >= sites.size() || c.i == c.j)
    throw MisuseError("coupling refers to an invalid site pair");
}

enum class PairClass { Intra, Inter };

inline void require_class(std::span<const SpinSite> sites, const Coupling& c, PairClass want) {
  check_pair(sites, c);
  const bool same = sites[c.i].same_group(sites[c.j]);
  if (want == PairClass::Intra && !same)
    throw MisuseError("intra-group Hamiltonian given a heterogeneous pair (" +
                      std::to_string(c.i) + ", " + std::to_string(c.j) + ")");
  if (want == PairClass::Inter && same)
    throw MisuseError("inter-group Hamiltonian given a same-group pair (" +
                      std::to_string(c.i) + ", " + std::to_string(c.j) + ")");
}

inline double scaled(std::span<const SpinSite> sites, const Coupling& c) {
  return nv_scaling(c.J, sites[c.i].species, sites[c.j].species);
}

inline void add_flip_flop(const SpinOperatorSet& ops, CMatrix& m, std::size_t i, std::size_t j,
                          double coeff) {
  ops.add_bilinear(m, i, pauli::sp(), j, pauli::sm(), coeff);
  ops.add_bilinear(m, i, pauli::sm(), j, pauli::sp(), coeff);
}

inline void add_tilted_flip_flop(const SpinOperatorSet& ops, CMatrix& m, std::size_t i,
                                 std::size_t j, double coeff) {
  ops.add_bilinear(m, i, pauli::tilted_p(), j, pauli::tilted_m(), coeff);
  ops.add_bilinear(m, i, pauli::tilted_m(), j, pauli::tilted_p(), coeff);
}

}  // namespace detail

/// Same-group secular dipolar Hamiltonian:
///   sum -(J/4)(S+S- + S-S+) + J SzSz,  J = J0 (1 - 3cos^2) / r^3 (NV-scaled).
inline ClusterHamiltonian build_secular_intra(std::span<const SpinSite> sites,
                                              std::span<const Coupling> couplings) {
  auto h = detail::empty_hamiltonian(sites, Frame::LabSecular);
  SpinOperatorSet ops(sites.size());
  for (const auto& c : couplings) {
    detail::require_class(sites, c, detail::PairClass::Intra);
    const double J = detail::scaled(sites, c);
    detail::add_flip_flop(ops, h.matrix, c.i, c.j, -J / 4.0);
    ops.add_bilinear(h.matrix, c.i, pauli::sz(), c.j, pauli::sz(), J);
  }
  return h;
}

/// Heterogeneous pairs keep only the Ising part: sum J SzSz.
inline ClusterHamiltonian build_ising_inter(std::span<const SpinSite> sites,
                                            std::span<const Coupling> couplings) {
  auto h = detail::empty_hamiltonian(sites, Frame::LabSecular);
  SpinOperatorSet ops(sites.size());
  for (const auto& c : couplings) {
    detail::require_class(sites, c, detail::PairClass::Inter);
    ops.add_bilinear(h.matrix, c.i, pauli::sz(), c.j, pauli::sz(), detail::scaled(sites, c));
  }
  return h;
}

/// Dressed-frame same-group Hamiltonian: sum (J/8)(S~+S~- + S~-S~+) - (J/2) SxSx.
inline ClusterHamiltonian build_dressed_intra(std::span<const SpinSite> sites,
                                              std::span<const Coupling> couplings) {
  auto h = detail::empty_hamiltonian(sites, Frame::Dressed);
  SpinOperatorSet ops(sites.size());
  for (const auto& c : couplings) {
    detail::require_class(sites, c, detail::PairClass::Intra);
    const double J = detail::scaled(sites, c);
    detail::add_tilted_flip_flop(ops, h.matrix, c.i, c.j, J / 8.0);
    ops.add_bilinear(h.matrix, c.i, pauli::sx(), c.j, pauli::sx(), -J / 2.0);
  }
  return h;
}

/// Dressed-frame heterogeneous pairs at the Hartmann-Hahn condition: sum (J/4)(S~+S~- + S~-S~+).
inline ClusterHamiltonian build_dressed_inter(std::span<const SpinSite> sites,
                                              std::span<const Coupling> couplings) {
  auto h = detail::empty_hamiltonian(sites, Frame::Dressed);
  SpinOperatorSet ops(sites.size());
  for (const auto& c : couplings) {
    detail::require_class(sites, c, detail::PairClass::Inter);
    detail::add_tilted_flip_flop(ops, h.matrix, c.i, c.j, detail::scaled(sites, c) / 4.0);
  }
  return h;
}

namespace detail {

inline std::pair<std::vector<Coupling>, std::vector<Coupling>> split_by_class(
    std::span<const SpinSite> sites, std::span<const Coupling> couplings) {
  std::vector<Coupling> intra, inter;
  for (const auto& c : couplings) {
    check_pair(sites, c);
    (sites[c.i].same_group(sites[c.j]) ? intra : inter).push_back(c);
  }
  return {intra, inter};
}

}  // namespace detail

/// Full rotating-frame secular Hamiltonian, pairs classified by resonance group.
inline ClusterHamiltonian build_lab_secular(std::span<const SpinSite> sites,
                                            std::span<const Coupling> couplings) {
  auto [intra, inter] = detail::split_by_class(sites, couplings);
  return build_secular_intra(sites, intra) + build_ising_inter(sites, inter);
}

/// Full dressed-frame Hamiltonian, pairs classified by resonance group.
inline ClusterHamiltonian build_dressed(std::span<const SpinSite> sites,
                                        std::span<const Coupling> couplings) {
  auto [intra, inter] = detail::split_by_class(sites, couplings);
  return build_dressed_intra(sites, intra) + build_dressed_inter(sites, inter);
}

/// Continuous drive sum Omega_i S^x_i in the rotating frame.
inline ClusterHamiltonian build_drive(std::span<const SpinSite> sites, std::span<const double> omega) {
  if (omega.size() != sites.size()) throw MisuseError("one Rabi frequency per site required");
  auto h = detail::empty_hamiltonian(sites, Frame::LabSecular);
  SpinOperatorSet ops(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i)
    if (omega[i] != 0.0) ops.add_local(h.matrix, i, pauli::sx(), omega[i]);
  return h;
}

/// On-site detunings sum delta_i S^z_i in the rotating frame.
inline ClusterHamiltonian build_detunings(std::span<const SpinSite> sites) {
  auto h = detail::empty_hamiltonian(sites, Frame::LabSecular);
  SpinOperatorSet ops(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i)
    if (sites[i].detuning != 0.0) ops.add_local(h.matrix, i, pauli::sz(), sites[i].detuning);
  return h;
}

inline void to_json(nlohmann::json& j, const ClusterHamiltonian& h) {
  nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
  for (Eigen::Index r = 0; r < h.matrix.rows(); ++r) {
    nlohmann::json rr = nlohmann::json::array(), ii = nlohmann::json::array();
    for (Eigen::Index c = 0; c < h.matrix.cols(); ++c) {
      rr.push_back(h.matrix(r, c).real());
      ii.push_back(h.matrix(r, c).imag());
    }
    re.push_back(std::move(rr));
    im.push_back(std::move(ii));
  }
  j = {{"frame", to_string(h.frame)},
       {"dim", h.dim()},
       {"units", "MHz"},
       {"sites", h.sites},
       {"real", std::move(re)},
       {"imag", std::move(im)}};
}

}  // namespace spinnet

#endif  // SPINNET_SPINOPS_HPP
