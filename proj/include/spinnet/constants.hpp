#ifndef SPINNET_CONSTANTS_HPP
#define SPINNET_CONSTANTS_HPP

#include <numbers>

namespace spinnet {

// Unit system: frequencies in MHz (cyclic), times in microseconds, lengths in nm,
// magnetic fields in gauss. Angular factors enter only through kTwoPi below.
namespace constants {

/// Dipolar coupling constant mu0 gamma_e^2 hbar / (4 pi), MHz nm^3.
inline constexpr double kDipolarJ0 = 52.0;
/// Electron gyromagnetic ratio, MHz/G (cyclic).
inline constexpr double kGammaE = 2.8024;
/// NV zero-field splitting, MHz. Informational; the NV is an effective two-level system.
inline constexpr double kNvZeroFieldSplitting = 2870.0;
/// Diamond lattice constant, nm.
inline constexpr double kDiamondLattice = 0.3567;
/// Number density per ppm of defects in diamond, nm^-3.
inline constexpr double kDensityPerPpm = 1.76e-4;

inline constexpr double kHbar = 1.054571817e-34;    // J s
inline constexpr double kBoltzmann = 1.380649e-23;  // J/K
inline constexpr double kMu0 = 1.25663706212e-6;    // N/A^2

/// The single owner of 2 pi: propagators are exp(-i kTwoPi H t) with H in MHz and t in us,
/// golden-rule rates in 1/us are kTwoPi times the cyclic-frequency expression.
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Electron Zeeman angular frequency per gauss, rad/s/G.
inline constexpr double kGammaEAngularPerSecond = kTwoPi * kGammaE * 1e6;

}  // namespace constants
}  // namespace spinnet

#endif  // SPINNET_CONSTANTS_HPP
