#pragma once

// Internal units: time in us, length in um, angular frequency in rad/us.
// A cyclic frequency f in MHz corresponds to 2*pi*f rad/us.

#include <numbers>
#include <stdexcept>
#include <string>

namespace rydfock {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kBoltzmann = 1.380649e-23;     // J/K
inline constexpr double kAtomicMassUnit = 1.66053906660e-27;  // kg
inline constexpr double kRb87MassAmu = 86.909180527;

constexpr double mhz_to_angular(double mhz) { return kTwoPi * mhz; }
constexpr double angular_to_mhz(double omega) { return omega / kTwoPi; }

/// Thrown when a problem exceeds a configured size cap.
class ResourceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown by the trajectory integrator when a single step loses too much norm.
class StepSizeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace rydfock
