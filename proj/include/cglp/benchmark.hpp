#pragma once

// Precision positioning stage model and the two published controllers for it.

#include <numbers>

#include "cglp/lti.hpp"
#include "cglp/reset.hpp"

namespace cglp::benchmark {

inline constexpr double pi = std::numbers::pi;

/// Plant DC gain.
inline constexpr double plant_gain = 1.14;
/// Plant input-output delay [s].
inline constexpr double plant_delay = 0.00014;
/// Target crossover, 100 Hz.
inline constexpr double crossover = 200.0 * pi;
/// Pade corner as printed for the delay approximation (2/delay would be 14285.7).
inline constexpr double printed_pade_corner = 14400.0;

/// Mass-spring-damper fit 1.14 e^{-0.00014 s} / (s^2/7627 + 0.05 s/87.3 + 1).
inline TransferFunction stage_plant() {
    return {Poly{plant_gain}, Poly{1.0 / 7627.0, 0.05 / 87.3, 1.0}, plant_delay};
}

/// Tuned PID + CgLp controller: gain 25.5, gamma 0.3, reset pole 111 pi.
inline CgLpPidParams cglp_controller() {
    CgLpPidParams p;
    p.kp = 25.5;
    p.omega_i = 20.0 * pi;
    p.omega_r = 105.2 * pi;
    p.alpha = 105.2 / 111.0;
    p.omega_f = 1600.0 * pi;
    p.omega_d = 105.2 * pi;
    p.omega_t = 260.0 * pi;
    p.gamma = 0.3;
    return p;
}

/// Reference PID expressed in the same structure with gamma = 1 and alpha = 1, so the reset
/// filter cancels the CgLp lead zero and only the 1/(s/omega_f + 1) low-pass remains.
inline CgLpPidParams pid_controller() {
    CgLpPidParams p;
    p.kp = 18.46;
    p.omega_i = 20.0 * pi;
    p.omega_r = 100.0 * pi;
    p.alpha = 1.0;
    p.omega_f = 1600.0 * pi;
    p.omega_d = 77.0 * pi;
    p.omega_t = 520.0 * pi;
    p.gamma = 1.0;
    return p;
}

/// The PID written directly as its four linear factors.
inline TransferFunction pid_transfer_function() {
    return series_connect({TransferFunction::gain(18.46), factors::low_pass(1600.0 * pi),
                           factors::lead_lag(77.0 * pi, 520.0 * pi), factors::pi_factor(20.0 * pi)});
}

}  // namespace cglp::benchmark
