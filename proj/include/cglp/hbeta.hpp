#pragma once

// H-beta stability check through the Nyquist Stability Vector of the
// base-linear loop.

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "cglp/error.hpp"
#include "cglp/lti.hpp"
#include "cglp/reset.hpp"

namespace cglp {

struct NsvSample {
    double omega{0.0};
    double n_chi{0.0};
    double n_upsilon{0.0};
    double angle{0.0};  // atan2(n_upsilon, n_chi), in (-pi, pi]
};

/// NSV of the base-linear open loop L and reset-element response C_R at one frequency.
///
/// n_chi = |L + 1/2|^2 - 1/4 = Re(L conj(1 + L)), and n_upsilon = Re(C_R conj(1 + L)),
/// which together are the real part of (beta L + C_R) conj(1 + L) split by beta.
inline NsvSample nsv_sample(Complex loop, Complex reset_response, double omega) {
    require(std::isfinite(loop.real()) && std::isfinite(loop.imag()), "L must be finite");
    require(std::isfinite(reset_response.real()) && std::isfinite(reset_response.imag()),
            "C_R must be finite");
    NsvSample s;
    s.omega = omega;
    s.n_chi = std::norm(loop + 0.5) - 0.25;
    s.n_upsilon = (std::conj(loop) * reset_response).real() + reset_response.real();
    s.angle = std::atan2(s.n_upsilon, s.n_chi);
    return s;
}

struct StabilityVerdict {
    bool passes{false};
    double theta_1{0.0};
    double theta_2{0.0};
    std::pair<double, double> witness_frequencies{0.0, 0.0};
    /// Smallest distance to the bounds theta_1 > -pi/2, theta_2 < pi, theta_2 - theta_1 < pi; negative if violated.
    double margin{0.0};
    std::size_t samples{0};
};

inline StabilityVerdict verdict_from_samples(std::span<const NsvSample> samples) {
    require(!samples.empty(), "H-beta verdict needs at least one frequency");
    StabilityVerdict v;
    v.theta_1 = samples.front().angle;
    v.theta_2 = samples.front().angle;
    v.witness_frequencies = {samples.front().omega, samples.front().omega};
    for (const auto& s : samples) {
        if (s.angle < v.theta_1) {
            v.theta_1 = s.angle;
            v.witness_frequencies.first = s.omega;
        }
        if (s.angle > v.theta_2) {
            v.theta_2 = s.angle;
            v.witness_frequencies.second = s.omega;
        }
    }
    constexpr double pi = std::numbers::pi;
    v.margin = std::min({v.theta_1 + pi / 2.0, pi - v.theta_2, pi - (v.theta_2 - v.theta_1)});
    v.passes = (-pi / 2.0 < v.theta_1 && v.theta_1 < pi) && (-pi / 2.0 < v.theta_2 && v.theta_2 < pi) &&
               (v.theta_2 - v.theta_1 < pi);
    v.samples = samples.size();
    return v;
}

/// Verdict from explicit base-linear loop and reset-element responses on a grid.
inline StabilityVerdict hbeta_verdict(std::span<const Complex> loop, std::span<const Complex> reset_response,
                                      const FrequencyGrid& grid) {
    require(loop.size() == grid.size() && reset_response.size() == grid.size(),
            "loop and reset responses must align with the grid");
    std::vector<NsvSample> samples;
    samples.reserve(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) samples.push_back(nsv_sample(loop[k], reset_response[k], grid[k]));
    return verdict_from_samples(samples);
}

/// Verdict for the PID + CgLp structure closing a loop around the given plant response.
inline StabilityVerdict hbeta_verdict(std::span<const Complex> plant_frf, const CgLpPidParams& params,
                                      const FrequencyGrid& grid) {
    if (!(params.gamma > -1.0 && params.gamma <= 1.0))
        fail(ErrorKind::Precondition, "H-beta theorem requires -1 < gamma <= 1");
    require(plant_frf.size() == grid.size(), "plant response must align with the grid");
    const auto controller = assemble_controller(params);
    std::vector<Complex> loop;
    std::vector<Complex> reset;
    loop.reserve(grid.size());
    reset.reserve(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        loop.push_back(controller.base_at(grid[k]) * plant_frf[k]);
        reset.push_back(controller.reset_base.at(grid[k]));
    }
    return hbeta_verdict(loop, reset, grid);
}

/// Default verdict grid: `points` log-spaced frequencies over six decades centred on omega_c.
inline FrequencyGrid hbeta_grid(double omega_c, std::size_t points = 2000) {
    return FrequencyGrid::logarithmic(omega_c * 1e-3, omega_c * 1e3, points);
}

}  // namespace cglp
