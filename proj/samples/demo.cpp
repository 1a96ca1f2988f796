// Walks the published precision-stage loop through stability, pseudo-sensitivity and a step.
#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cglp/benchmark.hpp"
#include "cglp/hbeta.hpp"
#include "cglp/hybrid_sim.hpp"

using namespace cglp;

int main() {
    const auto plant = benchmark::stage_plant();
    const auto params = benchmark::cglp_controller();

    const auto grid = hbeta_grid(benchmark::crossover);
    const auto v = hbeta_verdict(frequency_response(with_pade(plant), grid), params, grid);
    std::printf("H-beta: %s (theta1 %.4f, theta2 %.4f, margin %.4f rad, checked on grid)\n",
                v.passes ? "pass" : "fail", v.theta_1, v.theta_2, v.margin);

    const auto sys = make_closed_loop(plant, params);
    const double hz = 2.0 * benchmark::pi;
    std::printf("\n%8s %10s %10s %8s\n", "f [Hz]", "|S_DF| dB", "|S_inf| dB", "periods");
    for (double f : {1.0, 10.0, 50.0, 100.0, 300.0}) {
        const auto p = pseudo_sensitivity(sys, f * hz, SensitivityKind::S, 1.0);
        const double df = 20.0 * std::log10(std::abs(df_prediction(sys, SensitivityKind::S, f * hz)));
        std::printf("%8.1f %10.3f %10.3f %8d%s\n", f, df, p.magnitude_db(), p.periods, p.converged ? "" : " *");
    }

    const double r = 10e-6;
    const auto traj = simulate(sys, {Signal::step(r), {}, {}}, SimConfig{}, 0.05);
    double peak = 0.0;
    for (double y : traj.y) peak = std::max(peak, y);
    std::printf("\nstep 10 um: overshoot %.1f %%, %zu resets in 50 ms\n", 100.0 * (peak - r) / r,
                traj.reset_instants.size());
}
